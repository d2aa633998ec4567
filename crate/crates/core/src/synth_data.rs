//! Synthetic preference worlds with a known ground-truth reward.
//!
//! The ground truth is `r*(phi) = w · tanh(U phi) + b`. Labels follow the
//! Bradley–Terry law on `r*`, so even clean data carries irreducible label
//! noise. Label reversal adds controlled aleatoric noise; shifted feature
//! boxes give out-of-distribution inputs.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dist_math::sigmoid;
use crate::error::{Error, Result};
use crate::seeding;

pub const DATASET_VERSION: u32 = 1;
/// Hidden width of the ground-truth reward.
pub const TRUE_HIDDEN: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldSpec {
    pub d: usize,
    pub hidden: usize,
    /// `hidden × d`, row-major.
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
    pub center: Vec<f64>,
    pub half_width: Vec<f64>,
    pub seed: u64,
}

impl WorldSpec {
    pub fn true_reward(&self, phi: &[f64]) -> f64 {
        debug_assert_eq!(phi.len(), self.d);
        self.b
            + (0..self.hidden)
                .map(|j| {
                    let row = &self.u[j * self.d..(j + 1) * self.d];
                    self.w[j] * row.iter().zip(phi).map(|(a, x)| a * x).sum::<f64>().tanh()
                })
                .sum::<f64>()
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.hidden < 1 {
            return Err(Error::arg("world dimensions must be positive"));
        }
        if self.u.len() != self.hidden * self.d
            || self.w.len() != self.hidden
            || self.center.len() != self.d
            || self.half_width.len() != self.d
        {
            return Err(Error::arg("world parameter shapes are inconsistent"));
        }
        let finite = self
            .u
            .iter()
            .chain(&self.w)
            .chain(&self.center)
            .chain(std::iter::once(&self.b))
            .all(|v| v.is_finite());
        if !finite || self.half_width.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::arg("world parameters must be finite with positive half-widths"));
        }
        Ok(())
    }
}

pub fn make_world(seed: u64, d: usize) -> Result<WorldSpec> {
    if d < 1 {
        return Err(Error::arg("world dimension must be >= 1"));
    }
    let mut rng = seeding::rng(seed, &[seeding::STREAM_WORLD]);
    let u_dist = Normal::new(0.0, (1.0 / d as f64).sqrt()).expect("valid sd");
    let w_dist = Normal::new(0.0, 1.0).expect("valid sd");
    let u = (0..TRUE_HIDDEN * d).map(|_| u_dist.sample(&mut rng)).collect();
    let w = (0..TRUE_HIDDEN).map(|_| w_dist.sample(&mut rng)).collect();
    Ok(WorldSpec {
        d,
        hidden: TRUE_HIDDEN,
        u,
        w,
        b: 0.0,
        center: vec![0.0; d],
        half_width: vec![1.0; d],
        seed,
    })
}

/// One labeled comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub chosen: Vec<f64>,
    pub rejected: Vec<f64>,
    pub reversed: bool,
}

/// How `sample_pairs` turns reward gaps into labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelMode {
    /// Bernoulli draw with probability `sigmoid(r*(a) - r*(b))`.
    #[default]
    BradleyTerry,
    /// The higher true reward wins; ties go to the first element.
    Deterministic,
}

/// Translation and scaling of the in-domain sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub offset: Vec<f64>,
    pub scale: f64,
}

impl Shift {
    pub fn none(d: usize) -> Self {
        Self {
            offset: vec![0.0; d],
            scale: 1.0,
        }
    }

    /// The same offset on every coordinate.
    pub fn uniform(d: usize, offset: f64, scale: f64) -> Self {
        Self {
            offset: vec![offset; d],
            scale,
        }
    }
}

fn sample_box<R: Rng + ?Sized>(center: &[f64], half: &[f64], rng: &mut R) -> Vec<f64> {
    center
        .iter()
        .zip(half)
        .map(|(c, h)| c + h * (2.0 * rng.random::<f64>() - 1.0))
        .collect()
}

pub fn sample_features<R: Rng + ?Sized>(world: &WorldSpec, n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| sample_box(&world.center, &world.half_width, rng))
        .collect()
}

/// Features drawn uniformly from the world box translated by `shift.offset`
/// and scaled by `shift.scale` about its center.
pub fn sample_shifted_features<R: Rng + ?Sized>(
    world: &WorldSpec,
    shift: &Shift,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let (center, half) = shifted_box(world, shift)?;
    Ok((0..n).map(|_| sample_box(&center, &half, rng)).collect())
}

fn shifted_box(world: &WorldSpec, shift: &Shift) -> Result<(Vec<f64>, Vec<f64>)> {
    if shift.offset.len() != world.d {
        return Err(Error::Shape {
            expected: world.d,
            got: shift.offset.len(),
        });
    }
    if !(shift.scale > 0.0 && shift.scale.is_finite()) {
        return Err(Error::arg(format!("shift scale must be positive, got {}", shift.scale)));
    }
    let center = world.center.iter().zip(&shift.offset).map(|(c, o)| c + o).collect();
    let half = world.half_width.iter().map(|h| h * shift.scale).collect();
    Ok((center, half))
}

pub fn sample_pairs<R: Rng + ?Sized>(
    world: &WorldSpec,
    n: usize,
    rng: &mut R,
) -> Result<Vec<PreferenceRecord>> {
    sample_pairs_with(world, n, LabelMode::BradleyTerry, rng)
}

pub fn sample_pairs_with<R: Rng + ?Sized>(
    world: &WorldSpec,
    n: usize,
    mode: LabelMode,
    rng: &mut R,
) -> Result<Vec<PreferenceRecord>> {
    sample_pairs_in(world, &Shift::none(world.d), n, mode, rng)
}

/// Pairs drawn from the shifted box, labeled by the true reward.
pub fn sample_pairs_in<R: Rng + ?Sized>(
    world: &WorldSpec,
    shift: &Shift,
    n: usize,
    mode: LabelMode,
    rng: &mut R,
) -> Result<Vec<PreferenceRecord>> {
    if n == 0 {
        return Err(Error::arg("sample_pairs needs n >= 1"));
    }
    let (center, half) = shifted_box(world, shift)?;
    Ok((0..n)
        .map(|_| {
            let a = sample_box(&center, &half, rng);
            let b = sample_box(&center, &half, rng);
            let gap = world.true_reward(&a) - world.true_reward(&b);
            let a_wins = match mode {
                LabelMode::BradleyTerry => rng.random::<f64>() < sigmoid(gap),
                LabelMode::Deterministic => gap >= 0.0,
            };
            label(a, b, a_wins)
        })
        .collect())
}

/// Labels explicit feature pairs by the Bradley–Terry law on `reward`.
pub fn label_pairs<R, F>(pairs: Vec<(Vec<f64>, Vec<f64>)>, reward: F, rng: &mut R) -> Vec<PreferenceRecord>
where
    R: Rng + ?Sized,
    F: Fn(&[f64]) -> f64,
{
    pairs
        .into_iter()
        .map(|(a, b)| {
            let gap = reward(&a) - reward(&b);
            let a_wins = rng.random::<f64>() < sigmoid(gap);
            label(a, b, a_wins)
        })
        .collect()
}

fn label(a: Vec<f64>, b: Vec<f64>, a_wins: bool) -> PreferenceRecord {
    let (chosen, rejected) = if a_wins { (a, b) } else { (b, a) };
    PreferenceRecord {
        chosen,
        rejected,
        reversed: false,
    }
}

/// Swaps exactly `round(rho * n)` records chosen uniformly without
/// replacement, toggling their `reversed` flag.
pub fn inject_reversal<R: Rng + ?Sized>(
    mut records: Vec<PreferenceRecord>,
    rho: f64,
    rng: &mut R,
) -> Result<Vec<PreferenceRecord>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::arg(format!("reversal ratio must lie in [0, 1], got {rho}")));
    }
    let n = records.len();
    let flips = (rho * n as f64).round() as usize;
    for i in index::sample(rng, n, flips.min(n)) {
        let r = &mut records[i];
        std::mem::swap(&mut r.chosen, &mut r.rejected);
        r.reversed = !r.reversed;
    }
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub world_seed: u64,
    pub d: usize,
    pub n: usize,
    pub reversal_ratio: f64,
    pub shift: Shift,
}

impl DatasetMeta {
    pub fn new(world: &WorldSpec, n: usize, reversal_ratio: f64, shift: Shift) -> Result<Self> {
        if !(0.0..=1.0).contains(&reversal_ratio) {
            return Err(Error::arg(format!("reversal ratio must lie in [0, 1], got {reversal_ratio}")));
        }
        Ok(Self {
            version: DATASET_VERSION,
            world_seed: world.seed,
            d: world.d,
            n,
            reversal_ratio,
            shift,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: DatasetMeta,
}

pub fn write_dataset<W: Write>(records: &[PreferenceRecord], meta: &DatasetMeta, out: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(format!("write failed: {e}"));
    let mut out = BufWriter::new(out);
    let header = serde_json::to_string(&Header { meta: meta.clone() })
        .map_err(|e| Error::Format(e.to_string()))?;
    out.write_all(header.as_bytes()).map_err(io)?;
    out.write_all(b"\n").map_err(io)?;
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(line.as_bytes()).map_err(io)?;
        out.write_all(b"\n").map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn read_dataset<R: BufRead>(input: R) -> Result<(Vec<PreferenceRecord>, DatasetMeta)> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or(Error::Parse {
        line: 1,
        message: "missing header line".into(),
    })?;
    let first = first.map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let raw: serde_json::Value = serde_json::from_str(&first).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let version = raw
        .get("meta")
        .and_then(|m| m.get("version"))
        .and_then(|v| v.as_u64())
        .ok_or(Error::Parse {
            line: 1,
            message: "header lacks meta.version".into(),
        })?;
    if version != DATASET_VERSION as u64 {
        return Err(Error::Version {
            expected: DATASET_VERSION,
            found: version as u32,
        });
    }
    let meta = serde_json::from_value::<Header>(raw)
        .map_err(|e| Error::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .meta;
    let mut records = Vec::with_capacity(meta.n);
    for (i, line) in lines {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let rec: PreferenceRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        if rec.chosen.len() != meta.d || rec.rejected.len() != meta.d {
            return Err(Error::Parse {
                line: lineno,
                message: format!("record dimension differs from meta.d = {}", meta.d),
            });
        }
        records.push(rec);
    }
    if records.len() != meta.n {
        return Err(Error::Format(format!(
            "header announces {} records, file holds {}",
            meta.n,
            records.len()
        )));
    }
    Ok((records, meta))
}

pub fn save_dataset(records: &[PreferenceRecord], meta: &DatasetMeta, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(records, meta, file)
}

pub fn load_dataset(path: &Path) -> Result<(Vec<PreferenceRecord>, DatasetMeta)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng;
    use proptest::prelude::{any, prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn world_is_deterministic_and_bounded() {
        let a = make_world(3, 5).unwrap();
        assert_eq!(a, make_world(3, 5).unwrap());
        assert_ne!(a, make_world(4, 5).unwrap());
        assert_eq!(a.true_reward(&[0.0; 5]), 0.0);
        let bound: f64 = a.w.iter().map(|w| w.abs()).sum();
        for phi in sample_shifted_features(&a, &Shift::uniform(5, 10.0, 20.0), 200, &mut rng(1, &[])).unwrap() {
            assert!(a.true_reward(&phi).abs() <= bound);
        }
        assert!(make_world(1, 0).is_err());
    }

    #[test]
    fn symmetric_world_labels_are_balanced() {
        let mut w = make_world(0, 4).unwrap();
        w.w.iter_mut().for_each(|x| *x = 0.0);
        let n = 10_000;
        let mut r = rng(5, &[]);
        // re-draw the same stream to learn which element came first
        let recs = sample_pairs(&w, n, &mut r).unwrap();
        let mut r2 = rng(5, &[]);
        let mut first_wins = 0;
        for rec in &recs {
            let a = sample_box(&w.center, &w.half_width, &mut r2);
            let _b = sample_box(&w.center, &w.half_width, &mut r2);
            let _u: f64 = r2.random();
            if rec.chosen == a {
                first_wins += 1;
            }
        }
        let rate = first_wins as f64 / n as f64;
        assert!((rate - 0.5).abs() <= 3.0 * (0.25 / n as f64).sqrt(), "{rate}");
    }

    #[test]
    fn large_gap_rarely_flips() {
        let n = 10_000;
        let pairs = vec![(vec![6.0], vec![0.0]); n];
        let recs = label_pairs(pairs, |x| x[0], &mut rng(2, &[]));
        let flips = recs.iter().filter(|r| r.chosen[0] == 0.0).count();
        // expected 24.7 flips, sd 4.97
        assert!(flips <= 60, "{flips}");
    }

    #[test]
    fn zero_pairs_rejected() {
        let w = make_world(0, 2).unwrap();
        assert!(sample_pairs(&w, 0, &mut rng(0, &[])).is_err());
    }

    #[test]
    fn reversal_counts() {
        let w = make_world(1, 3).unwrap();
        let recs = sample_pairs(&w, 1000, &mut rng(1, &[])).unwrap();
        let same = inject_reversal(recs.clone(), 0.0, &mut rng(2, &[])).unwrap();
        assert_eq!(same, recs);
        let all = inject_reversal(recs.clone(), 1.0, &mut rng(2, &[])).unwrap();
        assert!(all.iter().zip(&recs).all(|(a, b)| a.chosen == b.rejected && a.reversed));
        let back = inject_reversal(all, 1.0, &mut rng(3, &[])).unwrap();
        assert_eq!(back, recs);
        let some = inject_reversal(recs, 0.3, &mut rng(2, &[])).unwrap();
        assert_eq!(some.iter().filter(|r| r.reversed).count(), 300);
        assert!(inject_reversal(some.clone(), 1.5, &mut rng(0, &[])).is_err());
        assert!(inject_reversal(some, -0.1, &mut rng(0, &[])).is_err());
    }

    #[test]
    fn shifted_sampling_geometry() {
        let w = make_world(2, 3).unwrap();
        let base = sample_features(&w, 50, &mut rng(9, &[]));
        let same = sample_shifted_features(&w, &Shift::none(3), 50, &mut rng(9, &[])).unwrap();
        assert_eq!(base, same);
        let far = sample_shifted_features(&w, &Shift::uniform(3, 3.0, 1.0), 500, &mut rng(9, &[])).unwrap();
        assert!(far.iter().flatten().all(|&x| x >= 2.0));
        let half = sample_shifted_features(&w, &Shift::uniform(3, 0.0, 0.5), 500, &mut rng(9, &[])).unwrap();
        assert!(half.iter().flatten().all(|&x| x.abs() <= 0.5));
    }

    #[test]
    fn empty_dataset_roundtrip() {
        let w = make_world(0, 2).unwrap();
        let meta = DatasetMeta::new(&w, 0, 0.0, Shift::none(2)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&[], &meta, &mut buf).unwrap();
        assert_eq!(buf.iter().filter(|&&c| c == b'\n').count(), 1);
        let (recs, back) = read_dataset(buf.as_slice()).unwrap();
        assert!(recs.is_empty());
        assert_eq!(back, meta);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let w = make_world(0, 2).unwrap();
        let recs = sample_pairs(&w, 3, &mut rng(0, &[])).unwrap();
        let meta = DatasetMeta::new(&w, 3, 0.0, Shift::none(2)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&recs, &meta, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<&str> = text.lines().collect();
        let truncated = &lines[2][..lines[2].len() / 2].to_string();
        lines[2] = truncated;
        let broken = lines.join("\n");
        match read_dataset(broken.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let versioned = text.replacen("\"version\":1", "\"version\":7", 1);
        assert!(matches!(read_dataset(versioned.as_bytes()), Err(Error::Version { found: 7, .. })));
    }

    #[test]
    fn header_layout_is_fixed() {
        let w = make_world(0, 1).unwrap();
        let recs = vec![PreferenceRecord { chosen: vec![0.1], rejected: vec![-0.25], reversed: true }];
        let meta = DatasetMeta::new(&w, 1, 0.5, Shift::none(1)).unwrap();
        let mut buf = Vec::new();
        write_dataset(&recs, &meta, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "{\"meta\":{\"version\":1,\"world_seed\":0,\"d\":1,\"n\":1,\"reversal_ratio\":0.5,\"shift\":{\"offset\":[0.0],\"scale\":1.0}}}\n\
             {\"chosen\":[0.1],\"rejected\":[-0.25],\"reversed\":true}\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn save_load_is_exact(seed in any::<u64>(), d in 1usize..5, n in 1usize..100, rho in 0.0f64..=1.0) {
            let w = make_world(seed, d).unwrap();
            let recs = sample_pairs(&w, n, &mut rng(seed, &[1])).unwrap();
            let recs = inject_reversal(recs, rho, &mut rng(seed, &[2])).unwrap();
            let meta = DatasetMeta::new(&w, n, rho, Shift::uniform(d, 0.5, 2.0)).unwrap();
            let mut buf = Vec::new();
            write_dataset(&recs, &meta, &mut buf).unwrap();
            let (back, back_meta) = read_dataset(buf.as_slice()).unwrap();
            prop_assert_eq!(back_meta, meta);
            for (a, b) in back.iter().zip(&recs) {
                prop_assert!(a.chosen.iter().zip(&b.chosen).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert!(a.rejected.iter().zip(&b.rejected).all(|(x, y)| x.to_bits() == y.to_bits()));
                prop_assert_eq!(a.reversed, b.reversed);
            }
        }
    }
}
