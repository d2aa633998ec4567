//! Overlap-based uncertainty.
//!
//! The uncertainty of a reward distribution is its mean Bhattacharyya
//! coefficient against other reward distributions: a distribution that is
//! hard to tell apart from the rest is an uncertain one. During policy
//! optimization the reference population is an online buffer of every
//! distribution seen so far, queried over its latest `w` entries once it
//! holds more than `k`.

use serde::{Deserialize, Serialize};

use crate::dist_math::{bc_closed_form, bc_moments, GaussianReward};
use crate::error::{Error, Result};

pub const DEFAULT_INITIAL_SIZE: usize = 100;
pub const DEFAULT_WINDOW: usize = 1_000_000;
pub const DEFAULT_LAMBDA: f64 = 10.0;

const SNAPSHOT_MAGIC: &[u8; 8] = b"PURMBUF\0";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferConfig {
    pub initial_size: usize,
    pub window: usize,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            initial_size: DEFAULT_INITIAL_SIZE,
            window: DEFAULT_WINDOW,
        }
    }
}

/// Append-only store of `(mu, sigma)` pairs. Windowing happens at query time.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionBuffer {
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    initial_size: usize,
    window: usize,
}

impl DistributionBuffer {
    pub fn new(initial_size: usize, window: usize) -> Result<Self> {
        if initial_size < 1 || window < 1 {
            return Err(Error::arg(format!(
                "buffer needs k >= 1 and w >= 1, got k={initial_size} w={window}"
            )));
        }
        Ok(Self {
            mus: Vec::new(),
            sigmas: Vec::new(),
            initial_size,
            window,
        })
    }

    pub fn with_config(cfg: BufferConfig) -> Result<Self> {
        Self::new(cfg.initial_size, cfg.window)
    }

    pub fn len(&self) -> usize {
        self.mus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mus.is_empty()
    }

    pub fn initial_size(&self) -> usize {
        self.initial_size
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn entries(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.mus.iter().copied().zip(self.sigmas.iter().copied())
    }

    pub fn push(&mut self, d: &GaussianReward) {
        self.mus.push(d.mu);
        self.sigmas.push(d.sigma());
    }

    /// Mean overlap of `d` with the latest `w` entries, or `None` while the
    /// buffer holds `k` entries or fewer. When `d` is itself the newest
    /// entry, that entry is left out of the average.
    pub fn uncertainty_of(&self, d: &GaussianReward) -> Option<f64> {
        let len = self.len();
        if len <= self.initial_size {
            return None;
        }
        let start = len - self.window.min(len);
        let sigma = d.sigma();
        let mut end = len;
        if self.mus[len - 1].to_bits() == d.mu.to_bits() && self.sigmas[len - 1].to_bits() == sigma.to_bits() {
            end -= 1;
        }
        if end == start {
            return None;
        }
        let sum: f64 = (start..end)
            .map(|i| bc_moments(d.mu, sigma, self.mus[i], self.sigmas[i]))
            .sum();
        Some(sum / (end - start) as f64)
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(36 + 16 * self.len());
        buf.extend_from_slice(SNAPSHOT_MAGIC);
        buf.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.initial_size as u64).to_le_bytes());
        buf.extend_from_slice(&(self.window as u64).to_le_bytes());
        buf.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for (m, s) in self.entries() {
            buf.extend_from_slice(&m.to_le_bytes());
            buf.extend_from_slice(&s.to_le_bytes());
        }
        buf
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Format(format!("buffer snapshot: {msg}"));
        if bytes.len() < 36 || &bytes[..8] != SNAPSHOT_MAGIC {
            return Err(bad("missing header"));
        }
        let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                expected: SNAPSHOT_VERSION,
                found: version,
            });
        }
        let (k, w, count) = (word(12) as usize, word(20) as usize, word(28) as usize);
        let body = &bytes[36..];
        if count.checked_mul(16) != Some(body.len()) {
            return Err(bad("entry count does not match payload length"));
        }
        let mut out = Self::new(k, w).map_err(|e| bad(&e.to_string()))?;
        for chunk in body.chunks_exact(16) {
            let m = f64::from_le_bytes(chunk[..8].try_into().expect("8 bytes"));
            let s = f64::from_le_bytes(chunk[8..].try_into().expect("8 bytes"));
            if !m.is_finite() || !(s > 0.0 && s.is_finite()) {
                return Err(bad("entry with non-finite mu or non-positive sigma"));
            }
            out.mus.push(m);
            out.sigmas.push(s);
        }
        Ok(out)
    }
}

/// Mean overlap over all unordered pairs of `dists`.
pub fn dataset_uncertainty(dists: &[GaussianReward]) -> Result<f64> {
    let n = dists.len();
    if n < 2 {
        return Err(Error::arg("dataset uncertainty needs at least two distributions"));
    }
    let sigmas: Vec<f64> = dists.iter().map(|d| d.sigma()).collect();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            sum += bc_moments(dists[i].mu, sigmas[i], dists[j].mu, sigmas[j]);
        }
    }
    Ok(2.0 * sum / (n as f64 * (n as f64 - 1.0)))
}

/// Per-distribution mean overlap with every other member of `dists`.
pub fn average_overlap(dists: &[GaussianReward]) -> Result<Vec<f64>> {
    let n = dists.len();
    if n < 2 {
        return Err(Error::arg("average overlap needs at least two distributions"));
    }
    let sigmas: Vec<f64> = dists.iter().map(|d| d.sigma()).collect();
    let mut sums = vec![0.0; n];
    for i in 0..n {
        for j in i + 1..n {
            let bc = bc_moments(dists[i].mu, sigmas[i], dists[j].mu, sigmas[j]);
            sums[i] += bc;
            sums[j] += bc;
        }
    }
    Ok(sums.into_iter().map(|s| s / (n - 1) as f64).collect())
}

/// Mean overlap of `d` with a fixed reference population.
pub fn overlap_with(d: &GaussianReward, population: &[GaussianReward]) -> Result<f64> {
    if population.is_empty() {
        return Err(Error::arg("reference population is empty"));
    }
    Ok(population.iter().map(|p| bc_closed_form(d, p)).sum::<f64>() / population.len() as f64)
}

/// `mu - lambda * u`.
#[inline]
pub fn penalized_reward(mu: f64, u: f64, lambda: f64) -> f64 {
    mu - lambda * u
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(mu: f64, sigma: f64) -> GaussianReward {
        GaussianReward::from_sigma(mu, sigma).unwrap()
    }

    #[test]
    fn push_appends_in_order() {
        let mut b = DistributionBuffer::new(1, 3).unwrap();
        b.push(&g(1.0, 1.0));
        b.push(&g(2.0, 0.5));
        assert_eq!(b.len(), 2);
        let e: Vec<_> = b.entries().collect();
        assert_eq!(e, vec![(1.0, 1.0), (2.0, 0.5)]);
        assert!(DistributionBuffer::new(0, 3).is_err());
    }

    #[test]
    fn gating_boundary() {
        let mut b = DistributionBuffer::new(5, 100).unwrap();
        let q = g(0.0, 1.0);
        for i in 0..5 {
            b.push(&g(i as f64 * 0.1, 1.0));
            assert!(b.uncertainty_of(&q).is_none());
        }
        b.push(&g(0.7, 1.0));
        assert!(b.uncertainty_of(&q).is_some());
    }

    #[test]
    fn identical_buffer_gives_full_overlap() {
        let mut b = DistributionBuffer::new(100, 1000).unwrap();
        let d = g(0.4, 0.9);
        for _ in 0..101 {
            b.push(&d);
        }
        assert_eq!(b.uncertainty_of(&d), Some(1.0));
    }

    #[test]
    fn far_query_has_vanishing_overlap() {
        let mut b = DistributionBuffer::new(100, 1000).unwrap();
        for _ in 0..200 {
            b.push(&g(0.0, 1.0));
        }
        assert!(b.uncertainty_of(&g(100.0, 1.0)).unwrap() < 1e-8);
    }

    #[test]
    fn two_cluster_buffer_matches_pairwise_loop() {
        let mut b = DistributionBuffer::new(100, 1_000_000).unwrap();
        let mut all = Vec::new();
        for _ in 0..100 {
            for d in [g(0.0, 1.0), g(2.0, 1.0)] {
                b.push(&d);
                all.push(d);
            }
        }
        let q = g(0.0, 1.0);
        let mut brute = 0.0;
        for d in &all {
            let s = d.sigma() * d.sigma() + 1.0;
            brute += (2.0 * d.sigma() / s).sqrt() * (-(d.mu * d.mu) / (4.0 * s)).exp();
        }
        brute /= all.len() as f64;
        let u = b.uncertainty_of(&q).unwrap();
        assert!((u - brute).abs() < 1e-14);
        assert!((u - (1.0 + (-0.5f64).exp()) / 2.0).abs() < 1e-12);
        assert!((u - 0.803_265).abs() < 1e-6);
    }

    #[test]
    fn self_entry_excluded() {
        let mut b = DistributionBuffer::new(1, 10).unwrap();
        b.push(&g(0.0, 1.0));
        b.push(&g(2.0, 1.0));
        let newest = g(5.0, 1.0);
        b.push(&newest);
        let u = b.uncertainty_of(&newest).unwrap();
        let expect = (bc_closed_form(&newest, &g(0.0, 1.0)) + bc_closed_form(&newest, &g(2.0, 1.0))) / 2.0;
        assert!((u - expect).abs() < 1e-15);
    }

    #[test]
    fn window_of_one_uses_latest_entry() {
        let mut b = DistributionBuffer::new(1, 1).unwrap();
        b.push(&g(0.0, 1.0));
        b.push(&g(1.0, 2.0));
        let q = g(0.3, 0.4);
        assert_eq!(b.uncertainty_of(&q), Some(bc_closed_form(&q, &g(1.0, 2.0))));
    }

    #[test]
    fn windowing_slices_latest_entries() {
        let mut b = DistributionBuffer::new(1, 3).unwrap();
        for mu in [50.0, 50.0, 0.0, 0.0, 0.0] {
            b.push(&g(mu, 1.0));
        }
        assert_eq!(b.uncertainty_of(&g(0.0, 1.0)), Some(1.0));
    }

    #[test]
    fn far_entry_dilutes_boundedly() {
        let mut b = DistributionBuffer::new(2, 1000).unwrap();
        for mu in [0.0, 0.1, -0.1, 0.05, 0.2] {
            b.push(&g(mu, 0.5));
        }
        let q = g(0.0, 0.5);
        let before = b.uncertainty_of(&q).unwrap();
        b.push(&g(100.0, 0.5));
        let after = b.uncertainty_of(&q).unwrap();
        assert!(after < before);
        assert!(before - after <= 1.0 / 6.0 + 1e-12);
    }

    #[test]
    fn dataset_uncertainty_examples() {
        let same = vec![g(1.0, 0.3); 5];
        assert!((dataset_uncertainty(&same).unwrap() - 1.0).abs() < 1e-15);
        let (a, c) = (g(0.0, 1.0), g(1.5, 0.7));
        assert_eq!(dataset_uncertainty(&[a, c]).unwrap(), bc_closed_form(&a, &c));
        assert!(dataset_uncertainty(&[a]).is_err());
    }

    #[test]
    fn dataset_uncertainty_matches_double_loop() {
        let dists: Vec<_> = (0..50)
            .map(|i| g((i as f64 * 0.37).sin() * 3.0, 0.2 + (i as f64 * 0.11).cos().abs()))
            .collect();
        let mut total = 0.0;
        let mut count = 0.0;
        for i in 0..dists.len() {
            for j in 0..dists.len() {
                if i != j {
                    total += bc_closed_form(&dists[i], &dists[j]);
                    count += 1.0;
                }
            }
        }
        let u = dataset_uncertainty(&dists).unwrap();
        assert!((u - total / count).abs() < 1e-12);
        let per = average_overlap(&dists).unwrap();
        assert!((per.iter().sum::<f64>() / 50.0 - u).abs() < 1e-12);
    }

    #[test]
    fn penalty_arithmetic() {
        assert_eq!(penalized_reward(2.0, 0.1, 0.0), 2.0);
        assert_eq!(penalized_reward(2.0, 0.0, 10.0), 2.0);
        assert_eq!(penalized_reward(2.0, 0.1, 10.0), 1.0);
    }

    #[test]
    fn snapshot_roundtrip_and_corruption() {
        let empty = DistributionBuffer::new(7, 9).unwrap();
        assert_eq!(DistributionBuffer::restore(&empty.snapshot()).unwrap(), empty);
        let mut b = DistributionBuffer::new(3, 4).unwrap();
        for i in 0..10 {
            b.push(&g(i as f64 - 4.5, 0.1 + i as f64));
        }
        let bytes = b.snapshot();
        assert_eq!(DistributionBuffer::restore(&bytes).unwrap(), b);
        assert!(matches!(DistributionBuffer::restore(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(DistributionBuffer::restore(b"nonsense"), Err(Error::Format(_))));
        let mut wrong = bytes.clone();
        wrong[8] = 2;
        assert!(matches!(DistributionBuffer::restore(&wrong), Err(Error::Version { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn dataset_uncertainty_is_permutation_invariant(
            raw in prop::collection::vec((-5.0f64..5.0, 0.05f64..5.0), 2..30),
            rot in 0usize..30,
        ) {
            let dists: Vec<_> = raw.iter().map(|&(m, s)| g(m, s)).collect();
            let mut perm = dists.clone();
            perm.rotate_left(rot % dists.len());
            perm.reverse();
            let a = dataset_uncertainty(&dists).unwrap();
            let b = dataset_uncertainty(&perm).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a > 0.0 && a <= 1.0);
        }

        #[test]
        fn uncertainty_in_unit_interval(
            raw in prop::collection::vec((-5.0f64..5.0, 0.05f64..5.0), 3..40),
            q in (-5.0f64..5.0, 0.05f64..5.0),
        ) {
            let mut b = DistributionBuffer::new(1, 16).unwrap();
            for &(m, s) in &raw {
                b.push(&g(m, s));
            }
            let u = b.uncertainty_of(&g(q.0, q.1)).unwrap();
            prop_assert!(u > 0.0 && u <= 1.0);
        }
    }
}
