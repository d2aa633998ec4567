//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "PURMCKPT"
//! version  u32
//! kind     u8       0 = purm, 1 = btrm, 2 = bte
//! act      u8       0 = tanh, 1 = identity
//! seed     u64
//! clamp    f64 f64  log-sigma bounds
//! alpha    f64      UWO weight (0 for single models)
//! members  u32
//! d h out  u32 ×3
//! then per member: count u64, count × f64 weights
//! ```
//!
//! All integers and floats are little-endian, so round trips are bit-exact.

use std::path::Path;

use super::{Activation, EnsembleParams, MlpParams, RewardModel, LOG_SIGMA_MAX, LOG_SIGMA_MIN};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PURMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: RewardModel,
    pub seed: u64,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let (kind, members, alpha): (u8, Vec<&MlpParams>, f64) = match &ckpt.model {
        RewardModel::Purm(p) => (0, vec![p], 0.0),
        RewardModel::Btrm(p) => (1, vec![p], 0.0),
        RewardModel::Bte(e) => (2, e.members.iter().collect(), e.alpha),
    };
    let first = members[0];
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(kind);
    buf.push(match first.activation() {
        Activation::Tanh => 0,
        Activation::Identity => 1,
    });
    buf.extend_from_slice(&ckpt.seed.to_le_bytes());
    buf.extend_from_slice(&LOG_SIGMA_MIN.to_le_bytes());
    buf.extend_from_slice(&LOG_SIGMA_MAX.to_le_bytes());
    buf.extend_from_slice(&alpha.to_le_bytes());
    buf.extend_from_slice(&(members.len() as u32).to_le_bytes());
    for dim in [first.input_dim(), first.hidden_dim(), first.output_dim()] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for m in members {
        buf.extend_from_slice(&(m.weights().len() as u64).to_le_bytes());
        for w in m.weights() {
            buf.extend_from_slice(&w.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().expect("slice length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if &r.take::<8>()? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let kind = r.u8()?;
    let activation = match r.u8()? {
        0 => Activation::Tanh,
        1 => Activation::Identity,
        other => return Err(Error::Format(format!("unknown activation tag {other}"))),
    };
    let seed = r.u64()?;
    let (lo, hi) = (r.f64()?, r.f64()?);
    if lo != LOG_SIGMA_MIN || hi != LOG_SIGMA_MAX {
        return Err(Error::Format(format!(
            "checkpoint log-sigma clamp [{lo}, {hi}] differs from [{LOG_SIGMA_MIN}, {LOG_SIGMA_MAX}]"
        )));
    }
    let alpha = r.f64()?;
    let n_members = r.u32()? as usize;
    let (d, h, out) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let expected = MlpParams::param_count(d, h, out);
    if n_members == 0 || n_members > 4096 {
        return Err(Error::Format(format!("implausible member count {n_members}")));
    }
    let mut members = Vec::with_capacity(n_members);
    for _ in 0..n_members {
        let count = r.u64()? as usize;
        if count != expected {
            return Err(Error::Format(format!(
                "member has {count} weights, shape ({d}, {h}, {out}) needs {expected}"
            )));
        }
        let weights = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        members.push(
            MlpParams::from_flat(d, h, out, activation, weights)
                .map_err(|e| Error::Format(e.to_string()))?,
        );
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let single = |mut m: Vec<MlpParams>, want_out: usize| -> Result<MlpParams> {
        if m.len() != 1 || out != want_out {
            return Err(Error::Format("member count or output width does not match kind".into()));
        }
        Ok(m.pop().expect("one member"))
    };
    let model = match kind {
        0 => RewardModel::Purm(single(members, 2)?),
        1 => RewardModel::Btrm(single(members, 1)?),
        2 => RewardModel::Bte(
            EnsembleParams::new(members, alpha).map_err(|e| Error::Format(e.to_string()))?,
        ),
        other => return Err(Error::Format(format!("unknown model kind tag {other}"))),
    };
    Ok(Checkpoint { model, seed })
}

pub fn save(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, encode(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
