//! Reward heads over feature vectors.
//!
//! * PURM: a two-output network, `mu = head0(phi)` and
//!   `log sigma = clamp(head1(phi), [-6, 4])`.
//! * BTRM: a one-output network producing a scalar reward.
//! * BTE: `k` independently initialized BTRMs whose rewards are aggregated by
//!   mean, worst case (min), or uncertainty-weighted (mean minus `alpha` times
//!   the population variance).

pub mod checkpoint;
mod mlp;

pub use mlp::{Activation, ForwardCache, MlpParams};

use serde::{Deserialize, Serialize};

use crate::dist_math::GaussianReward;
use crate::error::{Error, Result};
use crate::seeding;

pub const LOG_SIGMA_MIN: f64 = -6.0;
pub const LOG_SIGMA_MAX: f64 = 4.0;
pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 5;
pub const DEFAULT_UWO_ALPHA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Purm,
    Btrm,
    Bte,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Purm => "purm",
            ModelKind::Btrm => "btrm",
            ModelKind::Bte => "bte",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "purm" => Ok(ModelKind::Purm),
            "btrm" => Ok(ModelKind::Btrm),
            "bte" => Ok(ModelKind::Bte),
            other => Err(Error::arg(format!("unknown model kind `{other}`"))),
        }
    }
}

/// How ensemble member rewards are combined into one scalar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    /// Worst-case: the minimum member reward.
    Wco,
    /// Uncertainty-weighted: mean minus `alpha` times the population variance.
    Uwo,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleParams {
    pub members: Vec<MlpParams>,
    pub alpha: f64,
}

impl EnsembleParams {
    pub fn new(members: Vec<MlpParams>, alpha: f64) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::arg("an ensemble needs at least two members"));
        }
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        let (d, h) = (members[0].input_dim(), members[0].hidden_dim());
        if members
            .iter()
            .any(|m| m.input_dim() != d || m.hidden_dim() != h || m.output_dim() != 1)
        {
            return Err(Error::arg("ensemble members must share (d, h) and have one output"));
        }
        Ok(Self { members, alpha })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// A trained or freshly initialized reward model of any kind.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Purm(MlpParams),
    Btrm(MlpParams),
    Bte(EnsembleParams),
}

impl RewardModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            RewardModel::Purm(_) => ModelKind::Purm,
            RewardModel::Btrm(_) => ModelKind::Btrm,
            RewardModel::Bte(_) => ModelKind::Bte,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RewardModel::Purm(p) | RewardModel::Btrm(p) => p.input_dim(),
            RewardModel::Bte(e) => e.members[0].input_dim(),
        }
    }

    /// The scalar reward the model hands to a policy: `mu` for PURM, the
    /// network output for BTRM, the aggregate for BTE.
    pub fn point_reward(&self, phi: &[f64], rule: Aggregation) -> Result<f64> {
        match self {
            RewardModel::Purm(p) => Ok(purm_forward(p, phi)?.mu),
            RewardModel::Btrm(p) => btrm_forward(p, phi),
            RewardModel::Bte(e) => aggregate(&ensemble_forward(e, phi)?, rule, e.alpha),
        }
    }
}

fn expect_outputs(p: &MlpParams, out: usize) -> Result<()> {
    if p.output_dim() != out {
        return Err(Error::Shape {
            expected: out,
            got: p.output_dim(),
        });
    }
    Ok(())
}

/// Whether the raw log-sigma output lies strictly inside the clamp, i.e.
/// whether gradients flow through the sigma head.
#[inline]
pub fn log_sigma_active(raw: f64) -> bool {
    raw > LOG_SIGMA_MIN && raw < LOG_SIGMA_MAX
}

pub fn purm_forward(p: &MlpParams, phi: &[f64]) -> Result<GaussianReward> {
    purm_forward_cached(p, phi).map(|(g, _)| g)
}

/// Forward pass that also returns the cache needed by [`purm_backward`].
pub fn purm_forward_cached(p: &MlpParams, phi: &[f64]) -> Result<(GaussianReward, ForwardCache)> {
    expect_outputs(p, 2)?;
    let cache = p.forward(phi)?;
    let reward = GaussianReward {
        mu: cache.output[0],
        log_sigma: cache.output[1].clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX),
    };
    Ok((reward, cache))
}

/// Accumulates gradients of a scalar objective into `grads`, given its
/// derivatives with respect to `mu` and `log sigma`.
pub fn purm_backward(
    p: &MlpParams,
    phi: &[f64],
    cache: &ForwardCache,
    d_mu: f64,
    d_log_sigma: f64,
    grads: &mut [f64],
) {
    let d_ls = if log_sigma_active(cache.output[1]) {
        d_log_sigma
    } else {
        0.0
    };
    p.backward(phi, cache, &[d_mu, d_ls], grads);
}

pub fn btrm_forward(p: &MlpParams, phi: &[f64]) -> Result<f64> {
    expect_outputs(p, 1)?;
    Ok(p.forward(phi)?.output[0])
}

pub fn ensemble_forward(e: &EnsembleParams, phi: &[f64]) -> Result<Vec<f64>> {
    e.members.iter().map(|m| btrm_forward(m, phi)).collect()
}

pub fn aggregate(rewards: &[f64], rule: Aggregation, alpha: f64) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::arg("cannot aggregate an empty reward list"));
    }
    let k = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / k;
    Ok(match rule {
        Aggregation::Mean => mean,
        Aggregation::Wco => rewards.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::Uwo => {
            let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k;
            mean - alpha * var
        }
    })
}

/// Population standard deviation of member rewards.
pub fn ensemble_uncertainty(rewards: &[f64]) -> f64 {
    if rewards.is_empty() {
        return 0.0;
    }
    let k = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / k;
    (rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / k).sqrt()
}

/// Fresh parameters for a model kind. Ensembles use the default size and
/// `alpha`; see [`init_ensemble`] for explicit values.
pub fn init_params(kind: ModelKind, d: usize, h: usize, seed: u64) -> Result<RewardModel> {
    match kind {
        ModelKind::Purm => init_single(d, h, 2, seed).map(RewardModel::Purm),
        ModelKind::Btrm => init_single(d, h, 1, seed).map(RewardModel::Btrm),
        ModelKind::Bte => {
            init_ensemble(d, h, DEFAULT_ENSEMBLE_SIZE, DEFAULT_UWO_ALPHA, seed).map(RewardModel::Bte)
        }
    }
}

fn init_single(d: usize, h: usize, out: usize, seed: u64) -> Result<MlpParams> {
    let mut rng = seeding::rng(seed, &[seeding::STREAM_INIT]);
    // output biases start at zero, so a PURM starts at sigma = 1
    MlpParams::random(d, h, out, &mut rng)
}

/// `k` one-output members, each initialized from its own seed stream.
pub fn init_ensemble(d: usize, h: usize, k: usize, alpha: f64, seed: u64) -> Result<EnsembleParams> {
    if k < 2 {
        return Err(Error::arg(format!("ensemble size must be >= 2, got {k}")));
    }
    let members = (0..k)
        .map(|i| init_single(d, h, 1, member_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    EnsembleParams::new(members, alpha)
}

/// Seed of ensemble member `i`, shared by its initialization and its data shuffling.
pub fn member_seed(seed: u64, i: usize) -> u64 {
    seeding::derive(seed, &[seeding::STREAM_MEMBER, i as u64])
}
