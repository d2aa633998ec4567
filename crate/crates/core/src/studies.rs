//! Uncertainty studies on the synthetic world: a label-reversal sweep and
//! an evaluation under covariate shift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward_models::{ensemble_forward, ensemble_uncertainty, purm_forward, ModelKind, RewardModel};
use crate::seeding::{self, STREAM_PAIRS, STREAM_REVERSAL, STREAM_SHIFT};
use crate::synth_data::{inject_reversal, sample_pairs, sample_shifted_features, PreferenceRecord, Shift, WorldSpec};
use crate::training::{train, ModelSpec, TrainConfig};
use crate::uncertainty::dataset_uncertainty;
use crate::GaussianReward;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AleatoricRow {
    pub rho: f64,
    /// Mean pairwise overlap of PURM distributions over the training features.
    pub purm_uncertainty: f64,
    /// Mean ensemble standard deviation over the same features.
    pub bte_std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpistemicRow {
    /// Box translation in half-widths; 0 is in-domain.
    pub offset: f64,
    pub purm_uncertainty: f64,
    pub bte_std: f64,
}

fn models(spec: &ModelSpec, records: &[PreferenceRecord], cfg: &TrainConfig) -> Result<(RewardModel, RewardModel)> {
    let purm = train(&ModelSpec { kind: ModelKind::Purm, ..spec.clone() }, records, cfg)?.model;
    let bte = train(&ModelSpec { kind: ModelKind::Bte, ..spec.clone() }, records, cfg)?.model;
    Ok((purm, bte))
}

fn measure(purm: &RewardModel, bte: &RewardModel, features: &[Vec<f64>]) -> Result<(f64, f64)> {
    let (RewardModel::Purm(p), RewardModel::Bte(e)) = (purm, bte) else {
        return Err(Error::arg("expected a purm and a bte model"));
    };
    let dists = features
        .iter()
        .map(|f| purm_forward(p, f))
        .collect::<Result<Vec<GaussianReward>>>()?;
    let mut spread = 0.0;
    for f in features {
        spread += ensemble_uncertainty(&ensemble_forward(e, f)?);
    }
    Ok((dataset_uncertainty(&dists)?, spread / features.len() as f64))
}

/// Trains one PURM and one BTE per reversal ratio on `n` pairs and measures
/// uncertainty over the training features. The clean pairs are shared
/// across ratios; each ratio reverses its own random subset.
pub fn aleatoric_sweep(
    world: &WorldSpec,
    n: usize,
    rhos: &[f64],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<AleatoricRow>> {
    let clean = sample_pairs(world, n, &mut seeding::rng(seed, &[STREAM_PAIRS]))?;
    rhos.iter()
        .map(|&rho| {
            let mut rng = seeding::rng(seed, &[STREAM_REVERSAL, rho.to_bits()]);
            let data = inject_reversal(clean.clone(), rho, &mut rng)?;
            let (purm, bte) = models(spec, &data, cfg)?;
            let features: Vec<Vec<f64>> = data.iter().flat_map(|r| [r.chosen.clone(), r.rejected.clone()]).collect();
            let (purm_uncertainty, bte_std) = measure(&purm, &bte, &features)?;
            Ok(AleatoricRow {
                rho,
                purm_uncertainty,
                bte_std,
            })
        })
        .collect()
}

/// Trains on `n_train` clean in-domain pairs, then measures uncertainty on
/// `n_eval` features drawn from the box translated by each offset. Every
/// offset reuses the same underlying uniform draws.
pub fn epistemic_eval(
    world: &WorldSpec,
    n_train: usize,
    n_eval: usize,
    offsets: &[f64],
    spec: &ModelSpec,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpistemicRow>> {
    if n_eval < 2 {
        return Err(Error::arg("epistemic evaluation needs n_eval >= 2"));
    }
    let clean = sample_pairs(world, n_train, &mut seeding::rng(seed, &[STREAM_PAIRS]))?;
    let (purm, bte) = models(spec, &clean, cfg)?;
    offsets
        .iter()
        .map(|&offset| {
            let shift = Shift {
                offset: world.half_width.iter().map(|h| h * offset).collect(),
                scale: 1.0,
            };
            let features = sample_shifted_features(world, &shift, n_eval, &mut seeding::rng(seed, &[STREAM_SHIFT]))?;
            let (purm_uncertainty, bte_std) = measure(&purm, &bte, &features)?;
            Ok(EpistemicRow {
                offset,
                purm_uncertainty,
                bte_std,
            })
        })
        .collect()
}

/// `(ood - id) / id`.
pub fn relative_gap(id: f64, ood: f64) -> f64 {
    (ood - id) / id
}
