//! Fixtures shared by the benchmarks.

use purm::reward_models::MlpParams;
use purm::seeding::rng;
use purm::synth_data::{make_world, sample_pairs, PreferenceRecord};
use purm::GaussianReward;

pub fn batch(d: usize, n: usize) -> Vec<PreferenceRecord> {
    sample_pairs(&make_world(1, d).unwrap(), n, &mut rng(1, &[1])).unwrap()
}

pub fn purm_params(d: usize, h: usize) -> MlpParams {
    MlpParams::random(d, h, 2, &mut rng(2, &[1])).unwrap()
}

/// `n` distributions with means spread over `[-3, 3]`.
pub fn population(n: usize) -> Vec<GaussianReward> {
    (0..n)
        .map(|i| {
            let t = i as f64 / n.max(1) as f64;
            GaussianReward::from_sigma(6.0 * t - 3.0, 0.3 + t).unwrap()
        })
        .collect()
}
