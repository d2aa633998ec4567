//! Numerics for Gaussian rewards: the sigmoid–Gaussian preference likelihood,
//! its Monte Carlo estimators with pathwise gradients, and the Bhattacharyya
//! overlap of two Gaussians.
//!
//! A preference between two Gaussian rewards `r1 ~ N(mu1, s1)` and
//! `r2 ~ N(mu2, s2)` marginalizes the Bradley–Terry likelihood over both
//! rewards. The two-dimensional integral collapses onto the difference
//! `z = r1 - r2 ~ N(mu1 - mu2, sqrt(s1^2 + s2^2))`, so everything downstream
//! works with a [`PairStatistic`].

#[cfg(any(test, feature = "oracle"))]
pub mod oracle;
pub mod quadrature;

use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use quadrature::GaussHermite;

/// Monte Carlo sample count used by the training loss unless overridden.
pub const DEFAULT_MC_SAMPLES: usize = 1000;
/// Node count of the Gauss–Hermite rule behind [`likelihood_quadrature`].
pub const HERMITE_NODES: usize = 96;
/// Absolute accuracy targeted by [`likelihood_quadrature`].
pub const LIKELIHOOD_ABS_TOL: f64 = 1e-10;
/// Absolute accuracy targeted by the numeric overlap oracle.
pub const BC_NUMERIC_ABS_TOL: f64 = 1e-8;
/// Above this `sigma_z` the 96-node Hermite rule no longer resolves the
/// sigmoid's complex poles to [`LIKELIHOOD_ABS_TOL`]; adaptive quadrature takes over.
pub const HERMITE_SIGMA_LIMIT: f64 = 2.0;
/// Half-width, in standard deviations, of the truncated domain used by the
/// adaptive integrators. Gaussian mass beyond it is below 1e-30.
pub const TAIL_SDS: f64 = 12.0;

/// A Gaussian reward `N(mu, exp(log_sigma))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianReward {
    pub mu: f64,
    pub log_sigma: f64,
}

impl GaussianReward {
    pub fn new(mu: f64, log_sigma: f64) -> Result<Self> {
        if !mu.is_finite() || !log_sigma.is_finite() {
            return Err(Error::arg(format!(
                "gaussian reward needs finite mu and log_sigma, got ({mu}, {log_sigma})"
            )));
        }
        let sigma = log_sigma.exp();
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::arg(format!("log_sigma {log_sigma} gives sigma {sigma}")));
        }
        Ok(Self { mu, log_sigma })
    }

    pub fn from_sigma(mu: f64, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::arg(format!("sigma must be positive, got {sigma}")));
        }
        Self::new(mu, sigma.ln())
    }

    #[inline]
    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }
}

/// Distribution of the reward difference `z = r1 - r2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairStatistic {
    mu_z: f64,
    sigma_z: f64,
}

impl PairStatistic {
    /// Direct construction from difference moments, for callers that already
    /// work in `(mu_z, sigma_z)` coordinates.
    pub fn new(mu_z: f64, sigma_z: f64) -> Result<Self> {
        if !mu_z.is_finite() || !(sigma_z > 0.0 && sigma_z.is_finite()) {
            return Err(Error::arg(format!(
                "pair statistic needs finite mu_z and positive sigma_z, got ({mu_z}, {sigma_z})"
            )));
        }
        Ok(Self { mu_z, sigma_z })
    }

    #[inline]
    pub fn mu_z(&self) -> f64 {
        self.mu_z
    }

    #[inline]
    pub fn sigma_z(&self) -> f64 {
        self.sigma_z
    }
}

pub fn pair_statistic(d1: &GaussianReward, d2: &GaussianReward) -> PairStatistic {
    let (s1, s2) = (d1.sigma(), d2.sigma());
    PairStatistic {
        mu_z: d1.mu - d2.mu,
        sigma_z: (s1 * s1 + s2 * s2).sqrt(),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Draws `n` standard normal variates.
pub fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Monte Carlo estimate of `E[sigmoid(z)]` with reparameterized draws
/// `z = mu_z + sigma_z * eps`.
pub fn likelihood_mc<R: Rng + ?Sized>(ps: &PairStatistic, n_samples: usize, rng: &mut R) -> f64 {
    assert!(n_samples >= 1, "likelihood_mc needs at least one sample");
    let eps = standard_normals(n_samples, rng);
    likelihood_mc_with_noise(ps, &eps)
}

pub fn likelihood_mc_with_noise(ps: &PairStatistic, eps: &[f64]) -> f64 {
    let n = eps.len() as f64;
    eps.iter()
        .map(|e| sigmoid(ps.mu_z + ps.sigma_z * e))
        .sum::<f64>()
        / n
}

fn hermite_rule() -> &'static GaussHermite {
    static RULE: OnceLock<GaussHermite> = OnceLock::new();
    RULE.get_or_init(|| GaussHermite::new(HERMITE_NODES))
}

/// Deterministic `∫ sigmoid(z) N(z | mu_z, sigma_z) dz`.
///
/// Narrow difference distributions use the 96-node Hermite rule; wider ones
/// switch to adaptive Gauss–Kronrod over `mu_z ± 12 sigma_z`.
pub fn likelihood_quadrature(ps: &PairStatistic) -> f64 {
    let (m, s) = (ps.mu_z, ps.sigma_z);
    if s <= HERMITE_SIGMA_LIMIT {
        return hermite_rule().expect_normal(m, s, sigmoid);
    }
    // Odd part of sigmoid integrates to zero against a centered density, so
    // integrate sigmoid(m + s t) - 1/2 and add the half back for accuracy near 0.5.
    let inv = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let panels = (2.0 * TAIL_SDS * s.max(1.0)).ceil() as usize;
    let half = quadrature::integrate_panels(
        |t: f64| (sigmoid(m + s * t) - 0.5) * inv * (-0.5 * t * t).exp(),
        -TAIL_SDS,
        TAIL_SDS,
        panels,
        LIKELIHOOD_ABS_TOL * 1e-2,
    );
    0.5 + half
}

/// `-log p` where `p` is the Bradley–Terry likelihood of a scalar margin.
#[inline]
pub fn bt_nll(margin: f64) -> f64 {
    softplus(-margin)
}

/// Bhattacharyya coefficient of two Gaussians in closed form.
pub fn bc_closed_form(d1: &GaussianReward, d2: &GaussianReward) -> f64 {
    bc_moments(d1.mu, d1.sigma(), d2.mu, d2.sigma())
}

/// Same as [`bc_closed_form`] on raw `(mu, sigma)` pairs.
#[inline]
pub fn bc_moments(mu1: f64, sigma1: f64, mu2: f64, sigma2: f64) -> f64 {
    let var_sum = sigma1 * sigma1 + sigma2 * sigma2;
    let dmu = mu1 - mu2;
    (2.0 * sigma1 * sigma2 / var_sum).sqrt() * (-dmu * dmu / (4.0 * var_sum)).exp()
}

/// Which Monte Carlo estimator of the pair loss to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// `-log((1/n) Σ sigmoid(z_i))`: the negative log of the likelihood estimate.
    #[default]
    LogOfMean,
    /// `(1/n) Σ -log sigmoid(z_i)`: an upper bound on the former by Jensen.
    MeanOfLog,
}

/// Loss value and its derivatives with respect to the pair statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub d_mu_z: f64,
    pub d_sigma_z: f64,
}

pub fn pair_loss_value_and_grad<R: Rng + ?Sized>(
    ps: &PairStatistic,
    variant: LossVariant,
    n_samples: usize,
    rng: &mut R,
) -> PairLoss {
    assert!(n_samples >= 1, "pair loss needs at least one sample");
    let eps = standard_normals(n_samples, rng);
    pair_loss_with_noise(ps, variant, &eps)
}

/// Pathwise loss and gradients for fixed noise draws `eps`.
pub fn pair_loss_with_noise(ps: &PairStatistic, variant: LossVariant, eps: &[f64]) -> PairLoss {
    let n = eps.len() as f64;
    match variant {
        LossVariant::MeanOfLog => {
            let (mut loss, mut d_mu, mut d_sigma) = (0.0, 0.0, 0.0);
            for &e in eps {
                let z = ps.mu_z + ps.sigma_z * e;
                loss += softplus(-z);
                let w = sigmoid(-z);
                d_mu -= w;
                d_sigma -= w * e;
            }
            PairLoss {
                loss: loss / n,
                d_mu_z: d_mu / n,
                d_sigma_z: d_sigma / n,
            }
        }
        LossVariant::LogOfMean => {
            // With a = exp(-|z|): log sigmoid(z) = min(z, 0) - ln(1 + a),
            // sigmoid(z) sigmoid(-z) = a / (1 + a)^2.
            let mut terms = Vec::with_capacity(eps.len());
            let (mut max, mut q) = (f64::NEG_INFINITY, 0.0);
            for &e in eps {
                let z = ps.mu_z + ps.sigma_z * e;
                let a = (-z.abs()).exp();
                let ls = z.min(0.0) - a.ln_1p();
                max = max.max(ls);
                q += if z >= 0.0 { a / (1.0 + a) } else { 1.0 / (1.0 + a) };
                terms.push((ls, a));
            }
            q /= n;
            let acc: f64 = terms.iter().map(|&(ls, _)| (ls - max).exp()).sum();
            let log_p = max + (acc / n).ln();
            let loss = if q < 0.5 { -(-q).ln_1p() } else { -log_p };
            let inv_p = (-log_p).exp();
            let (mut d_mu, mut d_sigma) = (0.0, 0.0);
            for (&(_, a), &e) in terms.iter().zip(eps) {
                let ratio = if inv_p.is_finite() {
                    a / ((1.0 + a) * (1.0 + a)) * inv_p
                } else {
                    (a.ln() - 2.0 * a.ln_1p() - log_p).exp()
                };
                d_mu -= ratio;
                d_sigma -= ratio * e;
            }
            PairLoss {
                loss: loss.max(0.0),
                d_mu_z: d_mu / n,
                d_sigma_z: d_sigma / n,
            }
        }
    }
}
