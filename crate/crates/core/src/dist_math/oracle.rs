//! Slow, independent reference computations used to check the fast paths.
//!
//! Nothing here is used by training or the RL loop.

use std::f64::consts::PI;

use super::quadrature::integrate_panels;
use super::{sigmoid, GaussianReward, BC_NUMERIC_ABS_TOL, TAIL_SDS};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn normal_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let t = (x - mu) / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * t * t).exp()
}

fn normal_log_pdf(x: f64, mu: f64, sigma: f64) -> f64 {
    let t = (x - mu) / sigma;
    -0.5 * t * t - sigma.ln() - 0.5 * (2.0 * PI).ln()
}

fn panel_count(width: f64, feature: f64) -> usize {
    ((width / feature).ceil() as usize).clamp(1, 20_000)
}

/// The preference likelihood as the original two-dimensional integral
/// `∬ sigmoid(r1 - r2) N(r1|mu1,s1) N(r2|mu2,s2) dr1 dr2`, by nested
/// adaptive quadrature over `r2` (outer) and `r1` (inner).
pub fn double_integral_oracle(d1: &GaussianReward, d2: &GaussianReward) -> f64 {
    let (m1, s1) = (d1.mu, d1.sigma());
    let (m2, s2) = (d2.mu, d2.sigma());
    // Integrate sigmoid - 1/2 so that symmetric cases come out at 0.5 to rounding.
    let inner = |r2: f64| {
        integrate_panels(
            |r1: f64| (sigmoid(r1 - r2) - 0.5) * normal_pdf(r1, m1, s1),
            m1 - TAIL_SDS * s1,
            m1 + TAIL_SDS * s1,
            panel_count(2.0 * TAIL_SDS * s1, s1.min(1.0)),
            1e-13,
        )
    };
    let outer = integrate_panels(
        |r2: f64| inner(r2) * normal_pdf(r2, m2, s2),
        m2 - TAIL_SDS * s2,
        m2 + TAIL_SDS * s2,
        panel_count(2.0 * TAIL_SDS * s2, s2.min(1.0)),
        1e-11,
    );
    0.5 + outer
}

/// Bhattacharyya coefficient `∫ sqrt(p q)` by direct adaptive quadrature.
pub fn bc_numeric(d1: &GaussianReward, d2: &GaussianReward) -> f64 {
    let (m1, s1) = (d1.mu, d1.sigma());
    let (m2, s2) = (d2.mu, d2.sigma());
    let lo = (m1 - TAIL_SDS * s1).min(m2 - TAIL_SDS * s2);
    let hi = (m1 + TAIL_SDS * s1).max(m2 + TAIL_SDS * s2);
    integrate_panels(
        |x: f64| (0.5 * (normal_log_pdf(x, m1, s1) + normal_log_pdf(x, m2, s2))).exp(),
        lo,
        hi,
        panel_count(hi - lo, 0.5 * s1.min(s2)),
        BC_NUMERIC_ABS_TOL * 1e-3,
    )
}

/// Central finite difference `(f(x+h) - f(x-h)) / 2h`.
pub fn central_difference<F: FnMut(f64) -> f64>(mut f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative error `|a - b| / max(|a|, |b|, floor)`; the floor keeps
/// near-zero gradients from inflating the ratio.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist_math::{bc_closed_form, likelihood_quadrature, pair_statistic};

    fn g(mu: f64, sigma: f64) -> GaussianReward {
        GaussianReward::from_sigma(mu, sigma).unwrap()
    }

    #[test]
    fn double_integral_examples() {
        let a = g(0.3, 0.8);
        assert!((double_integral_oracle(&a, &a) - 0.5).abs() < 1e-10);
        let (d1, d2) = (g(1.0, 1.0), g(0.0, 1.0));
        let two_d = double_integral_oracle(&d1, &d2);
        let one_d = likelihood_quadrature(&pair_statistic(&d1, &d2));
        assert!((two_d - one_d).abs() < 1e-6, "{two_d} vs {one_d}");
        assert!((double_integral_oracle(&g(0.0, 5.0), &g(0.0, 0.1)) - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bc_numeric_examples() {
        let a = g(-1.0, 0.4);
        assert!((bc_numeric(&a, &a) - 1.0).abs() < 1e-8);
        assert!(bc_numeric(&g(0.0, 1.0), &g(100.0, 1.0)) < 1e-8);
        for (x, y) in [(g(0.0, 1.0), g(2.0, 1.0)), (g(0.0, 1.0), g(0.0, 2.0))] {
            assert!((bc_numeric(&x, &y) - bc_closed_form(&x, &y)).abs() < 1e-8);
        }
    }
}
