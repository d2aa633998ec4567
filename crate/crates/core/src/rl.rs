//! Single-step policy optimization against a frozen reward model.
//!
//! A linear-Gaussian policy picks an action `y` for a context `x`. The reward
//! model is trained on preference pairs whose actions lie in the box
//! `[-1, 1]^da`; the true reward peaks inside the box and decays outside it,
//! so a policy that follows the learned model past the box edge is hacking it.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist_math::{sigmoid, GaussianReward};
use crate::error::{Error, Result};
use crate::reward_models::{ensemble_forward, ensemble_uncertainty, purm_forward, Aggregation, ModelKind, RewardModel};
use crate::seeding::{self, STREAM_EVAL_CONTEXTS, STREAM_PAIRS, STREAM_REWARD_SAMPLE, STREAM_ROLLOUT, STREAM_WORLD};
use crate::synth_data::PreferenceRecord;
use crate::training::{evaluate, train, EvalReport, ModelSpec, TrainConfig};
use crate::uncertainty::{BufferConfig, DistributionBuffer, DEFAULT_LAMBDA};

pub const LOG_STD_MIN: f64 = -4.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 0.05;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Diagonal Gaussian policy with mean `M x + m0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub context_dim: usize,
    pub action_dim: usize,
    /// Row-major `action_dim x context_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicySpec {
    /// Zero mean map with a shared initial log-std.
    pub fn new(context_dim: usize, action_dim: usize, log_std: f64) -> Result<Self> {
        if context_dim == 0 || action_dim == 0 {
            return Err(Error::arg("policy dimensions must be >= 1"));
        }
        let p = Self {
            context_dim,
            action_dim,
            weights: vec![0.0; action_dim * context_dim],
            bias: vec![0.0; action_dim],
            log_std: vec![log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); action_dim],
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() != self.action_dim * self.context_dim {
            return Err(Error::Shape {
                expected: self.action_dim * self.context_dim,
                got: self.weights.len(),
            });
        }
        for v in [&self.bias, &self.log_std] {
            if v.len() != self.action_dim {
                return Err(Error::Shape {
                    expected: self.action_dim,
                    got: v.len(),
                });
            }
        }
        let finite = self.weights.iter().chain(&self.bias).chain(&self.log_std).all(|v| v.is_finite());
        if !finite {
            return Err(Error::arg("policy parameters must be finite"));
        }
        if self.log_std.iter().any(|&s| !(LOG_STD_MIN..=LOG_STD_MAX).contains(&s)) {
            return Err(Error::arg("policy log_std outside [-4, 2]"));
        }
        Ok(())
    }

    pub fn mean(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.context_dim);
        (0..self.action_dim)
            .map(|j| {
                let row = &self.weights[j * self.context_dim..(j + 1) * self.context_dim];
                self.bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }

    pub fn log_prob(&self, x: &[f64], y: &[f64]) -> f64 {
        let mean = self.mean(x);
        (0..self.action_dim)
            .map(|j| {
                let z = (y[j] - mean[j]) / self.log_std[j].exp();
                -self.log_std[j] - 0.5 * LN_2PI - 0.5 * z * z
            })
            .sum()
    }

    fn check_context(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.context_dim {
            return Err(Error::Shape {
                expected: self.context_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Gradient with the same layout as [`PolicySpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PolicyGrad {
    fn zeros(p: &PolicySpec) -> Self {
        Self {
            weights: vec![0.0; p.weights.len()],
            bias: vec![0.0; p.bias.len()],
            log_std: vec![0.0; p.log_std.len()],
        }
    }
}

/// `KL(pi(.|x) || ref(.|x))` for two diagonal Gaussian policies.
pub fn kl_divergence(policy: &PolicySpec, reference: &PolicySpec, x: &[f64]) -> f64 {
    let m = policy.mean(x);
    let m_ref = reference.mean(x);
    (0..policy.action_dim)
        .map(|j| {
            let (ls, ls_ref) = (policy.log_std[j], reference.log_std[j]);
            let ratio = (2.0 * (ls - ls_ref)).exp();
            let dm = (m[j] - m_ref[j]) / ls_ref.exp();
            ls_ref - ls + 0.5 * (ratio + dm * dm) - 0.5
        })
        .sum()
}

/// Mean KL over `contexts`.
pub fn mean_kl(policy: &PolicySpec, reference: &PolicySpec, contexts: &[Vec<f64>]) -> f64 {
    contexts.iter().map(|x| kl_divergence(policy, reference, x)).sum::<f64>() / contexts.len() as f64
}

/// Gradient of [`mean_kl`] with respect to the policy parameters.
pub fn kl_gradient(policy: &PolicySpec, reference: &PolicySpec, contexts: &[Vec<f64>]) -> PolicyGrad {
    let mut g = PolicyGrad::zeros(policy);
    let n = contexts.len() as f64;
    let dc = policy.context_dim;
    for x in contexts {
        let m = policy.mean(x);
        let m_ref = reference.mean(x);
        for j in 0..policy.action_dim {
            let d = (m[j] - m_ref[j]) / (2.0 * reference.log_std[j]).exp() / n;
            g.bias[j] += d;
            for (k, xk) in x.iter().enumerate() {
                g.weights[j * dc + k] += d * xk;
            }
        }
    }
    for j in 0..policy.action_dim {
        g.log_std[j] = (2.0 * (policy.log_std[j] - reference.log_std[j])).exp() - 1.0;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub action: Vec<f64>,
    pub log_prob: f64,
}

/// Samples `y = mean(x) + std * eps` for each context.
pub fn rollout<R: Rng + ?Sized>(policy: &PolicySpec, contexts: &[Vec<f64>], rng: &mut R) -> Result<Vec<Rollout>> {
    contexts
        .iter()
        .map(|x| {
            policy.check_context(x)?;
            let mean = policy.mean(x);
            let mut log_prob = 0.0;
            let action = mean
                .iter()
                .zip(&policy.log_std)
                .map(|(m, &ls)| {
                    let eps: f64 = rng.sample(StandardNormal);
                    log_prob += -ls - 0.5 * LN_2PI - 0.5 * eps * eps;
                    m + ls.exp() * eps
                })
                .collect();
            Ok(Rollout { action, log_prob })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub context: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
}

/// One ascent step on `E[r] - beta * KL(pi || ref)`. The reward term uses the
/// score-function estimator with the batch-mean reward as baseline; with
/// `whiten` the advantages are also divided by the batch reward deviation,
/// which makes the step size independent of the reward model's scale.
pub fn policy_update(
    policy: &PolicySpec,
    reference: &PolicySpec,
    batch: &[Transition],
    beta: f64,
    lr: f64,
    whiten: bool,
) -> Result<PolicySpec> {
    if batch.is_empty() {
        return Err(Error::arg("policy_update needs a nonempty batch"));
    }
    if !(beta >= 0.0 && lr >= 0.0 && beta.is_finite() && lr.is_finite()) {
        return Err(Error::arg("beta and lr must be finite and >= 0"));
    }
    let n = batch.len() as f64;
    let baseline = batch.iter().map(|t| t.reward).sum::<f64>() / n;
    let var = batch.iter().map(|t| (t.reward - baseline).powi(2)).sum::<f64>() / n;
    let scale = if whiten && var > 1e-24 { var.sqrt() } else { 1.0 };
    let dc = policy.context_dim;
    let mut g = PolicyGrad::zeros(policy);
    for t in batch {
        policy.check_context(&t.context)?;
        if t.action.len() != policy.action_dim {
            return Err(Error::Shape {
                expected: policy.action_dim,
                got: t.action.len(),
            });
        }
        let adv = (t.reward - baseline) / scale / n;
        let mean = policy.mean(&t.context);
        for j in 0..policy.action_dim {
            let z = (t.action[j] - mean[j]) / policy.log_std[j].exp();
            let d_mean = adv * z / policy.log_std[j].exp();
            g.bias[j] += d_mean;
            for (k, xk) in t.context.iter().enumerate() {
                g.weights[j * dc + k] += d_mean * xk;
            }
            g.log_std[j] += adv * (z * z - 1.0);
        }
    }
    let contexts: Vec<Vec<f64>> = batch.iter().map(|t| t.context.clone()).collect();
    let kl = kl_gradient(policy, reference, &contexts);
    let mut next = policy.clone();
    let step = |p: &mut [f64], g: &[f64], k: &[f64]| {
        for ((p, g), k) in p.iter_mut().zip(g).zip(k) {
            *p += lr * (g - beta * k);
        }
    };
    step(&mut next.weights, &g.weights, &kl.weights);
    step(&mut next.bias, &g.bias, &kl.bias);
    step(&mut next.log_std, &g.log_std, &kl.log_std);
    for ls in &mut next.log_std {
        *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
    }
    next.validate()?;
    Ok(next)
}

/// Which reward model the policy optimizes against, and how BTE members are
/// combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RmKind {
    Btrm,
    Purm,
    BteMean,
    BteWco,
    BteUwo,
}

impl RmKind {
    pub fn model_kind(self) -> ModelKind {
        match self {
            RmKind::Btrm => ModelKind::Btrm,
            RmKind::Purm => ModelKind::Purm,
            _ => ModelKind::Bte,
        }
    }

    pub fn aggregation(self) -> Aggregation {
        match self {
            RmKind::BteWco => Aggregation::Wco,
            RmKind::BteUwo => Aggregation::Uwo,
            _ => Aggregation::Mean,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RmKind::Btrm => "btrm",
            RmKind::Purm => "purm",
            RmKind::BteMean => "bte_mean",
            RmKind::BteWco => "bte_wco",
            RmKind::BteUwo => "bte_uwo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    /// `mu - lambda * u` with `u` from the overlap buffer.
    Bc,
    /// `mu - lambda * sigma`.
    Sigma,
    /// A draw from `N(mu, sigma)`; `lambda` is unused.
    Sample,
}

impl PenaltyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PenaltyKind::None => "none",
            PenaltyKind::Bc => "bc",
            PenaltyKind::Sigma => "sigma",
            PenaltyKind::Sample => "sample",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlConfig {
    pub rm_kind: RmKind,
    pub penalty_kind: PenaltyKind,
    pub lambda: f64,
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_log_std: f64,
    pub whiten_advantages: bool,
    pub seeds: Vec<u64>,
    pub buffer: BufferConfig,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            rm_kind: RmKind::Purm,
            penalty_kind: PenaltyKind::Bc,
            lambda: DEFAULT_LAMBDA,
            beta: DEFAULT_BETA,
            steps: 600,
            batch_size: 32,
            learning_rate: 0.004,
            init_log_std: -0.5,
            whiten_advantages: true,
            seeds: vec![1, 2, 3],
            buffer: BufferConfig::default(),
        }
    }
}

impl RlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if self.penalty_kind == PenaltyKind::None && self.lambda != 0.0 {
            return Err(Error::Config("penalty_kind = none requires lambda = 0".into()));
        }
        if self.penalty_kind != PenaltyKind::None && self.rm_kind != RmKind::Purm {
            return Err(Error::Config(format!(
                "penalty_kind = {} requires rm_kind = purm, got {}",
                self.penalty_kind.as_str(),
                self.rm_kind.as_str()
            )));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("rl learning_rate must be finite and >= 0".into()));
        }
        if self.steps < 1 || self.batch_size < 1 {
            return Err(Error::Config("rl steps and batch_size must be >= 1".into()));
        }
        if !(LOG_STD_MIN..=LOG_STD_MAX).contains(&self.init_log_std) {
            return Err(Error::Config("init_log_std outside [-4, 2]".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("rl needs at least one seed".into()));
        }
        if self.buffer.initial_size < 1 || self.buffer.window < 1 {
            return Err(Error::Config("buffer needs initial_size >= 1 and window >= 1".into()));
        }
        Ok(())
    }
}

/// True reward over actions: each coordinate contributes
/// `amplitude * g((y_j - shift_j(x)) / peak_j)` with `g(t) = t exp((1 - t^2) / 2)`,
/// which is 1 at `t = 1` and decays to 0 as `t` grows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditWorld {
    pub context_dim: usize,
    pub action_dim: usize,
    pub amplitude: f64,
    pub peaks: Vec<f64>,
    /// Row-major `action_dim x context_dim`; the optimum moves by `S x`.
    pub shift: Vec<f64>,
    /// Label flip probability reached at the box edge.
    pub edge_noise: f64,
    /// Normalized `|y_j|` where flipping starts.
    pub edge_start: f64,
    pub seed: u64,
}

impl BanditWorld {
    pub fn feature_dim(&self) -> usize {
        self.context_dim + 2 * self.action_dim
    }

    /// `concat(x, y, tanh(x_j' * y_j))` with `j' = j mod context_dim`.
    pub fn features(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let mut phi = Vec::with_capacity(self.feature_dim());
        phi.extend_from_slice(x);
        phi.extend_from_slice(y);
        phi.extend(y.iter().enumerate().map(|(j, yj)| (x[j % self.context_dim] * yj).tanh()));
        phi
    }

    pub fn optimum(&self, x: &[f64]) -> Vec<f64> {
        (0..self.action_dim)
            .map(|j| {
                let row = &self.shift[j * self.context_dim..(j + 1) * self.context_dim];
                self.peaks[j] + row.iter().zip(x).map(|(s, v)| s * v).sum::<f64>()
            })
            .collect()
    }

    pub fn true_reward(&self, x: &[f64], y: &[f64]) -> f64 {
        let opt = self.optimum(x);
        (0..self.action_dim)
            .map(|j| {
                let t = (y[j] - opt[j] + self.peaks[j]) / self.peaks[j];
                t * (0.5 * (1.0 - t * t)).exp()
            })
            .sum::<f64>()
            * self.amplitude
    }

    /// Annotator flip probability for one action: zero below `edge_start`
    /// in every coordinate, rising linearly to `edge_noise` at the upper edge.
    pub fn flip_probability(&self, y: &[f64]) -> f64 {
        let e = y
            .iter()
            .map(|v| ((v - self.edge_start) / (1.0 - self.edge_start)).clamp(0.0, 1.0))
            .fold(0.0, f64::max);
        self.edge_noise * e
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.context_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }

    pub fn sample_action<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect()
    }
}

pub const DEFAULT_AMPLITUDE: f64 = 4.0;
pub const DEFAULT_EDGE_NOISE: f64 = 0.3;
pub const DEFAULT_EDGE_START: f64 = 0.6;

/// Draws peaks in `[0.7, 0.85]` and a context shift small enough that the
/// optimum stays inside the box for every context.
pub fn make_bandit_world(seed: u64, cfg: &EnvConfig) -> Result<BanditWorld> {
    cfg.validate()?;
    let (context_dim, action_dim) = (cfg.context_dim, cfg.action_dim);
    let mut rng = seeding::rng(seed, &[STREAM_WORLD]);
    let peaks = (0..action_dim).map(|_| rng.random_range(0.7..0.85)).collect();
    let per = 0.1 / context_dim as f64;
    let shift = (0..action_dim * context_dim).map(|_| rng.random_range(-per..per)).collect();
    Ok(BanditWorld {
        context_dim,
        action_dim,
        amplitude: cfg.amplitude,
        peaks,
        shift,
        edge_noise: cfg.edge_noise,
        edge_start: cfg.edge_start,
        seed,
    })
}

/// World shape and the preference data the frozen reward model sees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub context_dim: usize,
    pub action_dim: usize,
    pub amplitude: f64,
    pub edge_noise: f64,
    pub edge_start: f64,
    pub train_pairs: usize,
    pub eval_pairs: usize,
    pub eval_contexts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            context_dim: 2,
            action_dim: 2,
            amplitude: DEFAULT_AMPLITUDE,
            edge_noise: DEFAULT_EDGE_NOISE,
            edge_start: DEFAULT_EDGE_START,
            train_pairs: 2000,
            eval_pairs: 1000,
            eval_contexts: 256,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.context_dim == 0 || self.action_dim == 0 {
            return Err(Error::Config("context_dim and action_dim must be >= 1".into()));
        }
        if self.train_pairs == 0 || self.eval_pairs == 0 || self.eval_contexts == 0 {
            return Err(Error::Config("train_pairs, eval_pairs and eval_contexts must be >= 1".into()));
        }
        if !(self.amplitude > 0.0 && self.amplitude.is_finite()) {
            return Err(Error::Config(format!("amplitude must be positive, got {}", self.amplitude)));
        }
        if !(0.0..=0.5).contains(&self.edge_noise) {
            return Err(Error::Config(format!("edge_noise must lie in [0, 0.5], got {}", self.edge_noise)));
        }
        if !(0.0..1.0).contains(&self.edge_start) {
            return Err(Error::Config(format!("edge_start must lie in [0, 1), got {}", self.edge_start)));
        }
        Ok(())
    }
}

/// Preference pairs sharing a context, actions uniform in the box. Labels
/// follow the Bradley-Terry law on the true reward and are then flipped with
/// the larger of the two actions' flip probabilities.
pub fn sample_bandit_pairs<R: Rng + ?Sized>(world: &BanditWorld, n: usize, rng: &mut R) -> Vec<PreferenceRecord> {
    (0..n)
        .map(|_| {
            let x = world.sample_context(rng);
            let a = world.sample_action(rng);
            let b = world.sample_action(rng);
            let gap = world.true_reward(&x, &a) - world.true_reward(&x, &b);
            let mut a_wins = rng.random::<f64>() < sigmoid(gap);
            let q = world.flip_probability(&a).max(world.flip_probability(&b));
            if rng.random::<f64>() < q {
                a_wins = !a_wins;
            }
            let (fa, fb) = (world.features(&x, &a), world.features(&x, &b));
            let (chosen, rejected) = if a_wins { (fa, fb) } else { (fb, fa) };
            PreferenceRecord {
                chosen,
                rejected,
                reversed: false,
            }
        })
        .collect()
}

/// A frozen reward model with the world it was trained on.
#[derive(Debug, Clone)]
pub struct Environment {
    pub world: BanditWorld,
    pub model: RewardModel,
    /// Held-out in-domain preference metrics of the frozen model.
    pub eval: EvalReport,
    /// Fixed contexts on which true reward and KL are reported.
    pub eval_contexts: Vec<Vec<f64>>,
}

/// Trains the frozen reward model of `world`. The training seed is derived
/// from the world seed and `train.seed`.
pub fn build_environment(
    world: &BanditWorld,
    cfg: &EnvConfig,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
) -> Result<Environment> {
    cfg.validate()?;
    train_cfg.validate()?;
    if world.context_dim != cfg.context_dim || world.action_dim != cfg.action_dim {
        return Err(Error::Config("world dimensions disagree with the environment config".into()));
    }
    let mut rng = seeding::rng(world.seed, &[STREAM_PAIRS]);
    let records = sample_bandit_pairs(world, cfg.train_pairs, &mut rng);
    let held_out = sample_bandit_pairs(world, cfg.eval_pairs, &mut rng);
    let train_cfg = TrainConfig {
        seed: seeding::derive(world.seed, &[train_cfg.seed]),
        ..train_cfg.clone()
    };
    let model = train(spec, &records, &train_cfg)?.model;
    let eval = evaluate(&model, &held_out, Aggregation::Mean)?;
    let mut ctx_rng = seeding::rng(world.seed, &[STREAM_EVAL_CONTEXTS]);
    let eval_contexts = (0..cfg.eval_contexts).map(|_| world.sample_context(&mut ctx_rng)).collect();
    Ok(Environment {
        world: world.clone(),
        model,
        eval,
        eval_contexts,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedReward {
    /// What the policy is trained on.
    pub value: f64,
    /// The unpenalized model reward.
    pub proxy: f64,
    /// Buffer overlap for PURM, member spread for BTE.
    pub uncertainty: Option<f64>,
}

/// Scores one feature vector. For PURM the distribution is first pushed into
/// `tracker`, then queried with itself excluded.
pub fn shaped_reward<R: Rng + ?Sized>(
    rm: &RewardModel,
    tracker: Option<&mut DistributionBuffer>,
    phi: &[f64],
    cfg: &RlConfig,
    rng: &mut R,
) -> Result<ShapedReward> {
    if rm.kind() != cfg.rm_kind.model_kind() {
        return Err(Error::Config(format!(
            "rm_kind = {} but the reward model is {}",
            cfg.rm_kind.as_str(),
            rm.kind().as_str()
        )));
    }
    match rm {
        RewardModel::Purm(p) => {
            let d: GaussianReward = purm_forward(p, phi)?;
            let u = tracker.and_then(|t| {
                t.push(&d);
                t.uncertainty_of(&d)
            });
            let value = match cfg.penalty_kind {
                PenaltyKind::None => d.mu,
                PenaltyKind::Bc => u.map_or(d.mu, |u| d.mu - cfg.lambda * u),
                PenaltyKind::Sigma => d.mu - cfg.lambda * d.sigma(),
                PenaltyKind::Sample => d.mu + d.sigma() * rng.sample::<f64, _>(StandardNormal),
            };
            Ok(ShapedReward {
                value,
                proxy: d.mu,
                uncertainty: u,
            })
        }
        _ if cfg.penalty_kind != PenaltyKind::None => Err(Error::Config(format!(
            "penalty_kind = {} requires a purm reward model",
            cfg.penalty_kind.as_str()
        ))),
        RewardModel::Btrm(_) => {
            let r = rm.point_reward(phi, Aggregation::Mean)?;
            Ok(ShapedReward {
                value: r,
                proxy: r,
                uncertainty: None,
            })
        }
        RewardModel::Bte(e) => {
            let members = ensemble_forward(e, phi)?;
            let r = crate::reward_models::aggregate(&members, cfg.rm_kind.aggregation(), e.alpha)?;
            Ok(ShapedReward {
                value: r,
                proxy: r,
                uncertainty: Some(ensemble_uncertainty(&members)),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub proxy_reward_mean: f64,
    pub true_reward_mean: f64,
    pub kl: f64,
    pub uncertainty_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn true_rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.true_reward_mean).collect()
    }

    pub fn proxy_rewards(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.proxy_reward_mean).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "step,proxy_reward_mean,true_reward_mean,kl,uncertainty_mean")?;
        for r in &self.rows {
            write!(out, "{},{},{},{},", r.step, r.proxy_reward_mean, r.true_reward_mean, r.kl)?;
            match r.uncertainty_mean {
                Some(u) => writeln!(out, "{u}")?,
                None => writeln!(out)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub effective_learning_step: usize,
    pub peak_true_reward: f64,
    pub final_true_reward: f64,
}

impl RunSummary {
    pub fn of(metrics: &RunMetrics) -> Result<Self> {
        let last = metrics.rows.last().ok_or_else(|| Error::arg("empty metrics"))?;
        let step = effective_learning_step(metrics)?;
        Ok(Self {
            effective_learning_step: step,
            peak_true_reward: metrics.rows[step].true_reward_mean,
            final_true_reward: last.true_reward_mean,
        })
    }
}

/// Index of the largest true reward, earliest on ties.
pub fn effective_learning_step(metrics: &RunMetrics) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in metrics.rows.iter().enumerate() {
        if best.is_none_or(|(_, v)| r.true_reward_mean > v) {
            best = Some((i, r.true_reward_mean));
        }
    }
    best.map(|(i, _)| i).ok_or_else(|| Error::arg("empty metrics"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    /// True reward of the reference policy's mean action.
    pub baseline_true_reward: f64,
    pub metrics: RunMetrics,
    pub summary: RunSummary,
    pub policy: PolicySpec,
}

/// Mean true reward of the policy's mean action over the evaluation contexts.
pub fn evaluate_policy(env: &Environment, policy: &PolicySpec) -> f64 {
    let total: f64 = env
        .eval_contexts
        .iter()
        .map(|x| env.world.true_reward(x, &policy.mean(x)))
        .sum();
    total / env.eval_contexts.len() as f64
}

/// Runs the policy-optimization loop once against a prebuilt environment.
pub fn run_on(env: &Environment, cfg: &RlConfig, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let world = &env.world;
    let reference = PolicySpec::new(world.context_dim, world.action_dim, cfg.init_log_std)?;
    let mut policy = reference.clone();
    let mut tracker = match env.model {
        RewardModel::Purm(_) => Some(DistributionBuffer::with_config(cfg.buffer)?),
        _ => None,
    };
    let baseline_true_reward = evaluate_policy(env, &policy);
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut rng = seeding::rng(seed, &[STREAM_ROLLOUT, step as u64]);
        let mut sample_rng = seeding::rng(seed, &[STREAM_REWARD_SAMPLE, step as u64]);
        let contexts: Vec<Vec<f64>> = (0..cfg.batch_size).map(|_| world.sample_context(&mut rng)).collect();
        let actions = rollout(&policy, &contexts, &mut rng)?;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let (mut proxy_sum, mut u_sum, mut u_count) = (0.0, 0.0, 0usize);
        for (x, a) in contexts.into_iter().zip(actions) {
            let phi = world.features(&x, &a.action);
            let s = shaped_reward(&env.model, tracker.as_mut(), &phi, cfg, &mut sample_rng)?;
            proxy_sum += s.proxy;
            if let Some(u) = s.uncertainty {
                u_sum += u;
                u_count += 1;
            }
            batch.push(Transition {
                context: x,
                action: a.action,
                reward: s.value,
            });
        }
        policy = policy_update(&policy, &reference, &batch, cfg.beta, cfg.learning_rate, cfg.whiten_advantages)?;
        let row = MetricsRow {
            step,
            proxy_reward_mean: proxy_sum / cfg.batch_size as f64,
            true_reward_mean: evaluate_policy(env, &policy),
            kl: mean_kl(&policy, &reference, &env.eval_contexts),
            uncertainty_mean: (u_count > 0).then(|| u_sum / u_count as f64),
        };
        if ![row.proxy_reward_mean, row.true_reward_mean, row.kl].iter().all(|v| v.is_finite()) {
            return Err(Error::arg(format!("non-finite metrics at step {step}")));
        }
        rows.push(row);
    }
    let metrics = RunMetrics { rows };
    let summary = RunSummary::of(&metrics)?;
    Ok(RunOutput {
        seed,
        baseline_true_reward,
        metrics,
        summary,
        policy,
    })
}

/// Builds one environment per seed (the seed doubles as the world seed) and
/// runs the configured loop in each. The model kind follows `cfg.rm_kind`.
pub fn run_experiment(
    env_cfg: &EnvConfig,
    spec: &ModelSpec,
    train_cfg: &TrainConfig,
    cfg: &RlConfig,
) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let spec = ModelSpec {
        kind: cfg.rm_kind.model_kind(),
        ..spec.clone()
    };
    cfg.seeds
        .iter()
        .map(|&seed| {
            let world = make_bandit_world(seed, env_cfg)?;
            let env = build_environment(&world, env_cfg, &spec, train_cfg)?;
            run_on(&env, cfg, seed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist_math::oracle::{central_difference, relative_error};
    use crate::reward_models::checkpoint::{encode, Checkpoint};
    use crate::reward_models::{btrm_forward, init_params};
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn random_policy(seed: u64, dc: usize, da: usize) -> PolicySpec {
        let mut rng = seeding::rng(seed, &[77]);
        let mut p = PolicySpec::new(dc, da, 0.0).unwrap();
        for w in p.weights.iter_mut().chain(&mut p.bias) {
            *w = rng.random_range(-1.0..1.0);
        }
        for s in &mut p.log_std {
            *s = rng.random_range(-1.5..0.5);
        }
        p
    }

    fn untrained_env(kind: ModelKind) -> Environment {
        let cfg = EnvConfig::default();
        let world = make_bandit_world(3, &cfg).unwrap();
        let model = ModelSpec::of(kind).init(world.feature_dim(), 5).unwrap();
        let mut rng = seeding::rng(3, &[STREAM_EVAL_CONTEXTS]);
        Environment {
            eval_contexts: (0..16).map(|_| world.sample_context(&mut rng)).collect(),
            world,
            model,
            eval: EvalReport {
                accuracy: 0.5,
                nll: std::f64::consts::LN_2,
                n_pairs: 1,
            },
        }
    }

    fn short(rm_kind: RmKind, penalty_kind: PenaltyKind, lambda: f64, steps: usize) -> RlConfig {
        RlConfig {
            rm_kind,
            penalty_kind,
            lambda,
            steps,
            batch_size: 8,
            buffer: BufferConfig {
                initial_size: 10,
                window: 1000,
            },
            ..RlConfig::default()
        }
    }

    fn csv(m: &RunMetrics) -> Vec<u8> {
        let mut out = vec![];
        m.write_csv(&mut out).unwrap();
        out
    }

    #[test]
    fn log_prob_matches_the_density() {
        let p = random_policy(1, 3, 2);
        let x = [0.3, -0.2, 0.9];
        let y = [0.1, -0.7];
        let m = p.mean(&x);
        let density: f64 = (0..2)
            .map(|j| {
                let s = p.log_std[j].exp();
                (-(y[j] - m[j]).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
            })
            .product();
        assert!((p.log_prob(&x, &y) - density.ln()).abs() < 1e-10);
        let at_mean = -p.log_std.iter().sum::<f64>() - LN_2PI;
        assert!((p.log_prob(&x, &m) - at_mean).abs() < 1e-12);
    }

    #[test]
    fn rollout_reports_the_policy_log_prob() {
        let p = random_policy(2, 2, 3);
        let contexts: Vec<Vec<f64>> = vec![vec![0.5, -0.5], vec![0.0, 1.0], vec![-1.0, 0.2]];
        let a = rollout(&p, &contexts, &mut seeding::rng(4, &[1])).unwrap();
        let b = rollout(&p, &contexts, &mut seeding::rng(4, &[1])).unwrap();
        assert_eq!(a, b);
        for (x, r) in contexts.iter().zip(&a) {
            assert!((r.log_prob - p.log_prob(x, &r.action)).abs() < 1e-10);
        }
    }

    #[test]
    fn smallest_std_is_nearly_deterministic() {
        let p = PolicySpec::new(1, 2, LOG_STD_MIN).unwrap();
        let contexts = vec![vec![0.0]; 200];
        for r in rollout(&p, &contexts, &mut seeding::rng(5, &[1])).unwrap() {
            assert!(r.action.iter().all(|a| a.abs() < 6.0 * LOG_STD_MIN.exp()));
        }
    }

    #[test]
    fn policy_shapes_and_ranges_are_checked() {
        assert!(PolicySpec::new(0, 1, 0.0).is_err());
        let mut p = PolicySpec::new(2, 2, 0.0).unwrap();
        p.log_std[0] = 3.0;
        assert!(p.validate().is_err());
        let p = PolicySpec::new(2, 2, 0.0).unwrap();
        assert!(rollout(&p, &[vec![0.0]], &mut seeding::rng(1, &[1])).is_err());
    }

    #[test]
    fn kl_gradient_matches_finite_differences() {
        for seed in 0..20 {
            let policy = random_policy(seed, 3, 2);
            let reference = random_policy(seed + 100, 3, 2);
            let mut rng = seeding::rng(seed, &[9]);
            let contexts: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let g = kl_gradient(&policy, &reference, &contexts);
            let check = |get: &dyn Fn(&mut PolicySpec) -> &mut f64, analytic: f64| {
                let x0 = *get(&mut policy.clone());
                let numeric = central_difference(
                    |v| {
                        let mut p = policy.clone();
                        *get(&mut p) = v;
                        mean_kl(&p, &reference, &contexts)
                    },
                    x0,
                    1e-5,
                );
                assert!(relative_error(analytic, numeric, 1e-6) < 1e-4, "seed {seed}: {analytic} vs {numeric}");
            };
            for i in 0..policy.weights.len() {
                check(&|p: &mut PolicySpec| &mut p.weights[i], g.weights[i]);
            }
            for j in 0..2 {
                check(&|p: &mut PolicySpec| &mut p.bias[j], g.bias[j]);
                check(&|p: &mut PolicySpec| &mut p.log_std[j], g.log_std[j]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kl_is_nonnegative_and_zero_on_self(seed in 0u64..10_000, x0 in -1.0..1.0f64, x1 in -1.0..1.0f64) {
            let p = random_policy(seed, 2, 2);
            let q = random_policy(seed ^ 0xabcd, 2, 2);
            prop_assert!(kl_divergence(&p, &q, &[x0, x1]) >= 0.0);
            prop_assert!(kl_divergence(&p, &p, &[x0, x1]).abs() < 1e-12);
        }

        #[test]
        fn true_reward_is_bounded_by_its_optimum(seed in 0u64..1000, x0 in -1.0..1.0f64, x1 in -1.0..1.0f64, y0 in -5.0..5.0f64, y1 in -5.0..5.0f64) {
            let world = make_bandit_world(seed, &EnvConfig::default()).unwrap();
            let x = [x0, x1];
            let best = world.true_reward(&x, &world.optimum(&x));
            prop_assert!((best - world.amplitude * 2.0).abs() < 1e-12);
            prop_assert!(world.true_reward(&x, &[y0, y1]) <= best + 1e-12);
            let q = world.flip_probability(&[y0, y1]);
            prop_assert!((0.0..=world.edge_noise).contains(&q));
        }
    }

    #[test]
    fn optimum_lies_inside_the_box() {
        for seed in 0..50 {
            let world = make_bandit_world(seed, &EnvConfig::default()).unwrap();
            for x in [[1.0, 1.0], [-1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]] {
                assert!(world.optimum(&x).iter().all(|o| o.abs() < 1.0));
            }
        }
    }

    fn transitions(policy: &PolicySpec, seed: u64) -> Vec<Transition> {
        let mut rng = seeding::rng(seed, &[3]);
        let contexts: Vec<Vec<f64>> = (0..16).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let actions = rollout(policy, &contexts, &mut rng).unwrap();
        contexts
            .into_iter()
            .zip(actions)
            .map(|(context, a)| Transition {
                reward: a.action.iter().sum(),
                context,
                action: a.action,
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_the_policy_unchanged() {
        let p = random_policy(4, 2, 2);
        let reference = PolicySpec::new(2, 2, -0.5).unwrap();
        for whiten in [false, true] {
            assert_eq!(policy_update(&p, &reference, &transitions(&p, 1), 0.05, 0.0, whiten).unwrap(), p);
        }
    }

    #[test]
    fn update_follows_the_reward() {
        let reference = PolicySpec::new(2, 2, -0.5).unwrap();
        let mut p = reference.clone();
        for step in 0..50 {
            p = policy_update(&p, &reference, &transitions(&p, step), 0.0, 0.01, true).unwrap();
        }
        assert!(p.bias.iter().all(|&b| b > 0.05), "{:?}", p.bias);
    }

    #[test]
    fn large_beta_pins_the_policy_to_the_reference() {
        let reference = PolicySpec::new(2, 2, -0.5).unwrap();
        let (mut pinned, mut free) = (reference.clone(), reference.clone());
        let contexts: Vec<Vec<f64>> = transitions(&reference, 0).into_iter().map(|t| t.context).collect();
        // lr * beta / ref_var stays below 2 so the explicit step is stable.
        for step in 0..100 {
            pinned = policy_update(&pinned, &reference, &transitions(&pinned, step), 1e3, 1e-4, true).unwrap();
            free = policy_update(&free, &reference, &transitions(&free, step), 0.0, 1e-4, true).unwrap();
        }
        assert!(mean_kl(&pinned, &reference, &contexts) < 1e-2);
        assert!(mean_kl(&free, &reference, &contexts) > mean_kl(&pinned, &reference, &contexts));
    }

    #[test]
    fn config_invariants() {
        assert!(RlConfig::default().validate().is_ok());
        let bad = [
            RlConfig { penalty_kind: PenaltyKind::None, ..RlConfig::default() },
            RlConfig { rm_kind: RmKind::Btrm, ..RlConfig::default() },
            RlConfig { rm_kind: RmKind::BteWco, penalty_kind: PenaltyKind::Sigma, ..RlConfig::default() },
            RlConfig { lambda: -1.0, ..RlConfig::default() },
            RlConfig { beta: f64::NAN, ..RlConfig::default() },
            RlConfig { steps: 0, ..RlConfig::default() },
            RlConfig { init_log_std: 5.0, ..RlConfig::default() },
            RlConfig { seeds: vec![], ..RlConfig::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::Config(_))), "{cfg:?}");
        }
        let ok = RlConfig { rm_kind: RmKind::Btrm, penalty_kind: PenaltyKind::None, lambda: 0.0, ..RlConfig::default() };
        assert!(ok.validate().is_ok());
        let env = EnvConfig { edge_noise: 0.7, ..EnvConfig::default() };
        assert!(matches!(env.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unpenalized_rewards_are_the_raw_forward() {
        let phi = [0.2, -0.4, 0.6, 0.1, 0.3, -0.5];
        let mut rng = seeding::rng(1, &[1]);
        let purm = init_params(ModelKind::Purm, 6, 8, 1).unwrap();
        let s = shaped_reward(&purm, None, &phi, &short(RmKind::Purm, PenaltyKind::None, 0.0, 1), &mut rng).unwrap();
        let RewardModel::Purm(p) = &purm else { unreachable!() };
        assert_eq!(s.value, purm_forward(p, &phi).unwrap().mu);

        let btrm = init_params(ModelKind::Btrm, 6, 8, 1).unwrap();
        let s = shaped_reward(&btrm, None, &phi, &short(RmKind::Btrm, PenaltyKind::None, 0.0, 1), &mut rng).unwrap();
        let RewardModel::Btrm(p) = &btrm else { unreachable!() };
        assert_eq!(s.value, btrm_forward(p, &phi).unwrap());

        let bte = ModelSpec::of(ModelKind::Bte).init(6, 1).unwrap();
        for kind in [RmKind::BteMean, RmKind::BteWco, RmKind::BteUwo] {
            let s = shaped_reward(&bte, None, &phi, &short(kind, PenaltyKind::None, 0.0, 1), &mut rng).unwrap();
            assert_eq!(s.value, bte.point_reward(&phi, kind.aggregation()).unwrap());
            assert!(s.uncertainty.unwrap() >= 0.0);
        }
    }

    #[test]
    fn bc_penalty_is_gated_then_saturates() {
        let phi = [0.2, -0.4, 0.6, 0.1, 0.3, -0.5];
        let purm = init_params(ModelKind::Purm, 6, 8, 2).unwrap();
        let RewardModel::Purm(p) = &purm else { unreachable!() };
        let d = purm_forward(p, &phi).unwrap();
        let cfg = short(RmKind::Purm, PenaltyKind::Bc, 10.0, 1);
        let mut rng = seeding::rng(1, &[1]);
        let mut buffer = DistributionBuffer::with_config(cfg.buffer).unwrap();
        for _ in 0..cfg.buffer.initial_size {
            let s = shaped_reward(&purm, Some(&mut buffer), &phi, &cfg, &mut rng).unwrap();
            assert_eq!(s.value, d.mu);
            assert_eq!(s.uncertainty, None);
        }
        // Every other entry is the same distribution, so the overlap is 1.
        let s = shaped_reward(&purm, Some(&mut buffer), &phi, &cfg, &mut rng).unwrap();
        assert!((s.uncertainty.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.value - (d.mu - 10.0)).abs() < 1e-9);
        assert_eq!(buffer.len(), cfg.buffer.initial_size + 1);

        let sigma = shaped_reward(&purm, None, &phi, &short(RmKind::Purm, PenaltyKind::Sigma, 2.0, 1), &mut rng).unwrap();
        assert!((sigma.value - (d.mu - 2.0 * d.sigma())).abs() < 1e-12);
    }

    #[test]
    fn sampled_rewards_follow_the_distribution() {
        let phi = [0.2, -0.4, 0.6, 0.1, 0.3, -0.5];
        let purm = init_params(ModelKind::Purm, 6, 8, 2).unwrap();
        let RewardModel::Purm(p) = &purm else { unreachable!() };
        let d = purm_forward(p, &phi).unwrap();
        let cfg = short(RmKind::Purm, PenaltyKind::Sample, 10.0, 1);
        let mut rng = seeding::rng(8, &[1]);
        let n = 20_000;
        let draws: Vec<f64> = (0..n).map(|_| shaped_reward(&purm, None, &phi, &cfg, &mut rng).unwrap().value).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - d.mu).abs() < 4.0 * d.sigma() / (n as f64).sqrt());
    }

    #[test]
    fn mismatched_models_are_configuration_errors() {
        let phi = [0.0; 6];
        let mut rng = seeding::rng(1, &[1]);
        let btrm = init_params(ModelKind::Btrm, 6, 4, 1).unwrap();
        let purm_cfg = short(RmKind::Purm, PenaltyKind::Bc, 10.0, 1);
        assert!(matches!(shaped_reward(&btrm, None, &phi, &purm_cfg, &mut rng), Err(Error::Config(_))));
        let mut sloppy = short(RmKind::Btrm, PenaltyKind::None, 0.0, 1);
        sloppy.penalty_kind = PenaltyKind::Sigma;
        assert!(matches!(shaped_reward(&btrm, None, &phi, &sloppy, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn effective_learning_step_tie_rules() {
        let m = |v: &[f64]| RunMetrics {
            rows: v
                .iter()
                .enumerate()
                .map(|(step, &t)| MetricsRow {
                    step,
                    proxy_reward_mean: 0.0,
                    true_reward_mean: t,
                    kl: 0.0,
                    uncertainty_mean: None,
                })
                .collect(),
        };
        assert_eq!(effective_learning_step(&m(&[1.0, 2.0, 3.0])).unwrap(), 2);
        assert_eq!(effective_learning_step(&m(&[1.0, 5.0, 2.0, 0.0])).unwrap(), 1);
        assert_eq!(effective_learning_step(&m(&[4.0; 5])).unwrap(), 0);
        assert_eq!(effective_learning_step(&m(&[1.0, 3.0, 3.0])).unwrap(), 1);
        assert!(effective_learning_step(&m(&[])).is_err());
        let s = RunSummary::of(&m(&[1.0, 5.0, 2.0])).unwrap();
        assert_eq!((s.peak_true_reward, s.final_true_reward), (5.0, 2.0));
    }

    #[test]
    fn one_step_gives_one_row() {
        let env = untrained_env(ModelKind::Purm);
        let out = run_on(&env, &short(RmKind::Purm, PenaltyKind::Bc, 10.0, 1), 1).unwrap();
        assert_eq!(out.metrics.rows.len(), 1);
        let text = String::from_utf8(csv(&out.metrics)).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,proxy_reward_mean,true_reward_mean,kl,uncertainty_mean");
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn runs_are_deterministic_and_leave_the_model_alone() {
        let env = untrained_env(ModelKind::Purm);
        let before = encode(&Checkpoint { model: env.model.clone(), seed: 0 });
        let cfg = short(RmKind::Purm, PenaltyKind::Bc, 10.0, 30);
        let a = run_on(&env, &cfg, 4).unwrap();
        let b = run_on(&env, &cfg, 4).unwrap();
        assert_eq!(csv(&a.metrics), csv(&b.metrics));
        assert_eq!(encode(&Checkpoint { model: env.model.clone(), seed: 0 }), before);
        assert!(a.metrics.rows.iter().all(|r| r.kl >= 0.0));
        assert!(a.metrics.rows[0].uncertainty_mean.is_none());
        assert!(a.metrics.rows[29].uncertainty_mean.is_some());
        assert_ne!(csv(&a.metrics), csv(&run_on(&env, &cfg, 5).unwrap().metrics));
    }

    #[test]
    fn zero_lambda_matches_the_unpenalized_run() {
        let env = untrained_env(ModelKind::Purm);
        let zero = run_on(&env, &short(RmKind::Purm, PenaltyKind::Bc, 0.0, 40), 2).unwrap();
        let none = run_on(&env, &short(RmKind::Purm, PenaltyKind::None, 0.0, 40), 2).unwrap();
        assert_eq!(zero.policy, none.policy);
        assert_eq!(zero.metrics.true_rewards(), none.metrics.true_rewards());
        assert_eq!(zero.metrics.proxy_rewards(), none.metrics.proxy_rewards());
    }

    #[test]
    fn bte_runs_report_member_spread() {
        let env = untrained_env(ModelKind::Bte);
        let out = run_on(&env, &short(RmKind::BteUwo, PenaltyKind::None, 0.0, 3), 1).unwrap();
        assert!(out.metrics.rows.iter().all(|r| r.uncertainty_mean.is_some()));
        let wrong = run_on(&env, &short(RmKind::Purm, PenaltyKind::None, 0.0, 3), 1);
        assert!(matches!(wrong, Err(Error::Config(_))));
    }
}
