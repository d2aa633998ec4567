//! Maximum-likelihood training of reward models and their evaluation.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dist_math::{
    bt_nll, likelihood_quadrature, pair_loss_with_noise, pair_statistic, sigmoid, standard_normals,
    LossVariant, DEFAULT_MC_SAMPLES,
};
use crate::error::{Error, Result};
use crate::reward_models::{
    aggregate, btrm_forward, ensemble_forward, init_ensemble, init_params, member_seed,
    purm_backward, purm_forward, purm_forward_cached, Aggregation, EnsembleParams, MlpParams,
    ModelKind, RewardModel, DEFAULT_ENSEMBLE_SIZE, DEFAULT_HIDDEN, DEFAULT_UWO_ALPHA,
};
use crate::seeding;
use crate::synth_data::PreferenceRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub mc_samples: usize,
    pub loss_variant: LossVariant,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Evaluate on the training set every `log_every` steps; 0 disables.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 64,
            steps: 2000,
            mc_samples: DEFAULT_MC_SAMPLES,
            loss_variant: LossVariant::LogOfMean,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            log_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.steps < 1 || self.mc_samples < 1 || self.batch_size < 1 {
            return Err(Error::Config("steps, mc_samples and batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return Err(Error::Config("adam constants out of range".into()));
        }
        Ok(())
    }
}

/// Architecture choices needed to initialize a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub hidden: usize,
    pub ensemble_size: usize,
    pub alpha: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::Purm,
            hidden: DEFAULT_HIDDEN,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            alpha: DEFAULT_UWO_ALPHA,
        }
    }
}

impl ModelSpec {
    pub fn of(kind: ModelKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn init(&self, d: usize, seed: u64) -> Result<RewardModel> {
        match self.kind {
            ModelKind::Bte => {
                init_ensemble(d, self.hidden, self.ensemble_size, self.alpha, seed).map(RewardModel::Bte)
            }
            kind => init_params(kind, d, self.hidden, seed),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub nll: f64,
    pub n_pairs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub loss: f64,
    pub eval: Option<EvalReport>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RewardModel,
    /// One row per step. For ensembles the loss is the mean over members.
    pub history: Vec<HistoryRow>,
}

impl TrainOutcome {
    pub fn losses(&self) -> Vec<f64> {
        self.history.iter().map(|r| r.loss).collect()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Mean pair loss of a PURM over `batch` and its exact pathwise gradient,
/// with one fixed noise vector per pair.
pub fn purm_batch_loss_with_noise(
    params: &MlpParams,
    batch: &[PreferenceRecord],
    variant: LossVariant,
    noise: &[Vec<f64>],
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    debug_assert_eq!(noise.len(), batch.len());
    let scale = 1.0 / batch.len() as f64;
    let mut grads = vec![0.0; params.weights().len()];
    let mut total = 0.0;
    for (rec, eps) in batch.iter().zip(noise) {
        let (gc, cc) = purm_forward_cached(params, &rec.chosen)?;
        let (gr, cr) = purm_forward_cached(params, &rec.rejected)?;
        let ps = pair_statistic(&gc, &gr);
        let out = pair_loss_with_noise(&ps, variant, eps);
        total += out.loss;
        // sigma_z = sqrt(sc^2 + sr^2)  =>  d sigma_z / d log sc = sc^2 / sigma_z
        let (sc, sr) = (gc.sigma(), gr.sigma());
        let dz = out.d_sigma_z / ps.sigma_z();
        purm_backward(params, &rec.chosen, &cc, scale * out.d_mu_z, scale * dz * sc * sc, &mut grads);
        purm_backward(params, &rec.rejected, &cr, -scale * out.d_mu_z, scale * dz * sr * sr, &mut grads);
    }
    Ok((total * scale, grads))
}

/// [`purm_batch_loss_with_noise`] with fresh standard normal draws.
pub fn purm_batch_loss<R: rand::Rng + ?Sized>(
    params: &MlpParams,
    batch: &[PreferenceRecord],
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let noise: Vec<Vec<f64>> = (0..batch.len())
        .map(|_| standard_normals(cfg.mc_samples, rng))
        .collect();
    purm_batch_loss_with_noise(params, batch, cfg.loss_variant, &noise)
}

/// Mean `-log sigmoid(r_chosen - r_rejected)` and its gradient.
pub fn btrm_batch_loss(params: &MlpParams, batch: &[PreferenceRecord]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::arg("empty batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = vec![0.0; params.weights().len()];
    let mut total = 0.0;
    for rec in batch {
        let cc = params.forward(&rec.chosen)?;
        let cr = params.forward(&rec.rejected)?;
        if params.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                got: params.output_dim(),
            });
        }
        let margin = cc.output[0] - cr.output[0];
        total += bt_nll(margin);
        let d_margin = -sigmoid(-margin) * scale;
        params.backward(&rec.chosen, &cc, &[d_margin], &mut grads);
        params.backward(&rec.rejected, &cr, &[-d_margin], &mut grads);
    }
    Ok((total * scale, grads))
}

/// Walks shuffled epochs of `n` indices, yielding `batch` indices per step.
struct Batcher {
    order: Vec<usize>,
    pos: usize,
    epoch: u64,
    seed: u64,
    batch: usize,
}

impl Batcher {
    fn new(n: usize, batch: usize, seed: u64) -> Self {
        let mut b = Self {
            order: (0..n).collect(),
            pos: 0,
            epoch: 0,
            seed,
            batch: batch.min(n),
        };
        b.shuffle();
        b
    }

    fn shuffle(&mut self) {
        let mut rng = seeding::rng(self.seed, &[seeding::STREAM_SHUFFLE, self.epoch]);
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self) -> Vec<usize> {
        if self.pos + self.batch > self.order.len() {
            self.epoch += 1;
            self.pos = 0;
            self.shuffle();
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

fn gather(records: &[PreferenceRecord], idx: &[usize]) -> Vec<PreferenceRecord> {
    idx.iter().map(|&i| records[i].clone()).collect()
}

/// Initializes a model from `spec` and trains it on `records`.
pub fn train(spec: &ModelSpec, records: &[PreferenceRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let first = records
        .first()
        .ok_or_else(|| Error::arg("cannot train on an empty dataset"))?;
    let model = spec.init(first.chosen.len(), cfg.seed)?;
    train_from(model, records, cfg)
}

/// Trains starting from the given parameters.
pub fn train_from(model: RewardModel, records: &[PreferenceRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    match model {
        RewardModel::Purm(p) => {
            let (p, history) = train_single(p, records, cfg, cfg.seed, true)?;
            Ok(TrainOutcome {
                model: RewardModel::Purm(p),
                history,
            })
        }
        RewardModel::Btrm(p) => {
            let (p, history) = train_single(p, records, cfg, cfg.seed, false)?;
            Ok(TrainOutcome {
                model: RewardModel::Btrm(p),
                history,
            })
        }
        RewardModel::Bte(e) => train_ensemble(e, records, cfg),
    }
}

fn train_single(
    mut params: MlpParams,
    records: &[PreferenceRecord],
    cfg: &TrainConfig,
    seed: u64,
    purm: bool,
) -> Result<(MlpParams, Vec<HistoryRow>)> {
    let mut adam = Adam::new(params.weights().len(), cfg);
    let mut batcher = Batcher::new(records.len(), cfg.batch_size, seed);
    let mut history = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let batch = gather(records, &batcher.next());
        let (loss, grads) = if purm {
            let mut rng = seeding::rng(seed, &[seeding::STREAM_LOSS_NOISE, step as u64]);
            purm_batch_loss(&params, &batch, cfg, &mut rng)?
        } else {
            btrm_batch_loss(&params, &batch)?
        };
        adam.step(params.weights_mut(), &grads);
        let eval = if cfg.log_every > 0 && (step + 1) % cfg.log_every == 0 {
            let snapshot = if purm {
                RewardModel::Purm(params.clone())
            } else {
                RewardModel::Btrm(params.clone())
            };
            Some(evaluate(&snapshot, records, Aggregation::Mean)?)
        } else {
            None
        };
        history.push(HistoryRow { step, loss, eval });
    }
    Ok((params, history))
}

fn train_ensemble(e: EnsembleParams, records: &[PreferenceRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let alpha = e.alpha;
    let k = e.members.len();
    let mut members = Vec::with_capacity(k);
    let mut losses = vec![0.0; cfg.steps];
    let quiet = TrainConfig {
        log_every: 0,
        ..cfg.clone()
    };
    for (i, m) in e.members.into_iter().enumerate() {
        let (trained, hist) = train_single(m, records, &quiet, member_seed(cfg.seed, i), false)?;
        for (acc, row) in losses.iter_mut().zip(&hist) {
            *acc += row.loss / k as f64;
        }
        members.push(trained);
    }
    let model = RewardModel::Bte(EnsembleParams::new(members, alpha)?);
    let mut history = Vec::with_capacity(cfg.steps);
    for (step, loss) in losses.into_iter().enumerate() {
        let eval = if cfg.log_every > 0 && (step + 1) == cfg.steps {
            Some(evaluate(&model, records, Aggregation::Mean)?)
        } else {
            None
        };
        history.push(HistoryRow { step, loss, eval });
    }
    Ok(TrainOutcome { model, history })
}

/// Probability the model assigns to `chosen` beating `rejected`, and the
/// matching negative log-likelihood.
pub fn preference_probability(
    model: &RewardModel,
    rec: &PreferenceRecord,
    rule: Aggregation,
) -> Result<(f64, f64)> {
    match model {
        RewardModel::Purm(p) => {
            let gc = purm_forward(p, &rec.chosen)?;
            let gr = purm_forward(p, &rec.rejected)?;
            let prob = likelihood_quadrature(&pair_statistic(&gc, &gr));
            Ok((prob, -prob.max(f64::MIN_POSITIVE).ln()))
        }
        RewardModel::Btrm(p) => {
            let margin = btrm_forward(p, &rec.chosen)? - btrm_forward(p, &rec.rejected)?;
            Ok((sigmoid(margin), bt_nll(margin)))
        }
        RewardModel::Bte(e) => {
            let rc = aggregate(&ensemble_forward(e, &rec.chosen)?, rule, e.alpha)?;
            let rr = aggregate(&ensemble_forward(e, &rec.rejected)?, rule, e.alpha)?;
            let margin = rc - rr;
            Ok((sigmoid(margin), bt_nll(margin)))
        }
    }
}

/// Accuracy and NLL over `records`. A pair counts as correct only when the
/// model's probability strictly exceeds one half.
pub fn evaluate(model: &RewardModel, records: &[PreferenceRecord], rule: Aggregation) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::arg("cannot evaluate on an empty dataset"));
    }
    let mut correct = 0usize;
    let mut nll = 0.0;
    for rec in records {
        let (p, l) = preference_probability(model, rec, rule)?;
        if p > 0.5 {
            correct += 1;
        }
        nll += l;
    }
    let n = records.len();
    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        nll: nll / n as f64,
        n_pairs: n,
    })
}

/// Writes `step,loss,accuracy,nll`; the last two are empty on unlogged steps.
pub fn write_history_csv<W: Write>(history: &[HistoryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,loss,accuracy,nll")?;
    for row in history {
        match row.eval {
            Some(e) => writeln!(out, "{},{},{},{}", row.step, row.loss, e.accuracy, e.nll)?,
            None => writeln!(out, "{},{},,", row.step, row.loss)?,
        }
    }
    Ok(())
}
