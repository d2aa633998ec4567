use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use purm::rl::{EnvConfig, PenaltyKind, RlConfig, RmKind};
use purm::synth_data::LabelMode;
use purm::training::{ModelSpec, TrainConfig};
use purm::uncertainty::BufferConfig;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub world: WorldSection,
    pub data: DataSection,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub uncertainty: UncertaintySection,
    pub rl: RlSection,
    pub output: OutputSection,
    pub seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldSection::default(),
            data: DataSection::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            uncertainty: UncertaintySection::default(),
            rl: RlSection::default(),
            output: OutputSection::default(),
            seeds: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSection {
    pub seed: u64,
    pub dim: usize,
}

impl Default for WorldSection {
    fn default() -> Self {
        Self { seed: 7, dim: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: usize,
    /// Size of the clean held-out set written next to the training set.
    pub test_n: usize,
    pub reversal_ratio: f64,
    /// Translation of the sampling box in half-widths, on every coordinate.
    pub shift_offset: f64,
    pub shift_scale: f64,
    pub label_mode: LabelMode,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            n: 2000,
            test_n: 1000,
            reversal_ratio: 0.0,
            shift_offset: 0.0,
            shift_scale: 1.0,
            label_mode: LabelMode::BradleyTerry,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    pub initial_size: usize,
    pub window: usize,
    pub rho_grid: Vec<f64>,
    pub shift_offsets: Vec<f64>,
    /// Features per shifted evaluation set.
    pub eval_n: usize,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        let buffer = BufferConfig::default();
        Self {
            initial_size: buffer.initial_size,
            window: buffer.window,
            rho_grid: (0..=10).map(|i| i as f64 / 10.0).collect(),
            shift_offsets: vec![0.0, 1.0, 2.0, 3.0],
            eval_n: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub rm_kind: RmKind,
    pub penalty_kind: PenaltyKind,
    pub lambda: f64,
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_log_std: f64,
    pub whiten_advantages: bool,
    pub env: EnvConfig,
}

impl Default for RlSection {
    fn default() -> Self {
        let rl = RlConfig::default();
        Self {
            rm_kind: rl.rm_kind,
            penalty_kind: rl.penalty_kind,
            lambda: rl.lambda,
            beta: rl.beta,
            steps: rl.steps,
            batch_size: rl.batch_size,
            learning_rate: rl.learning_rate,
            init_log_std: rl.init_log_std,
            whiten_advantages: rl.whiten_advantages,
            env: EnvConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Usage(m));
        if self.world.dim == 0 {
            return bad("world.dim must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.data.n == 0 || self.data.test_n == 0 {
            return bad("data.n and data.test_n must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.data.reversal_ratio) {
            return bad(format!("data.reversal_ratio must lie in [0, 1], got {}", self.data.reversal_ratio));
        }
        if !(self.data.shift_scale > 0.0 && self.data.shift_scale.is_finite() && self.data.shift_offset.is_finite()) {
            return bad("data.shift_scale must be positive and data.shift_offset finite".into());
        }
        if self.uncertainty.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return bad("uncertainty.rho_grid values must lie in [0, 1]".into());
        }
        if self.uncertainty.shift_offsets.iter().any(|o| !o.is_finite()) {
            return bad("uncertainty.shift_offsets must be finite".into());
        }
        if self.uncertainty.eval_n < 2 {
            return bad("uncertainty.eval_n must be >= 2".into());
        }
        if self.model.hidden == 0 || self.model.ensemble_size == 0 {
            return bad("model.hidden and model.ensemble_size must be >= 1".into());
        }
        self.train.validate()?;
        self.rl_config().validate()?;
        self.rl.env.validate()?;
        Ok(())
    }

    /// The first configured seed; single-run commands use it.
    pub fn base_seed(&self) -> u64 {
        self.seeds[0]
    }

    pub fn buffer(&self) -> BufferConfig {
        BufferConfig {
            initial_size: self.uncertainty.initial_size,
            window: self.uncertainty.window,
        }
    }

    pub fn rl_config(&self) -> RlConfig {
        let s = &self.rl;
        RlConfig {
            rm_kind: s.rm_kind,
            penalty_kind: s.penalty_kind,
            lambda: s.lambda,
            beta: s.beta,
            steps: s.steps,
            batch_size: s.batch_size,
            learning_rate: s.learning_rate,
            init_log_std: s.init_log_std,
            whiten_advantages: s.whiten_advantages,
            seeds: self.seeds.clone(),
            buffer: self.buffer(),
        }
    }
}
