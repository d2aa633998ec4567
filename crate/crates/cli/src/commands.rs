use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use serde::Serialize;

use purm::reward_models::checkpoint::{self, Checkpoint};
use purm::reward_models::Aggregation;
use purm::rl::{run_experiment, RunSummary};
use purm::seeding;
use purm::studies::{aleatoric_sweep, epistemic_eval};
use purm::synth_data::{inject_reversal, load_dataset, make_world, sample_pairs_in, save_dataset, DatasetMeta, Shift};
use purm::training::{evaluate, train, write_history_csv, TrainConfig};

use crate::{io_error, CliError, Context, ExperimentConfig};

// Seed stream labels owned by the command layer.
const STREAM_TRAIN_SET: u64 = 101;
const STREAM_TEST_SET: u64 = 102;
const STREAM_REVERSAL: u64 = 103;
const STREAM_TRAINING: u64 = 104;

pub const METRICS_HEADER: &str = "step,proxy_reward_mean,true_reward_mean,kl,uncertainty_mean";
pub const REPORT_FILE: &str = "report.md";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn training_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        seed: seeding::derive(cfg.base_seed(), &[STREAM_TRAINING, cfg.train.seed]),
        ..cfg.train.clone()
    }
}

/// Median of a non-empty slice; the mean of the middle two for even lengths.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn gen_data(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.require_config()?;
    let out = ctx.out_dir()?;
    let world = make_world(cfg.world.seed, cfg.world.dim)?;
    let seed = cfg.base_seed();
    let shift = Shift {
        offset: world.half_width.iter().map(|h| h * cfg.data.shift_offset).collect(),
        scale: cfg.data.shift_scale,
    };

    let mut rng = seeding::rng(seed, &[STREAM_TRAIN_SET]);
    let clean = sample_pairs_in(&world, &shift, cfg.data.n, cfg.data.label_mode, &mut rng)?;
    let train_set = inject_reversal(clean, cfg.data.reversal_ratio, &mut seeding::rng(seed, &[STREAM_REVERSAL]))?;
    let meta = DatasetMeta::new(&world, cfg.data.n, cfg.data.reversal_ratio, shift)?;
    save_dataset(&train_set, &meta, &out.join("train.jsonl"))?;

    let none = Shift::none(cfg.world.dim);
    let mut rng = seeding::rng(seed, &[STREAM_TEST_SET]);
    let test_set = sample_pairs_in(&world, &none, cfg.data.test_n, cfg.data.label_mode, &mut rng)?;
    let meta = DatasetMeta::new(&world, cfg.data.test_n, 0.0, none)?;
    save_dataset(&test_set, &meta, &out.join("test.jsonl"))?;
    info!("wrote {} train and {} test pairs to {}", cfg.data.n, cfg.data.test_n, out.display());
    Ok(())
}

pub fn train_rm(ctx: &Context, dataset: Option<&Path>) -> Result<(), CliError> {
    let cfg = ctx.require_config()?;
    let out = ctx.out_dir()?;
    let path = dataset.map_or_else(|| out.join("train.jsonl"), Path::to_path_buf);
    let (records, _) = load_dataset(&path)?;
    let train_cfg = training_config(cfg);
    info!("training {} on {} pairs for {} steps", cfg.model.kind.as_str(), records.len(), train_cfg.steps);
    let outcome = train(&cfg.model, &records, &train_cfg)?;
    checkpoint::save(
        &Checkpoint {
            model: outcome.model,
            seed: train_cfg.seed,
        },
        &out.join("model.ckpt"),
    )?;
    let loss_path = out.join("loss.csv");
    let mut w = create(&loss_path)?;
    write_history_csv(&outcome.history, &mut w).map_err(|e| io_error(&loss_path, e))?;
    w.flush().map_err(|e| io_error(&loss_path, e))
}

pub fn eval_rm(
    ctx: &Context,
    checkpoint_path: Option<&Path>,
    dataset: Option<&Path>,
    rule: Aggregation,
) -> Result<(), CliError> {
    let ckpt_path = checkpoint_path.map_or_else(|| ctx.out.join("model.ckpt"), Path::to_path_buf);
    let data_path = dataset.map_or_else(|| ctx.out.join("test.jsonl"), Path::to_path_buf);
    let ckpt = checkpoint::load(&ckpt_path)?;
    let (records, _) = load_dataset(&data_path)?;
    let report = evaluate(&ckpt.model, &records, rule)?;
    let text = serde_json::to_string(&report).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

pub fn uncertainty_eval(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.require_config()?;
    let out = ctx.out_dir()?;
    let world = make_world(cfg.world.seed, cfg.world.dim)?;
    let train_cfg = training_config(cfg);
    let seed = cfg.base_seed();
    let u = &cfg.uncertainty;

    let path = out.join("aleatoric.csv");
    let mut w = create(&path)?;
    let io = |e| io_error(&path, e);
    writeln!(w, "rho,purm_uncertainty,bte_std").map_err(io)?;
    for row in aleatoric_sweep(&world, cfg.data.n, &u.rho_grid, &cfg.model, &train_cfg, seed)? {
        writeln!(w, "{},{},{}", row.rho, row.purm_uncertainty, row.bte_std).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let path = out.join("epistemic.csv");
    let mut w = create(&path)?;
    let io = |e| io_error(&path, e);
    writeln!(w, "offset,purm_uncertainty,bte_std").map_err(io)?;
    for row in epistemic_eval(&world, cfg.data.n, u.eval_n, &u.shift_offsets, &cfg.model, &train_cfg, seed)? {
        writeln!(w, "{},{},{}", row.offset, row.purm_uncertainty, row.bte_std).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[derive(Debug, Serialize)]
struct SeedSummary {
    seed: u64,
    baseline_true_reward: f64,
    #[serde(flatten)]
    summary: RunSummary,
}

#[derive(Debug, Serialize)]
struct ExperimentSummary {
    rm_kind: &'static str,
    penalty_kind: &'static str,
    lambda: f64,
    seeds: Vec<u64>,
    median_effective_learning_step: f64,
    median_peak_true_reward: f64,
    median_final_true_reward: f64,
    runs: Vec<SeedSummary>,
}

pub fn run_rl(ctx: &Context) -> Result<(), CliError> {
    let cfg = ctx.require_config()?;
    let out = ctx.out_dir()?;
    let rl = cfg.rl_config();
    info!(
        "running {} / {} (lambda {}) on seeds {:?}",
        rl.rm_kind.as_str(),
        rl.penalty_kind.as_str(),
        rl.lambda,
        rl.seeds
    );
    let runs = run_experiment(&cfg.rl.env, &cfg.model, &cfg.train, &rl)?;
    let mut seeds = Vec::with_capacity(runs.len());
    for run in &runs {
        let path = out.join(format!("seed_{}.csv", run.seed));
        let mut w = create(&path)?;
        run.metrics.write_csv(&mut w).and_then(|_| w.flush()).map_err(|e| io_error(&path, e))?;
        write_json(&out.join(format!("seed_{}.json", run.seed)), &run.summary)?;
        info!(
            "seed {}: peak {:.4} at step {}, final {:.4}",
            run.seed, run.summary.peak_true_reward, run.summary.effective_learning_step, run.summary.final_true_reward
        );
        seeds.push(SeedSummary {
            seed: run.seed,
            baseline_true_reward: run.baseline_true_reward,
            summary: run.summary,
        });
    }
    let pick = |f: fn(&RunSummary) -> f64| median(&runs.iter().map(|r| f(&r.summary)).collect::<Vec<_>>());
    let summary = ExperimentSummary {
        rm_kind: rl.rm_kind.as_str(),
        penalty_kind: rl.penalty_kind.as_str(),
        lambda: rl.lambda,
        seeds: rl.seeds.clone(),
        median_effective_learning_step: pick(|s| s.effective_learning_step as f64),
        median_peak_true_reward: pick(|s| s.peak_true_reward),
        median_final_true_reward: pick(|s| s.final_true_reward),
        runs: seeds,
    };
    write_json(&out.join("summary.json"), &summary)
}

/// One metrics file as read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsFile {
    pub name: String,
    pub true_reward: Vec<f64>,
    pub proxy_reward: Vec<f64>,
    pub kl: Vec<f64>,
}

fn parse_metrics(path: &Path, text: &str) -> Result<Option<MetricsFile>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Ok(None);
    }
    let bad = |i: usize, m: &str| CliError::Runtime(format!("{}:{}: {m}", path.display(), i + 2));
    let mut file = MetricsFile {
        name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        true_reward: vec![],
        proxy_reward: vec![],
        kl: vec![],
    };
    for (i, line) in lines.enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 5 {
            return Err(bad(i, "expected 5 columns"));
        }
        let num = |c: &str| c.parse::<f64>().map_err(|_| bad(i, "not a number"));
        file.proxy_reward.push(num(cols[1])?);
        file.true_reward.push(num(cols[2])?);
        file.kl.push(num(cols[3])?);
    }
    if file.true_reward.is_empty() {
        return Err(bad(0, "no metric rows"));
    }
    Ok(Some(file))
}

/// Reads every metrics CSV directly inside `run_dir`, sorted by file name.
pub fn read_metrics_dir(run_dir: &Path) -> Result<Vec<MetricsFile>, CliError> {
    let entries = std::fs::read_dir(run_dir).map_err(|e| io_error(run_dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    let mut files = vec![];
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| io_error(&p, e))?;
        files.extend(parse_metrics(&p, &text)?);
    }
    Ok(files)
}

/// Renders the summary table for the given runs.
pub fn render_report(files: &[MetricsFile]) -> String {
    let mut s = String::new();
    s.push_str("| run | steps | effective learning step | peak true reward | final true reward | final proxy reward | final kl |\n");
    s.push_str("|---|---:|---:|---:|---:|---:|---:|\n");
    for f in files {
        // Earliest maximum, as in the run summaries.
        let (step, peak) = f
            .true_reward
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
        let last = f.true_reward.len() - 1;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
            f.name,
            f.true_reward.len(),
            step,
            peak,
            f.true_reward[last],
            f.proxy_reward[last],
            f.kl[last]
        );
    }
    s
}

/// Writes `report.md` into `run_dir` and returns its contents.
pub fn report(run_dir: &Path) -> Result<String, CliError> {
    let files = read_metrics_dir(run_dir)?;
    if files.is_empty() {
        return Err(CliError::Runtime(format!("no metrics CSVs in {}", run_dir.display())));
    }
    let table = render_report(&files);
    let path = run_dir.join(REPORT_FILE);
    std::fs::write(&path, &table).map_err(|e| io_error(&path, e))?;
    Ok(table)
}
