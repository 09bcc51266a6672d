//! Subcommands: gen-data, train, eval, bound, sweep, grid.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use anyhow::Context;
use clap::{Args, ValueEnum};
use dip_core::bounds::{bound_report, BoundReport};
use dip_core::data::{self, apply_stats, apply_stats_to_features, Dataset, StandardizeStats};
use dip_core::mixing::{lambda_prior, MixMode};
use dip_core::nn::ModelParams;
use dip_core::objective::write_metrics_csv;
use dip_core::predictor::{decision_grid_mapped, evaluate, PredictMode, PredictorConfig};
use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{default_output_dir, prediction_prior, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{self, CellSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Raw,
    Dip,
}

impl From<ModeArg> for PredictMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Raw => PredictMode::Raw,
            ModeArg::Dip => PredictMode::Dip,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum MixModeArg {
    None,
    LabelMixing,
    LabelPreserving,
}

impl From<MixModeArg> for MixMode {
    fn from(m: MixModeArg) -> Self {
        match m {
            MixModeArg::None => MixMode::None,
            MixModeArg::LabelMixing => MixMode::LabelMixing,
            MixModeArg::LabelPreserving => MixMode::LabelPreserving,
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn create_dir(path: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

fn load_model(path: &Path) -> CliResult<ModelParams> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::invalid(format!("cannot read model {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::invalid(format!("model {}: {e}", path.display())))
}

fn load_stats(path: Option<&Path>) -> CliResult<Option<StandardizeStats>> {
    path.map(|p| {
        let text = fs::read_to_string(p)
            .map_err(|e| CliError::invalid(format!("cannot read stats {}: {e}", p.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("stats {}: {e}", p.display())))
    })
    .transpose()
}

fn load_dataset(path: &Path, stats: Option<&StandardizeStats>) -> CliResult<Dataset> {
    let ds = data::load_csv(path)?;
    Ok(match stats {
        Some(s) => apply_stats(&ds, s)?,
        None => ds,
    })
}

// ---------------------------------------------------------------- gen-data

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    /// Points per class.
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Standard deviation of the Gaussian noise.
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.75)]
    pub turns: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output CSV (default: <output dir>/spirals.csv).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn cmd_gen_data(args: &GenDataArgs) -> CliResult<(PathBuf, Vec<usize>)> {
    let mut problems = Vec::new();
    if args.n == 0 {
        problems.push("--n must be at least 1".to_string());
    }
    if args.noise.is_nan() || args.noise < 0.0 {
        problems.push(format!("--noise must be >= 0, got {}", args.noise));
    }
    if !(args.turns.is_finite() && args.turns > 0.0) {
        problems.push(format!("--turns must be positive, got {}", args.turns));
    }
    if !problems.is_empty() {
        return Err(CliError::Invalid(problems));
    }
    let ds = data::gen_spirals(args.n, args.noise, args.turns, args.seed)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| default_output_dir().join("spirals.csv"));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    data::save_csv(&ds, &out).map_err(|e| CliError::Runtime(e.into()))?;
    Ok((out, ds.class_counts()))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Experiment config JSON, or a run manifest to reproduce.
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train this seed only.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

/// Resolved run record written next to every trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub config: ExperimentConfig,
    pub training_prior: String,
    pub predictor_prior: String,
    pub files: BTreeMap<String, String>,
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<Vec<PathBuf>> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    cfg.output_dir = Some(cfg.output_dir());
    let data = experiment::validate(&cfg)?;
    let training_prior = cfg.training_prior()?;
    let predictor_prior = cfg.predictor_prior()?;

    let out_dir = cfg.output_dir();
    create_dir(&out_dir)?;
    data::save_csv(&data.train, out_dir.join("train.csv"))
        .map_err(|e| CliError::Runtime(e.into()))?;
    data::save_csv(&data.test, out_dir.join("test.csv"))
        .map_err(|e| CliError::Runtime(e.into()))?;
    if let Some(stats) = &data.stats {
        write_json(&out_dir.join("stats.json"), stats)?;
    }

    let mut run_dirs = Vec::new();
    for &seed in &cfg.seeds {
        let run = experiment::train_seed(&cfg, &cfg.mix, &data, seed)
            .map_err(|e| CliError::Runtime(e.into()))?;
        let dir = out_dir.join(format!("seed_{seed}"));
        create_dir(&dir)?;
        write_json(&dir.join("model.json"), &run.params)?;
        let mut csv = Vec::new();
        write_metrics_csv(&run.metrics, &mut csv).context("formatting metrics")?;
        write_file(&dir.join("metrics.csv"), &csv)?;

        let mut run_cfg = cfg.clone();
        run_cfg.seeds = vec![seed];
        let files = BTreeMap::from([
            ("model".to_string(), "model.json".to_string()),
            ("metrics".to_string(), "metrics.csv".to_string()),
            ("train_data".to_string(), "../train.csv".to_string()),
            ("test_data".to_string(), "../test.csv".to_string()),
        ]);
        let manifest = Manifest {
            seed,
            config: run_cfg,
            training_prior: training_prior.to_string(),
            predictor_prior: predictor_prior.to_string(),
            files,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        run_dirs.push(dir);
    }
    Ok(run_dirs)
}

// ---------------------------------------------------------------- eval

#[derive(Debug, Clone, Args)]
pub struct PredictorArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Raw)]
    pub mode: ModeArg,
    /// Monte-Carlo draws per prediction in dip mode.
    #[arg(long, default_value_t = 500)]
    pub s_test: usize,
    /// Prediction prior Beta(alpha+1, alpha); 0 means no mixing.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Partner pool CSV for dip mode, in network input space (normally the
    /// `train.csv` written by `train`).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Standardization stats written by `train`, applied to raw-space
    /// inputs (`--data`, grid coordinates).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl PredictorArgs {
    /// `--pool` is read as network inputs; `fallback_pool` is used without it.
    fn build(&self, fallback_pool: Option<ArrayView2<f64>>) -> CliResult<PredictorConfig> {
        match self.mode {
            ModeArg::Raw => Ok(PredictorConfig::raw()),
            ModeArg::Dip => {
                if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
                    return Err(CliError::invalid(format!(
                        "alpha must be >= 0, got {}",
                        self.alpha
                    )));
                }
                if self.s_test == 0 {
                    return Err(CliError::invalid("--s-test must be at least 1"));
                }
                let pool = match (&self.pool, fallback_pool) {
                    (Some(path), _) => load_dataset(path, None)?.features().to_owned(),
                    (None, Some(features)) => features.to_owned(),
                    (None, None) => {
                        return Err(CliError::invalid(
                            "dip mode needs --pool (the training data CSV)",
                        ))
                    }
                };
                Ok(PredictorConfig::dip(
                    prediction_prior(self.alpha)?,
                    pool,
                    self.s_test,
                    self.seed,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Labelled CSV to score.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub predictor: PredictorArgs,
}

fn check_compatible(model: &ModelParams, ds: &Dataset) -> CliResult<()> {
    if model.input_dim() != ds.dim() || model.n_classes() != ds.n_classes() {
        return Err(CliError::invalid(format!(
            "model expects {} features and {} classes; data has {} features and {} classes",
            model.input_dim(),
            model.n_classes(),
            ds.dim(),
            ds.n_classes()
        )));
    }
    Ok(())
}

/// Metrics of one model on one dataset; the pool defaults to the scored data.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<serde_json::Value> {
    let model = load_model(&args.model)?;
    let stats = load_stats(args.predictor.stats.as_deref())?;
    let ds = load_dataset(&args.data, stats.as_ref())?;
    check_compatible(&model, &ds)?;
    let cfg = args.predictor.build(Some(ds.features()))?;
    let e = evaluate(&model, &ds, &cfg)?;
    Ok(json!({
        "accuracy": e.accuracy,
        "misclassification_rate": e.misclassification_rate,
        "mean_loss": e.mean_loss,
        "n": ds.len(),
        "mode": PredictMode::from(args.predictor.mode),
        "s_test": cfg.s_test,
        "prior": cfg.prior.to_string(),
        "seed": cfg.seed,
    }))
}

// ---------------------------------------------------------------- bound

#[derive(Debug, Clone, Args)]
pub struct BoundArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = MixModeArg::LabelPreserving)]
    pub mode: MixModeArg,
    /// Lipschitz constant of the loss.
    #[arg(long, default_value_t = 1.0)]
    pub rho: f64,
    /// Complexity constant of the base class.
    #[arg(long, default_value_t = 1.0)]
    pub c_h: f64,
    /// Nominal loss bound.
    #[arg(long, default_value_t = 10.0)]
    pub b: f64,
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Standardize features before computing the data terms.
    #[arg(long)]
    pub standardize: bool,
    #[arg(long)]
    pub stats: Option<PathBuf>,
}

pub fn cmd_bound(args: &BoundArgs) -> CliResult<BoundReport> {
    let stats = load_stats(args.stats.as_deref())?;
    let mut ds = load_dataset(&args.data, stats.as_ref())?;
    if args.standardize {
        ds = data::standardize(&ds).0;
    }
    let prior = lambda_prior(args.mode.into(), args.alpha)?;
    Ok(bound_report(
        ds.features(),
        &prior,
        args.rho,
        args.c_h,
        args.b,
        args.delta,
    )?)
}

// ---------------------------------------------------------------- sweep

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Comma-separated; 0 runs the unmixed baseline.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    pub alphas: Vec<f64>,
    #[arg(long = "s-values", value_delimiter = ',', default_value = "1")]
    pub s_values: Vec<usize>,
    /// Overrides the config's seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ProgressRecord {
    alpha: f64,
    samples: usize,
    seed: u64,
    mode: Option<MixMode>,
    train_err: Option<f64>,
    test_err: Option<f64>,
    gap: Option<f64>,
    error: Option<String>,
}

impl ProgressRecord {
    fn key(&self) -> (u64, usize, u64) {
        (self.alpha.to_bits(), self.samples, self.seed)
    }

    fn ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub csv_path: PathBuf,
    pub completed: usize,
    pub skipped: usize,
    pub failed: Vec<String>,
}

/// Mean and standard error (sample standard deviation over `√n`).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub const SWEEP_HEADER: &str =
    "alpha,S,mode,seed,train_err,test_err,gap,train_err_se,test_err_se,gap_se";

/// Runs every `(α, S, seed)` cell, appending each outcome to
/// `sweep_progress.jsonl`; cells already recorded as successful are skipped.
/// `sweep.csv` holds one row per seed plus one `seed = agg` row per cell.
pub fn cmd_sweep(args: &SweepArgs) -> CliResult<SweepSummary> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seeds) = &args.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = Some(dir.clone());
    }
    if args.alphas.is_empty() || args.s_values.is_empty() {
        return Err(CliError::invalid("empty alpha or S grid"));
    }
    let mut problems = Vec::new();
    if args.alphas.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
        problems.push("alphas must be >= 0".to_string());
    }
    if args.s_values.contains(&0) {
        problems.push("S values must be >= 1".to_string());
    }
    // The config's own mixing block is replaced per cell; validate the rest.
    let mut base = cfg.clone();
    base.mix = Default::default();
    let data = match experiment::validate(&base) {
        Ok(d) => d,
        Err(CliError::Invalid(mut p)) => {
            problems.append(&mut p);
            return Err(CliError::Invalid(problems));
        }
        Err(e) => return Err(e),
    };
    if !problems.is_empty() {
        return Err(CliError::Invalid(problems));
    }

    let out_dir = cfg.output_dir();
    create_dir(&out_dir)?;
    let progress_path = out_dir.join("sweep_progress.jsonl");
    let mut done: BTreeMap<(u64, usize, u64), ProgressRecord> = BTreeMap::new();
    if progress_path.exists() {
        let f = File::open(&progress_path).context("opening progress file")?;
        for line in BufReader::new(f).lines() {
            let line = line.context("reading progress file")?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ProgressRecord = serde_json::from_str(&line)
                .with_context(|| format!("corrupt progress line {line:?}"))?;
            if rec.ok() {
                done.insert(rec.key(), rec);
            }
        }
    }

    let mut cells = Vec::new();
    for &alpha in &args.alphas {
        // S has no effect without mixing.
        let s_values: &[usize] = if alpha == 0.0 { &[1] } else { &args.s_values };
        for &samples in s_values {
            for &seed in &cfg.seeds {
                cells.push(CellSpec {
                    alpha,
                    samples,
                    seed,
                });
            }
        }
    }
    cells.dedup();
    let pending: Vec<CellSpec> = cells
        .iter()
        .filter(|c| !done.contains_key(&(c.alpha.to_bits(), c.samples, c.seed)))
        .copied()
        .collect();
    let skipped = cells.len() - pending.len();

    let progress = Mutex::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&progress_path)
            .context("opening progress file")?,
    );
    let fresh: Vec<ProgressRecord> = pending
        .par_iter()
        .map(|cell| {
            let rec = match experiment::run_cell(&cfg, &data, cell) {
                Ok((mix, ev)) => ProgressRecord {
                    alpha: cell.alpha,
                    samples: cell.samples,
                    seed: cell.seed,
                    mode: Some(mix.mode),
                    train_err: Some(ev.train.misclassification_rate),
                    test_err: Some(ev.test.misclassification_rate),
                    gap: Some(ev.gap),
                    error: None,
                },
                Err(e) => ProgressRecord {
                    alpha: cell.alpha,
                    samples: cell.samples,
                    seed: cell.seed,
                    mode: None,
                    train_err: None,
                    test_err: None,
                    gap: None,
                    error: Some(e.to_string()),
                },
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            let mut f = progress.lock().expect("progress lock");
            let _ = writeln!(f, "{line}").and_then(|_| f.flush());
            rec
        })
        .collect();

    let mut failed = Vec::new();
    let completed = fresh.iter().filter(|r| r.ok()).count();
    for rec in fresh {
        if let Some(err) = &rec.error {
            failed.push(format!(
                "alpha={} S={} seed={}: {err}",
                rec.alpha, rec.samples, rec.seed
            ));
        } else {
            done.insert(rec.key(), rec);
        }
    }

    let csv_path = out_dir.join("sweep.csv");
    let f = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    let mut w = BufWriter::new(f);
    write_sweep_csv(&cells, &done, &mut w).context("writing sweep csv")?;
    w.flush().context("writing sweep csv")?;
    Ok(SweepSummary {
        csv_path,
        completed,
        skipped,
        failed,
    })
}

fn write_sweep_csv<W: Write>(
    cells: &[CellSpec],
    done: &BTreeMap<(u64, usize, u64), ProgressRecord>,
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    let mut groups: Vec<(f64, usize)> = Vec::new();
    for c in cells {
        if !groups.contains(&(c.alpha, c.samples)) {
            groups.push((c.alpha, c.samples));
        }
    }
    for (alpha, samples) in groups {
        let recs: Vec<&ProgressRecord> = cells
            .iter()
            .filter(|c| c.alpha == alpha && c.samples == samples)
            .filter_map(|c| done.get(&(c.alpha.to_bits(), c.samples, c.seed)))
            .collect();
        if recs.is_empty() {
            continue;
        }
        let mode = recs[0].mode.map(|m| m.to_string()).unwrap_or_default();
        for r in &recs {
            writeln!(
                w,
                "{alpha},{samples},{mode},{},{},{},{},,,",
                r.seed,
                r.train_err.unwrap_or(f64::NAN),
                r.test_err.unwrap_or(f64::NAN),
                r.gap.unwrap_or(f64::NAN)
            )?;
        }
        let col = |f: fn(&ProgressRecord) -> Option<f64>| -> Vec<f64> {
            recs.iter().filter_map(|r| f(r)).collect()
        };
        let (tr, tr_se) = mean_se(&col(|r| r.train_err));
        let (te, te_se) = mean_se(&col(|r| r.test_err));
        let (gap, gap_se) = mean_se(&col(|r| r.gap));
        writeln!(
            w,
            "{alpha},{samples},{mode},agg,{tr},{te},{gap},{tr_se},{te_se},{gap_se}"
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------- grid

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    pub xmin: f64,
    #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
    pub xmax: f64,
    #[arg(long, default_value_t = -1.5, allow_hyphen_values = true)]
    pub ymin: f64,
    #[arg(long, default_value_t = 1.5, allow_hyphen_values = true)]
    pub ymax: f64,
    #[arg(long, default_value_t = 128)]
    pub res: usize,
    #[command(flatten)]
    pub predictor: PredictorArgs,
    /// Output path prefix; writes <out>.csv and <out>.pgm.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Grid coordinates are in the raw data space; `--stats` maps them to
/// network inputs.
pub fn cmd_grid(args: &GridArgs) -> CliResult<(PathBuf, PathBuf)> {
    let model = load_model(&args.model)?;
    if model.input_dim() != 2 {
        return Err(dip_core::Error::UnsupportedDimension(model.input_dim()).into());
    }
    let stats = load_stats(args.predictor.stats.as_deref())?;
    let cfg = args.predictor.build(None)?;
    let grid = decision_grid_mapped(
        &model,
        &cfg,
        (args.xmin, args.xmax),
        (args.ymin, args.ymax),
        args.res,
        |pts| match &stats {
            Some(s) => apply_stats_to_features(pts, s),
            None => Ok(pts.to_owned()),
        },
    )?;
    let prefix = args
        .out
        .clone()
        .unwrap_or_else(|| default_output_dir().join("grid"));
    if let Some(parent) = prefix.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let csv_path = prefix.with_extension("csv");
    let pgm_path = prefix.with_extension("pgm");
    let mut csv = Vec::new();
    grid.write_csv(&mut csv).context("formatting grid")?;
    write_file(&csv_path, &csv)?;
    let mut pgm = Vec::new();
    grid.write_pgm(&mut pgm).context("formatting grid")?;
    write_file(&pgm_path, &pgm)?;
    Ok((csv_path, pgm_path))
}
