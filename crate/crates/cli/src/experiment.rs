//! Shared experiment pipeline: data preparation, training, evaluation.

use dip_core::data::{apply_stats, split, standardize, Dataset, StandardizeStats};
use dip_core::mixing::{MixConfig, MixMode};
use dip_core::nn::{mlp_init, ModelParams, OptimState};
use dip_core::objective::{train, EpochMetrics};
use dip_core::predictor::{evaluate, Evaluation, PredictMode, PredictorConfig};
use dip_core::{bounds, RngStream};
use serde::{Deserialize, Serialize};

use crate::config::{load_source, ExperimentConfig, PoolSource};
use crate::error::{CliError, CliResult};

/// Train/test data as the network sees it.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Dataset,
    pub test: Dataset,
    pub stats: Option<StandardizeStats>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> dip_core::Result<PreparedData> {
    let (full, held_out) = load_source(&cfg.data)?;
    let (train, test) = match held_out {
        Some(test) => (full, test),
        None => split(&full, cfg.test_fraction, cfg.split_seed)?,
    };
    if cfg.standardize {
        let (train, stats) = standardize(&train);
        let test = apply_stats(&test, &stats)?;
        Ok(PreparedData {
            train,
            test,
            stats: Some(stats),
        })
    } else {
        Ok(PreparedData {
            train,
            test,
            stats: None,
        })
    }
}

/// Loads the data and validates the whole config against it.
pub fn validate(cfg: &ExperimentConfig) -> CliResult<PreparedData> {
    let mut problems = Vec::new();
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        problems.push(format!(
            "test_fraction must lie in (0, 1), got {}",
            cfg.test_fraction
        ));
        return Err(CliError::Invalid(problems));
    }
    let data = match prepare_data(cfg) {
        Ok(d) => d,
        Err(e) => {
            problems.push(format!("data: {e}"));
            return Err(CliError::Invalid(problems));
        }
    };
    if data.train.n_classes() != data.test.n_classes() || data.train.dim() != data.test.dim() {
        problems.push("train and test data differ in feature width or class count".into());
    }
    problems.extend(cfg.validate(data.train.dim(), data.train.n_classes(), data.train.len()));
    if problems.is_empty() {
        Ok(data)
    } else {
        Err(CliError::Invalid(problems))
    }
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub params: ModelParams,
    pub metrics: Vec<EpochMetrics>,
}

/// Trains one network. Initialization uses `seed` directly; the training
/// stream (shuffling, mixing draws) is a derived stream of the same seed.
pub fn train_seed(
    cfg: &ExperimentConfig,
    mix: &MixConfig,
    data: &PreparedData,
    seed: u64,
) -> dip_core::Result<TrainedRun> {
    let params = mlp_init(&cfg.model.layer_sizes, cfg.model.activation, seed)?;
    let mut optim = OptimState::new(
        cfg.optim.learning_rate,
        cfg.optim.momentum,
        cfg.optim.schedule.clone(),
        &params,
    )?;
    let mut rng = RngStream::new(seed).derive(0);
    let (params, metrics) = train(
        params,
        &data.train,
        mix,
        &mut optim,
        cfg.epochs,
        cfg.batch_size,
        &mut rng,
    )?;
    Ok(TrainedRun { params, metrics })
}

/// Predictor for a run: raw, or marginalized with `Beta(α+1, α)` and
/// partners from the configured pool.
pub fn predictor_for(
    cfg: &ExperimentConfig,
    mode: PredictMode,
    alpha: f64,
    data: &PreparedData,
    seed: u64,
) -> dip_core::Result<PredictorConfig> {
    match mode {
        PredictMode::Raw => Ok(PredictorConfig::raw()),
        PredictMode::Dip => {
            let pool = match cfg.predictor.pool {
                PoolSource::Train => data.train.features().to_owned(),
                PoolSource::Test => data.test.features().to_owned(),
            };
            Ok(PredictorConfig::dip(
                crate::config::prediction_prior(alpha)?,
                pool,
                cfg.predictor.s_test,
                cfg.predictor.seed ^ seed,
            ))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub train: Evaluation,
    pub test: Evaluation,
    pub gap: f64,
}

pub fn evaluate_run(
    params: &ModelParams,
    data: &PreparedData,
    predictor: &PredictorConfig,
) -> dip_core::Result<RunEvaluation> {
    let train = evaluate(params, &data.train, predictor)?;
    let test = evaluate(params, &data.test, predictor)?;
    Ok(RunEvaluation {
        train,
        test,
        gap: bounds::generalization_gap(&train, &test),
    })
}

/// One sweep cell: `α = 0` is plain training with raw prediction; otherwise
/// the configured mixing mode (label mixing when the config has none) with
/// `S` draws, predicted with the configured predictor mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub alpha: f64,
    pub samples: usize,
    pub seed: u64,
}

impl CellSpec {
    pub fn mix_config(&self, cfg: &ExperimentConfig) -> MixConfig {
        if self.alpha == 0.0 {
            return MixConfig {
                mode: MixMode::None,
                alpha: 0.0,
                samples: 1,
                partner: cfg.mix.partner,
            };
        }
        let mode = match cfg.mix.mode {
            MixMode::None => MixMode::LabelMixing,
            m => m,
        };
        MixConfig {
            mode,
            alpha: self.alpha,
            samples: self.samples,
            partner: cfg.mix.partner,
        }
    }

    pub fn predict_mode(&self, cfg: &ExperimentConfig) -> PredictMode {
        if self.alpha == 0.0 {
            PredictMode::Raw
        } else {
            cfg.predictor.mode
        }
    }
}

pub fn run_cell(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    cell: &CellSpec,
) -> dip_core::Result<(MixConfig, RunEvaluation)> {
    let mix = cell.mix_config(cfg);
    mix.validate()?;
    let run = train_seed(cfg, &mix, data, cell.seed)?;
    let predictor = predictor_for(cfg, cell.predict_mode(cfg), cell.alpha, data, cell.seed)?;
    Ok((mix, evaluate_run(&run.params, data, &predictor)?))
}
