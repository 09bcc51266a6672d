//! Experiment configuration: a single JSON document.

use std::path::{Path, PathBuf};

use dip_core::data::{self, Dataset};
use dip_core::mixing::{lambda_prior, LambdaPrior, MixConfig, MixMode};
use dip_core::nn::Activation;
use dip_core::predictor::{PredictMode, DEFAULT_S_TEST};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "DIP_OUTPUT_DIR";

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Spirals {
        #[serde(default = "default_n_per_class")]
        n_per_class: usize,
        #[serde(default = "default_noise")]
        noise_std: f64,
        #[serde(default = "default_turns")]
        turns: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
        /// Optional held-out file; when absent the data is split.
        #[serde(default)]
        test_path: Option<PathBuf>,
    },
}

fn default_n_per_class() -> usize {
    500
}
fn default_noise() -> f64 {
    0.05
}
fn default_turns() -> f64 {
    1.75
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Spirals {
            n_per_class: default_n_per_class(),
            noise_std: default_noise(),
            turns: default_turns(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layer_sizes: vec![2, 64, 64, 2],
            activation: Activation::Relu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimSpec {
    pub learning_rate: f64,
    pub momentum: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl Default for OptimSpec {
    fn default() -> Self {
        OptimSpec {
            learning_rate: 0.1,
            momentum: 0.9,
            schedule: vec![(100, 0.1), (150, 0.1)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolSource {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorSpec {
    pub mode: PredictMode,
    pub s_test: usize,
    /// Prior `Beta(α+1, α)` at prediction time; defaults to the training α.
    pub alpha: Option<f64>,
    pub pool: PoolSource,
    pub seed: u64,
}

impl Default for PredictorSpec {
    fn default() -> Self {
        PredictorSpec {
            mode: PredictMode::Raw,
            s_test: DEFAULT_S_TEST,
            alpha: None,
            pool: PoolSource::Train,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSpec,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub standardize: bool,
    pub model: ModelSpec,
    pub mix: MixConfig,
    pub optim: OptimSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub predictor: PredictorSpec,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: DataSpec::default(),
            test_fraction: 0.5,
            split_seed: 0,
            standardize: true,
            model: ModelSpec::default(),
            mix: MixConfig::default(),
            optim: OptimSpec::default(),
            epochs: 200,
            batch_size: 64,
            predictor: PredictorSpec::default(),
            seeds: vec![0],
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads a config, or the `config` field of a run manifest.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::invalid(format!("cannot read {}: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        let (inner, manifest_seed) = match value.get("config") {
            Some(cfg) => (cfg.clone(), value.get("seed").and_then(|s| s.as_u64())),
            None => (value, None),
        };
        let mut cfg: ExperimentConfig = serde_json::from_value(inner)
            .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
        if let Some(seed) = manifest_seed {
            cfg.seeds = vec![seed];
        }
        Ok(cfg)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(default_output_dir)
    }

    pub fn training_prior(&self) -> dip_core::Result<LambdaPrior> {
        self.mix.prior()
    }

    /// Prediction-time prior: `Beta(α+1, α)`, or the point mass when α is 0.
    pub fn predictor_alpha(&self) -> f64 {
        self.predictor.alpha.unwrap_or(match self.mix.mode {
            MixMode::None => 0.0,
            _ => self.mix.alpha,
        })
    }

    pub fn predictor_prior(&self) -> dip_core::Result<LambdaPrior> {
        prediction_prior(self.predictor_alpha())
    }

    /// Checks every field and cross-field constraint, reporting all problems.
    pub fn validate(&self, data_dim: usize, n_classes: usize, n_train: usize) -> Vec<String> {
        let mut problems = Vec::new();
        let ls = &self.model.layer_sizes;
        if ls.len() < 2 || ls.contains(&0) {
            problems.push(format!(
                "model.layer_sizes must have >= 2 positive entries, got {ls:?}"
            ));
        } else {
            if ls[0] != data_dim {
                problems.push(format!(
                    "model.layer_sizes[0] = {} but the data has {data_dim} features",
                    ls[0]
                ));
            }
            if ls[ls.len() - 1] != n_classes {
                problems.push(format!(
                    "model output size {} but the data has {n_classes} classes",
                    ls[ls.len() - 1]
                ));
            }
        }
        if let Err(e) = self.mix.validate() {
            problems.push(format!("mix: {e}"));
        }
        let o = &self.optim;
        if !(o.learning_rate > 0.0 && o.learning_rate.is_finite()) {
            problems.push(format!(
                "optim.learning_rate must be positive, got {}",
                o.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            problems.push(format!(
                "optim.momentum must lie in [0, 1), got {}",
                o.momentum
            ));
        }
        if o.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            problems.push("optim.schedule epochs must be strictly increasing".into());
        }
        if o.schedule.iter().any(|&(_, f)| !(f > 0.0 && f.is_finite())) {
            problems.push("optim.schedule multipliers must be positive".into());
        }
        if self.epochs == 0 {
            problems.push("epochs must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size > n_train {
            problems.push(format!(
                "batch_size must lie in 1..={n_train} (training rows), got {}",
                self.batch_size
            ));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            problems.push(format!(
                "test_fraction must lie in (0, 1), got {}",
                self.test_fraction
            ));
        }
        if self.predictor.mode == PredictMode::Dip {
            if self.predictor.s_test == 0 {
                problems.push("predictor.s_test must be at least 1".into());
            }
            let a = self.predictor_alpha();
            if !(a >= 0.0 && a.is_finite()) {
                problems.push(format!("predictor alpha must be >= 0, got {a}"));
            }
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".into());
        }
        if let DataSpec::Spirals {
            n_per_class,
            noise_std,
            turns,
            ..
        } = &self.data
        {
            if *n_per_class == 0 {
                problems.push("data.n_per_class must be at least 1".into());
            }
            if noise_std.is_nan() || *noise_std < 0.0 {
                problems.push("data.noise_std must be >= 0".into());
            }
            if turns.is_nan() || *turns <= 0.0 {
                problems.push("data.turns must be positive".into());
            }
        }
        problems
    }
}

pub fn prediction_prior(alpha: f64) -> dip_core::Result<LambdaPrior> {
    if alpha == 0.0 {
        Ok(LambdaPrior::PointMassOne)
    } else {
        lambda_prior(MixMode::LabelPreserving, alpha)
    }
}

/// Loads or generates the raw dataset(s) described by a [`DataSpec`].
pub fn load_source(spec: &DataSpec) -> dip_core::Result<(Dataset, Option<Dataset>)> {
    match spec {
        DataSpec::Spirals {
            n_per_class,
            noise_std,
            turns,
            seed,
        } => Ok((
            data::gen_spirals(*n_per_class, *noise_std, *turns, *seed)?,
            None,
        )),
        DataSpec::Csv { path, test_path } => {
            let train = data::load_csv(path)?;
            let test = test_path.as_ref().map(data::load_csv).transpose()?;
            Ok((train, test))
        }
    }
}
