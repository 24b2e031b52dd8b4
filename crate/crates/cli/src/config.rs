use std::path::{Path, PathBuf};

use cutrack_core::adaformer::EncoderConfig;
use cutrack_core::datasets::SynthConfig;
use cutrack_core::experiment::ExperimentConfig;
use cutrack_core::trackers::{Ablation, ModelConfig, Paradigm, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable that replaces the `seed` key.
pub const SEED_ENV: &str = "CUTRACK_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Small,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSwitches {
    pub adaformer_on: bool,
    pub unified_inputs_on: bool,
    pub unified_objective_on: bool,
}

impl Default for AblationSwitches {
    fn default() -> Self {
        Self {
            adaformer_on: true,
            unified_inputs_on: true,
            unified_objective_on: true,
        }
    }
}

impl From<AblationSwitches> for Ablation {
    fn from(s: AblationSwitches) -> Self {
        Ablation {
            adaformer: s.adaformer_on,
            unified_inputs: s.unified_inputs_on,
            unified_objective: s.unified_objective_on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Dataset directory used for training instead of generating `data`.
    pub train_data: Option<PathBuf>,
    /// Dataset directory used for evaluation instead of generating `eval_data`.
    pub eval_data: Option<PathBuf>,
}

fn default_paradigm() -> Paradigm {
    Paradigm::Motion
}
fn default_alpha() -> f64 {
    1.0
}
fn default_beta() -> f64 {
    0.4
}
fn default_train_data() -> SynthConfig {
    SynthConfig {
        sequences: 200,
        seed: 1000,
        ..SynthConfig::default()
    }
}
fn default_eval_data() -> SynthConfig {
    SynthConfig {
        sequences: 10,
        seed: 99,
        ..SynthConfig::default()
    }
}

/// One experiment, as a single JSON document. Absent keys take their defaults;
/// unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_paradigm")]
    pub paradigm: Paradigm,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub preset: Preset,
    /// Replaces the preset's encoder.
    #[serde(default)]
    pub encoder: Option<EncoderConfig>,
    #[serde(default)]
    pub head_hidden: Option<usize>,
    #[serde(default)]
    pub n_t: Option<usize>,
    #[serde(default)]
    pub n_s: Option<usize>,
    #[serde(default)]
    pub seg_threshold: Option<f64>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ablation: AblationSwitches,
    /// Seeds parameter initialization, training and tracking; overrides `train.seed`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_train_data")]
    pub data: SynthConfig,
    #[serde(default = "default_eval_data")]
    pub eval_data: SynthConfig,
    #[serde(default)]
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config is valid")
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config {
                path: if path == "." { "<root>".into() } else { path },
                message: e.into_inner().to_string(),
            }
        })
    }

    /// Reads, applies the environment seed override and validates.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = crate::read_text(path)?;
        let mut cfg = Self::parse(&text)?;
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v.trim().parse().map_err(|_| CliError::Config {
                path: format!("seed (from {SEED_ENV})"),
                message: format!("expected an unsigned integer, got {v:?}"),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        let base = match self.preset {
            Preset::Small => ModelConfig::small(self.paradigm),
            Preset::Standard => ModelConfig::standard(self.paradigm),
        };
        ModelConfig {
            encoder: self.encoder.clone().unwrap_or(base.encoder.clone()),
            head_hidden: self.head_hidden.unwrap_or(base.head_hidden),
            n_t: self.n_t.unwrap_or(base.n_t),
            n_s: self.n_s.unwrap_or(base.n_s),
            seg_threshold: self.seg_threshold.unwrap_or(base.seg_threshold),
            alpha: self.alpha,
            beta: self.beta,
            ablation: self.ablation.into(),
            ..base
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model_config(),
            train: self.train_config(),
            train_data: self.data.clone(),
            eval_data: self.eval_data.clone(),
            model_seed: self.seed,
            track_seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |path: &str, e: cutrack_core::Error| CliError::Config {
            path: path.into(),
            message: e.to_string(),
        };
        let bad = |path: &str, message: String| {
            Err(CliError::Config {
                path: path.into(),
                message,
            })
        };
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(
                "alpha",
                format!("must be a finite number > 0, got {}", self.alpha),
            );
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad("beta", format!("must lie in (0, 1], got {}", self.beta));
        }
        if let Some(enc) = &self.encoder {
            enc.validate().map_err(|e| fail("encoder", e))?;
        }
        self.train.validate().map_err(|e| fail("train", e))?;
        self.data.validate().map_err(|e| fail("data", e))?;
        self.eval_data
            .validate()
            .map_err(|e| fail("eval_data", e))?;
        let key = if self.encoder.is_some() {
            "encoder"
        } else {
            "n_s"
        };
        self.model_config().validate().map_err(|e| fail(key, e))?;
        Ok(())
    }
}
