//! JSON run configuration.
//!
//! Every field has a default; an empty object `{}` selects them all.
//! Unknown keys are rejected at every level.

use std::path::Path;

use serde::{Deserialize, Serialize};

use ditctrl_core::metrics::DEFAULT_LAMBDA;
use ditctrl_core::{ControlConfig, ModelConfig, PromptSchedule, PromptSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const SEED_ENV: &str = "DITCTRL_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Toy model dimensions. The weight seed is the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub channels: usize,
    pub identity_denoiser: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            n_layers: m.n_layers,
            n_heads: m.n_heads,
            d_model: m.d_model,
            channels: m.channels,
            identity_denoiser: m.identity_denoiser,
        }
    }
}

/// Which optional artifacts a run writes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DumpFlags {
    /// Semantic masks of the last controlled step, as PGM frames.
    pub masks: bool,
    /// The blended global latent after every step.
    pub step_latents: bool,
    /// Per-segment latents after the last step.
    pub segments: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub prompts: Vec<PromptSpec>,
    pub model: ModelSection,
    pub height: usize,
    pub width: usize,
    pub segment_frames: usize,
    pub overlap: usize,
    pub steps: usize,
    pub control: ControlConfig,
    pub cscv_lambda: f64,
    pub dump: DumpFlags,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            prompts: vec![
                PromptSpec::new("a man walks along the beach", vec![1]),
                PromptSpec::new("a man rides a horse along the beach", vec![1]),
            ],
            model: ModelSection::default(),
            height: 4,
            width: 4,
            segment_frames: 13,
            overlap: 6,
            steps: 50,
            control: ControlConfig::default(),
            cscv_lambda: DEFAULT_LAMBDA,
            dump: DumpFlags::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Load `path`, or the defaults when no path is given, then apply the
    /// seed override from the environment.
    pub fn resolve(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => RunConfig::default(),
        };
        if let Ok(raw) = std::env::var(SEED_ENV) {
            cfg.seed = raw.trim().parse().map_err(|_| {
                ConfigError::Invalid(format!("{SEED_ENV}={raw:?} is not a u64 seed"))
            })?;
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Single-line form used in manifests.
    pub fn to_json_compact(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_layers: self.model.n_layers,
            n_heads: self.model.n_heads,
            d_model: self.model.d_model,
            channels: self.model.channels,
            seed: self.seed,
            identity_denoiser: self.model.identity_denoiser,
        }
    }

    pub fn schedule(&self) -> PromptSchedule {
        PromptSchedule {
            prompts: self.prompts.clone(),
            segment_frames: self.segment_frames,
            overlap: self.overlap,
            height: self.height,
            width: self.width,
            steps: self.steps,
            control: self.control.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.schema_version != SCHEMA_VERSION {
            return invalid(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.segment_frames == 0 {
            return invalid("segment_frames must be at least 1".into());
        }
        if self.overlap >= self.segment_frames {
            return invalid(format!(
                "overlap {} must be smaller than segment_frames {}",
                self.overlap, self.segment_frames
            ));
        }
        let t = self.control.mask_threshold;
        if !(t > 0.0 && t < 1.0) {
            return invalid(format!("control.mask_threshold {t} must lie in (0, 1)"));
        }
        if !(self.cscv_lambda.is_finite() && self.cscv_lambda >= 0.0) {
            return invalid(format!(
                "cscv_lambda {} must be finite and non-negative",
                self.cscv_lambda
            ));
        }
        let model = self.model_config();
        model
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.schedule()
            .validate(&model)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}
