use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// When and how KV-sharing runs.
///
/// Windows are half-open `[lo, hi)`, zero-based, over sampler steps and
/// transformer layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlConfig {
    pub kv_share_steps: (usize, usize),
    pub kv_share_layers: (usize, usize),
    pub mask_threshold: f64,
    pub mask_guided: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kv_share_steps: (2, 25),
            kv_share_layers: (25, 30),
            mask_threshold: 0.3,
            mask_guided: true,
        }
    }
}

impl ControlConfig {
    /// Both windows empty: sharing never happens.
    pub fn disabled() -> Self {
        ControlConfig {
            kv_share_steps: (0, 0),
            kv_share_layers: (0, 0),
            ..ControlConfig::default()
        }
    }

    pub fn step_active(&self, step: usize) -> bool {
        (self.kv_share_steps.0..self.kv_share_steps.1).contains(&step)
    }

    pub fn layer_active(&self, layer: usize) -> bool {
        (self.kv_share_layers.0..self.kv_share_layers.1).contains(&layer)
    }

    pub fn is_empty(&self) -> bool {
        self.kv_share_steps.0 >= self.kv_share_steps.1
            || self.kv_share_layers.0 >= self.kv_share_layers.1
    }

    pub fn validate(&self, total_steps: usize, n_layers: usize) -> Result<()> {
        let check = |name: &str, (lo, hi): (usize, usize), total: usize| {
            if lo > hi || hi > total {
                Err(Error::invalid(format!(
                    "{name} window [{lo}, {hi}) must satisfy lo <= hi <= {total}"
                )))
            } else {
                Ok(())
            }
        };
        check("kv_share_steps", self.kv_share_steps, total_steps)?;
        check("kv_share_layers", self.kv_share_layers, n_layers)?;
        if !(self.mask_threshold > 0.0 && self.mask_threshold < 1.0) {
            return Err(Error::invalid(format!(
                "mask_threshold {} must lie in (0, 1)",
                self.mask_threshold
            )));
        }
        Ok(())
    }
}

/// `step ∈ [lo, hi)` and `layer ∈ [lo, hi)`.
pub fn window_active(step: usize, layer: usize, cfg: &ControlConfig) -> bool {
    cfg.step_active(step) && cfg.layer_active(layer)
}
