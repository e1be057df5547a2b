//! Toy MM-DiT denoiser.
//!
//! Text tokens and `1×1`-patch video tokens share one sequence and one full
//! attention per layer. Weights are seeded uniform draws; nothing is learned.

mod mmdit;
mod record;
mod text;

pub use mmdit::{
    build_unified_sequence, AttentionOutput, ForwardOptions, ForwardOutput, StackOutput, ToyMmDit,
    UnifiedSequence, VideoGrid,
};
pub use record::{AttentionRecord, DiagonalReport, RegionViews};
pub use text::TextEmbedder;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Half-width of the uniform weight initializer.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Latent channel count.
    pub channels: usize,
    pub seed: u64,
    /// Skip the network and predict zero noise.
    pub identity_denoiser: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 30,
            n_heads: 2,
            d_model: 16,
            channels: 4,
            seed: 0,
            identity_denoiser: false,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.channels == 0 {
            return Err(Error::invalid(
                "model dimensions (n_layers, n_heads, d_model, channels) must be positive",
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
}

/// All toy-model parameters, derived from `config.seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `channels × d_model` patch embedding.
    pub patch: Tensor,
    pub layers: Vec<LayerWeights>,
    /// `d_model × channels` clean-latent head.
    pub head: Tensor,
}

impl ModelParams {
    /// Draw every matrix from `uniform(-0.1, 0.1)` in a fixed order: patch,
    /// then `W_Q, W_K, W_V, W_O` per layer, then the head.
    pub fn seeded(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.d_model;
        let mut draw = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-INIT_RANGE..INIT_RANGE))
                .collect();
            Tensor::matrix(rows, cols, data).expect("length matches")
        };
        let patch = draw(config.channels, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                w_q: draw(d, d),
                w_k: draw(d, d),
                w_v: draw(d, d),
                w_o: draw(d, d),
            })
            .collect();
        let head = draw(d, config.channels);
        Ok(ModelParams {
            config,
            patch,
            layers,
            head,
        })
    }

    /// Assemble parameters from explicit matrices, checking every shape.
    pub fn from_parts(
        config: ModelConfig,
        patch: Tensor,
        layers: Vec<LayerWeights>,
        head: Tensor,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let check = |t: &Tensor, r: usize, c: usize| {
            if t.dims() != [r, c] {
                Err(Error::Shape {
                    op: "ModelParams::from_parts",
                    expected: vec![r, c],
                    got: t.dims().to_vec(),
                })
            } else {
                Ok(())
            }
        };
        check(&patch, config.channels, d)?;
        check(&head, d, config.channels)?;
        if layers.len() != config.n_layers {
            return Err(Error::invalid(format!(
                "expected {} layers, got {}",
                config.n_layers,
                layers.len()
            )));
        }
        for l in &layers {
            for w in [&l.w_q, &l.w_k, &l.w_v, &l.w_o] {
                check(w, d, d)?;
            }
        }
        Ok(ModelParams {
            config,
            patch,
            layers,
            head,
        })
    }
}

/// Standard interleaved sin/cos encoding of `pos` with the given base.
pub fn sinusoid(pos: f64, d: usize, base: f64) -> Vec<f64> {
    (0..d)
        .map(|i| {
            let pair = (i / 2) as f64;
            let freq = base.powf(-2.0 * pair / d as f64);
            if i % 2 == 0 {
                (pos * freq).sin()
            } else {
                (pos * freq).cos()
            }
        })
        .collect()
}

/// Per-axis bases for the positional encodings.
pub(crate) const TEXT_BASE: f64 = 50.0;
pub(crate) const FRAME_BASE: f64 = 10_000.0;
pub(crate) const ROW_BASE: f64 = 1_000.0;
pub(crate) const COL_BASE: f64 = 100.0;
pub(crate) const TIME_BASE: f64 = 10_000.0;
