//! Training-free control of a toy multimodal diffusion transformer for
//! multi-prompt video latents.
//!
//! The pieces:
//! - [`tensor`]: dense `f64` tensors, softmax and matmul kernels, binary dumps.
//! - [`model`]: the seeded toy MM-DiT, attention records and region views.
//! - [`control`]: semantic masks, KV-sharing and mask-guided fusion.
//! - [`blend`]: overlapped segment layouts and latent blending.
//! - [`pipeline`]: the sampler, multi-prompt runs, editing and ablations.
//! - [`metrics`]: the CSCV smoothness score.

pub mod blend;
pub mod control;
pub mod error;
pub mod latent;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod tensor;

pub use blend::{blend, position_weight, reslice, SegmentLayout};
pub use control::{ControlConfig, SemanticMap, SemanticMask};
pub use error::{Error, MaskSide, Result};
pub use latent::{LatentDims, LatentVideo};
pub use metrics::{adjacent_similarity, cscv, EmbeddingTrajectory, SimilaritySeries};
pub use model::{AttentionRecord, ModelConfig, TextEmbedder, ToyMmDit, UnifiedSequence, VideoGrid};
pub use pipeline::{PromptSchedule, PromptSpec, Sampler, Toggles};
pub use tensor::Tensor;
