//! Attention control: semantic maps and masks from the text/video attention
//! regions, KV-sharing with mask-guided fusion, control windows, and the
//! reweighting primitive used for editing.

mod config;
mod kv;
mod semantic;

pub use config::{window_active, ControlConfig};
pub use kv::{
    assemble_shared_kv, attention_logits, fusion_probs, kv_share, mask_guided_fusion,
    reweight_region, CapturedKv, ControlHook, LayerControl,
};
pub use semantic::{parse_pgm, SemanticMap, SemanticMask};
