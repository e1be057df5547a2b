//! KV-sharing, mask-guided fusion and attention reweighting kernels, plus
//! the hook seam the model consults once per layer.

use crate::error::{Error, MaskSide, Result};
use crate::tensor::{matmul, matmul_t, softmax_row_into, softmax_rows, Tensor};

/// Keys and values of one layer of a forward pass, full model width, over
/// the whole unified sequence of that pass.
#[derive(Clone, Debug, PartialEq)]
pub struct CapturedKv {
    pub n_text: usize,
    pub k: Tensor,
    pub v: Tensor,
}

/// What a hook asks the model to do at one layer.
#[derive(Clone, Copy, Debug)]
pub enum LayerControl<'a> {
    /// Use the source pass's video K/V in place of this pass's.
    ShareKv { source: &'a CapturedKv },
    /// Share video K/V and route video queries through the foreground or
    /// background key set by mask. Masks are per video token.
    MaskGuided {
        source: &'a CapturedKv,
        source_fg: &'a [bool],
        current_fg: &'a [bool],
    },
    /// Scale one text token's T2V row and V2T column after softmax.
    Reweight { token: usize, factor: f64 },
}

/// Per-layer control decisions for one forward pass.
pub trait ControlHook: Sync {
    fn layer_control(&self, layer: usize) -> Option<LayerControl<'_>>;
}

/// Keys/values for a target pass that shares from a source pass: the
/// current text rows followed by the source video rows.
pub fn assemble_shared_kv(current: &CapturedKv, source: &CapturedKv) -> Result<(Tensor, Tensor)> {
    let cur_video = current.k.rows() - current.n_text;
    let src_video = source.k.rows() - source.n_text;
    if cur_video != src_video || current.k.cols() != source.k.cols() {
        return Err(Error::Shape {
            op: "assemble_shared_kv",
            expected: vec![cur_video, current.k.cols()],
            got: vec![src_video, source.k.cols()],
        });
    }
    let join = |cur: &Tensor, src: &Tensor| -> Result<Tensor> {
        Tensor::vstack(&[
            &cur.slice_rows(0, current.n_text)?,
            &src.slice_rows(source.n_text, src.rows())?,
        ])
    };
    Ok((join(&current.k, &source.k)?, join(&current.v, &source.v)?))
}

/// Scaled scores `Q Kᵀ · scale`.
pub fn attention_logits(q: &Tensor, k: &Tensor, scale: f64) -> Result<Tensor> {
    let mut logits = matmul_t(q, k)?;
    for v in logits.data_mut() {
        *v *= scale;
    }
    logits.ensure_finite("attention_logits")?;
    Ok(logits)
}

/// `softmax(Q Kᵀ · scale) V` over whatever key set is passed in. With the
/// current branch's own K/V this is plain attention.
pub fn kv_share(q: &Tensor, k: &Tensor, v: &Tensor, scale: f64) -> Result<Tensor> {
    let probs = softmax_rows(&attention_logits(q, k, scale)?)?;
    matmul(&probs, v)
}

fn check_source_mask(source_fg: &[bool]) -> Result<()> {
    if !source_fg.iter().any(|&b| b) {
        return Err(Error::DegenerateMask {
            side: MaskSide::Foreground,
        });
    }
    if source_fg.iter().all(|&b| b) {
        return Err(Error::DegenerateMask {
            side: MaskSide::Background,
        });
    }
    Ok(())
}

/// Attention probabilities for mask-guided fusion.
///
/// The first `text_keys` keys stay visible to every query and the first
/// `text_queries` rows are plain softmax. Each remaining query `v` sees the
/// source-foreground video keys when `current_fg[v]` and the background ones
/// otherwise, so its row equals `f_o` or `f_b` exactly.
pub fn fusion_probs(
    logits: &Tensor,
    text_keys: usize,
    text_queries: usize,
    source_fg: &[bool],
    current_fg: &[bool],
) -> Result<Tensor> {
    logits.ensure_rank("fusion_probs", 2)?;
    logits.ensure_finite("fusion_probs")?;
    if text_keys + source_fg.len() != logits.cols() {
        return Err(Error::Shape {
            op: "fusion_probs (keys)",
            expected: vec![logits.cols() - text_keys.min(logits.cols())],
            got: vec![source_fg.len()],
        });
    }
    if text_queries + current_fg.len() != logits.rows() {
        return Err(Error::Shape {
            op: "fusion_probs (queries)",
            expected: vec![logits.rows() - text_queries.min(logits.rows())],
            got: vec![current_fg.len()],
        });
    }
    check_source_mask(source_fg)?;
    let fg_keys: Vec<bool> = std::iter::repeat_n(true, text_keys)
        .chain(source_fg.iter().copied())
        .collect();
    let bg_keys: Vec<bool> = std::iter::repeat_n(true, text_keys)
        .chain(source_fg.iter().map(|&b| !b))
        .collect();
    let mut out = Tensor::zeros(logits.dims().to_vec());
    for i in 0..logits.rows() {
        let mask = if i < text_queries {
            None
        } else if current_fg[i - text_queries] {
            Some(fg_keys.as_slice())
        } else {
            Some(bg_keys.as_slice())
        };
        softmax_row_into(logits.row(i), mask, out.row_mut(i))?;
    }
    Ok(out)
}

/// Mask-guided KV-sharing over video tokens only: foreground queries of the
/// current branch read source foreground keys, background queries read
/// source background keys.
pub fn mask_guided_fusion(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    source_fg: &[bool],
    current_fg: &[bool],
    scale: f64,
) -> Result<Tensor> {
    let logits = attention_logits(q, k, scale)?;
    let probs = fusion_probs(&logits, 0, 0, source_fg, current_fg)?;
    matmul(&probs, v)
}

/// Multiply row `token` of T2V and column `token` of V2T by `factor`,
/// in place and without renormalizing.
pub fn reweight_region(probs: &mut Tensor, n_text: usize, token: usize, factor: f64) -> Result<()> {
    probs.ensure_rank("reweight_region", 2)?;
    if token >= n_text || n_text > probs.rows() || probs.rows() != probs.cols() {
        return Err(Error::IndexOutOfRange {
            what: "reweight token",
            index: token,
            len: n_text,
        });
    }
    if !(factor.is_finite() && factor >= 0.0) {
        return Err(Error::invalid(format!(
            "reweight factor must be finite and non-negative, got {factor}"
        )));
    }
    let l = probs.rows();
    for j in n_text..l {
        let p = probs.at(token, j);
        probs.set(token, j, p * factor);
        let p = probs.at(j, token);
        probs.set(j, token, p * factor);
    }
    Ok(())
}
