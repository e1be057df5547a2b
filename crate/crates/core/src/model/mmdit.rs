use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use super::record::AttentionRecord;
use super::{
    sinusoid, ModelConfig, ModelParams, COL_BASE, FRAME_BASE, ROW_BASE, TEXT_BASE, TIME_BASE,
};
use crate::control::{
    assemble_shared_kv, attention_logits, fusion_probs, reweight_region, CapturedKv, ControlHook,
    LayerControl,
};
use crate::error::{Error, Result};
use crate::latent::{LatentDims, LatentVideo};
use crate::tensor::{matmul, softmax_rows, Tensor};

/// Video token grid, frames × height × width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoGrid {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
}

impl VideoGrid {
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    /// Flat video token index, frame-major then row-major.
    pub fn index(&self, f: usize, h: usize, w: usize) -> usize {
        (f * self.height + h) * self.width + w
    }
}

impl From<LatentDims> for VideoGrid {
    fn from(d: LatentDims) -> Self {
        VideoGrid {
            frames: d.frames,
            height: d.height,
            width: d.width,
        }
    }
}

/// Text tokens followed by flattened video tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct UnifiedSequence {
    pub tokens: Tensor,
    pub n_text: usize,
    pub grid: VideoGrid,
}

impl UnifiedSequence {
    pub fn len(&self) -> usize {
        self.tokens.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn video_tokens(&self) -> Result<Tensor> {
        self.tokens.slice_rows(self.n_text, self.len())
    }
}

/// Concatenate text embeddings with the patch-embedded latent. No
/// positional or timestep information is added here.
pub fn build_unified_sequence(
    text_embed: &Tensor,
    latent: &LatentVideo,
    params: &ModelParams,
) -> Result<UnifiedSequence> {
    text_embed.ensure_rank("build_unified_sequence", 2)?;
    let cfg = &params.config;
    if text_embed.cols() != cfg.d_model {
        return Err(Error::Shape {
            op: "build_unified_sequence (text)",
            expected: vec![text_embed.rows(), cfg.d_model],
            got: text_embed.dims().to_vec(),
        });
    }
    if latent.dims().channels != cfg.channels {
        return Err(Error::Shape {
            op: "build_unified_sequence (latent)",
            expected: vec![cfg.channels],
            got: vec![latent.dims().channels],
        });
    }
    let video = matmul(&latent.as_token_matrix(), &params.patch)?;
    Ok(UnifiedSequence {
        tokens: Tensor::vstack(&[text_embed, &video])?,
        n_text: text_embed.rows(),
        grid: latent.dims().into(),
    })
}

/// One attention layer's result.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    /// Residual-updated sequence.
    pub seq: UnifiedSequence,
    /// Post-softmax, post-control probabilities per head.
    pub probs: Vec<Tensor>,
    /// This pass's own keys and values.
    pub kv: CapturedKv,
}

#[derive(Default)]
pub struct ForwardOptions<'a> {
    /// Keep every layer's attention probabilities.
    pub record: bool,
    /// Keep own K/V for layers in `[lo, hi)`.
    pub capture_kv: Option<(usize, usize)>,
    pub hook: Option<&'a dyn ControlHook>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub noise: LatentVideo,
    pub record: Option<AttentionRecord>,
    /// Indexed by layer; `None` outside the capture range.
    pub kv: Vec<Option<CapturedKv>>,
}

/// Result of running the layer stack on a prepared sequence.
#[derive(Clone, Debug)]
pub struct StackOutput {
    pub hidden: UnifiedSequence,
    pub record: Option<AttentionRecord>,
    pub kv: Vec<Option<CapturedKv>>,
}

/// The toy denoiser. Immutable after construction.
#[derive(Clone, Debug)]
pub struct ToyMmDit {
    params: ModelParams,
}

impl ToyMmDit {
    pub fn new(params: ModelParams) -> Self {
        ToyMmDit { params }
    }

    pub fn seeded(config: ModelConfig) -> Result<Self> {
        Ok(ToyMmDit::new(ModelParams::seeded(config)?))
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    /// Positional encodings for a sequence layout: a sinusoid of the text
    /// position for text tokens, and the sum of frame, row and column
    /// sinusoids for video tokens.
    pub fn positional(&self, n_text: usize, grid: VideoGrid) -> Tensor {
        let d = self.config().d_model;
        let mut data = Vec::with_capacity((n_text + grid.tokens()) * d);
        for p in 0..n_text {
            data.extend(sinusoid(p as f64, d, TEXT_BASE));
        }
        for f in 0..grid.frames {
            let pf = sinusoid(f as f64, d, FRAME_BASE);
            for h in 0..grid.height {
                let ph = sinusoid(h as f64, d, ROW_BASE);
                for w in 0..grid.width {
                    let pw = sinusoid(w as f64, d, COL_BASE);
                    data.extend((0..d).map(|i| pf[i] + ph[i] + pw[i]));
                }
            }
        }
        Tensor::matrix(n_text + grid.tokens(), d, data).expect("length matches")
    }

    /// Timestep embedding for noise level `alpha`, at `t = 1000 (1 - alpha)`.
    pub fn timestep_embedding(&self, alpha: f64) -> Vec<f64> {
        sinusoid(1000.0 * (1.0 - alpha), self.config().d_model, TIME_BASE)
    }

    /// Add positional and timestep embeddings.
    pub fn prepare(&self, seq: &UnifiedSequence, alpha: f64) -> Result<UnifiedSequence> {
        let pos = self.positional(seq.n_text, seq.grid);
        let mut tokens = seq.tokens.add(&pos)?;
        let temb = self.timestep_embedding(alpha);
        let d = temb.len();
        for row in tokens.data_mut().chunks_mut(d) {
            for (x, t) in row.iter_mut().zip(&temb) {
                *x += t;
            }
        }
        Ok(UnifiedSequence {
            tokens,
            n_text: seq.n_text,
            grid: seq.grid,
        })
    }

    /// Multi-head full attention over the unified sequence at `layer`,
    /// scale `1/sqrt(d_head)`, with an optional control applied.
    pub fn full_attention(
        &self,
        seq: &UnifiedSequence,
        layer: usize,
        control: Option<LayerControl<'_>>,
    ) -> Result<AttentionOutput> {
        let cfg = self.config();
        let w = self
            .params
            .layers
            .get(layer)
            .ok_or(Error::IndexOutOfRange {
                what: "layer",
                index: layer,
                len: cfg.n_layers,
            })?;
        let x = &seq.tokens;
        let q = matmul(x, &w.w_q)?;
        let own = CapturedKv {
            n_text: seq.n_text,
            k: matmul(x, &w.w_k)?,
            v: matmul(x, &w.w_v)?,
        };
        let (keys, values): (Cow<'_, Tensor>, Cow<'_, Tensor>) = match control {
            Some(LayerControl::ShareKv { source })
            | Some(LayerControl::MaskGuided { source, .. }) => {
                let (k, v) = assemble_shared_kv(&own, source)?;
                (Cow::Owned(k), Cow::Owned(v))
            }
            _ => (Cow::Borrowed(&own.k), Cow::Borrowed(&own.v)),
        };
        let dh = cfg.d_head();
        let scale = 1.0 / (dh as f64).sqrt();
        let n_text = seq.n_text;
        let mut probs_all = Vec::with_capacity(cfg.n_heads);
        let mut outs = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let (lo, hi) = (h * dh, (h + 1) * dh);
            let logits =
                attention_logits(&q.slice_cols(lo, hi)?, &keys.slice_cols(lo, hi)?, scale)?;
            let mut probs = match control {
                Some(LayerControl::MaskGuided {
                    source_fg,
                    current_fg,
                    ..
                }) => fusion_probs(&logits, n_text, n_text, source_fg, current_fg)?,
                _ => softmax_rows(&logits)?,
            };
            if let Some(LayerControl::Reweight { token, factor }) = control {
                reweight_region(&mut probs, n_text, token, factor)?;
            }
            outs.push(matmul(&probs, &values.slice_cols(lo, hi)?)?);
            probs_all.push(probs);
        }
        let heads: Vec<&Tensor> = outs.iter().collect();
        let delta = matmul(&Tensor::hstack(&heads)?, &w.w_o)?;
        Ok(AttentionOutput {
            seq: UnifiedSequence {
                tokens: x.add(&delta)?,
                n_text,
                grid: seq.grid,
            },
            probs: probs_all,
            kv: own,
        })
    }

    /// Run every layer on an already prepared sequence.
    pub fn forward_prepared(
        &self,
        seq: &UnifiedSequence,
        opts: &ForwardOptions<'_>,
    ) -> Result<StackOutput> {
        let cfg = self.config();
        let mut record = opts
            .record
            .then(|| AttentionRecord::new(cfg.n_layers, cfg.n_heads, seq.n_text, seq.grid));
        let mut kv = vec![None; cfg.n_layers];
        let mut cur = seq.clone();
        for (layer, slot) in kv.iter_mut().enumerate() {
            let control = opts.hook.and_then(|h| h.layer_control(layer));
            let out = self.full_attention(&cur, layer, control)?;
            if let Some(rec) = record.as_mut() {
                rec.push_layer(out.probs)?;
            }
            if let Some((lo, hi)) = opts.capture_kv {
                if (lo..hi).contains(&layer) {
                    *slot = Some(out.kv);
                }
            }
            cur = out.seq;
        }
        Ok(StackOutput {
            hidden: cur,
            record,
            kv,
        })
    }

    /// Clean-latent estimate read off the final video hidden states,
    /// `(F·H·W) × C`.
    pub fn clean_estimate(&self, hidden: &UnifiedSequence) -> Result<Tensor> {
        matmul(&hidden.video_tokens()?, &self.params.head)
    }

    /// Predict the noise in `latent` at noise level `alpha ∈ (0, 1)`.
    ///
    /// The network regresses a clean latent `x̂₀`; the returned noise is
    /// `(x − √α · x̂₀) / √(1 − α)`. In identity-denoiser mode the result is
    /// all zeros and no attention is computed.
    pub fn predict_noise(
        &self,
        latent: &LatentVideo,
        text_embed: &Tensor,
        alpha: f64,
        opts: &ForwardOptions<'_>,
    ) -> Result<ForwardOutput> {
        let cfg = self.config();
        if latent.dims().channels != cfg.channels {
            return Err(Error::Shape {
                op: "predict_noise",
                expected: vec![cfg.channels],
                got: vec![latent.dims().channels],
            });
        }
        if cfg.identity_denoiser {
            return Ok(ForwardOutput {
                noise: LatentVideo::zeros(latent.dims()),
                record: None,
                kv: vec![None; cfg.n_layers],
            });
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::invalid(format!(
                "noise level alpha must lie in (0, 1), got {alpha}"
            )));
        }
        let seq = build_unified_sequence(text_embed, latent, &self.params)?;
        let prepared = self.prepare(&seq, alpha)?;
        let out = self.forward_prepared(&prepared, opts)?;
        let clean = self.clean_estimate(&out.hidden)?;
        let (sa, sn) = (alpha.sqrt(), (1.0 - alpha).sqrt());
        let noise: Vec<f64> = latent
            .data()
            .iter()
            .zip(clean.data())
            .map(|(x, c)| (x - sa * c) / sn)
            .collect();
        let noise = LatentVideo::new(latent.dims(), noise)?;
        noise.tensor().ensure_finite("predict_noise")?;
        Ok(ForwardOutput {
            noise,
            record: out.record,
            kv: out.kv,
        })
    }
}
