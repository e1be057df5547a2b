//! Multi-prompt sampling: per-step segment forward passes with KV-sharing
//! from the previous segment, followed by latent blending and re-slicing.
//!
//! Within a step, segment `i − 1` always runs before segment `i`, because
//! `i` reads `i − 1`'s keys, values and attention record from the same step.
//! Blending is a barrier between steps.

mod schedule;

pub use schedule::{denoise_step, noise_schedule, step_coefficients, StepCoefficients};

use serde::{Deserialize, Serialize};

use crate::blend::{blend, reslice, SegmentLayout};
use crate::control::{
    CapturedKv, ControlConfig, ControlHook, LayerControl, SemanticMap, SemanticMask,
};
use crate::error::{Error, MaskSide, Result};
use crate::latent::{LatentDims, LatentVideo};
use crate::model::{AttentionRecord, ForwardOptions, ModelConfig, TextEmbedder, ToyMmDit};
use crate::tensor::Tensor;

/// XOR-ed into the run seed to seed the initial-noise stream.
const NOISE_SEED_SALT: u64 = 0x6e6f_6973_655f_7631;

/// One prompt and the text-token positions naming its foreground object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptSpec {
    pub text: String,
    #[serde(default = "default_tokens")]
    pub tokens: Vec<usize>,
}

fn default_tokens() -> Vec<usize> {
    vec![1]
}

impl PromptSpec {
    pub fn new(text: impl Into<String>, tokens: Vec<usize>) -> Self {
        PromptSpec {
            text: text.into(),
            tokens,
        }
    }

    pub fn n_text(&self) -> usize {
        TextEmbedder::token_count(&self.text)
    }
}

/// Everything a multi-prompt run needs besides the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSchedule {
    pub prompts: Vec<PromptSpec>,
    pub segment_frames: usize,
    pub overlap: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub control: ControlConfig,
    pub seed: u64,
}

impl PromptSchedule {
    pub fn layout(&self) -> Result<SegmentLayout> {
        SegmentLayout::plan(self.prompts.len(), self.segment_frames, self.overlap)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if self.prompts.is_empty() {
            return Err(Error::invalid("schedule needs at least one prompt"));
        }
        self.layout()?;
        if self.height == 0 || self.width == 0 {
            return Err(Error::invalid("latent height and width must be positive"));
        }
        noise_schedule(self.steps)?;
        self.control.validate(self.steps, model.n_layers)?;
        for (i, p) in self.prompts.iter().enumerate() {
            let n = p.n_text();
            if let Some(&bad) = p.tokens.iter().find(|&&t| t >= n) {
                return Err(Error::invalid(format!(
                    "prompt {i}: token index {bad} out of range ({n} tokens)"
                )));
            }
            if self.control.mask_guided && p.tokens.is_empty() && self.prompts.len() > 1 {
                return Err(Error::invalid(format!(
                    "prompt {i}: mask-guided sharing needs foreground token indices"
                )));
            }
        }
        Ok(())
    }

    pub fn latent_dims(&self, channels: usize, frames: usize) -> LatentDims {
        LatentDims::new(frames, self.height, self.width, channels)
    }
}

/// Ablation switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toggles {
    pub kv_sharing: bool,
    pub mask_guided: bool,
    pub blending: bool,
}

impl Toggles {
    pub const ALL: Toggles = Toggles {
        kv_sharing: true,
        mask_guided: true,
        blending: true,
    };
    pub const NONE: Toggles = Toggles {
        kv_sharing: false,
        mask_guided: false,
        blending: false,
    };

    /// Row label of the matching ablation configuration.
    pub fn row_name(&self) -> &'static str {
        match (self.blending, self.kv_sharing, self.mask_guided) {
            (false, false, false) => "Isolated",
            (true, false, _) => "DiTCtrl(w/o kv-sharing)",
            (true, true, false) => "DiTCtrl(w/o mask-guided)",
            (true, true, true) => "DiTCtrl(full)",
            _ => "custom",
        }
    }

    /// Rewrite a schedule so that disabled mechanisms are inert: no
    /// sharing empties both windows, no blending sets the overlap to 0.
    pub fn apply(&self, schedule: &PromptSchedule) -> PromptSchedule {
        let mut s = schedule.clone();
        if !self.kv_sharing {
            s.control.kv_share_steps = (0, 0);
            s.control.kv_share_layers = (0, 0);
        }
        s.control.mask_guided &= self.mask_guided;
        if !self.blending {
            s.overlap = 0;
        }
        s
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SampleOptions {
    /// Keep the global latent after every step.
    pub keep_step_latents: bool,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub latent: LatentVideo,
    pub layout: SegmentLayout,
    pub step_latents: Vec<LatentVideo>,
    /// Most recent mask per branch, for branches that took part in
    /// mask-guided sharing.
    pub masks: Vec<Option<SemanticMask>>,
}

#[derive(Clone, Debug)]
pub struct AblationOutput {
    pub toggles: Toggles,
    pub row_name: &'static str,
    pub schedule: PromptSchedule,
    pub output: SampleOutput,
}

/// How a branch is steered inside the control windows.
#[derive(Clone, Copy, Debug, PartialEq)]
enum BranchMode {
    Plain,
    ShareFromPrevious,
    Reweight { token: usize, factor: f64 },
}

struct Branch {
    embed: Tensor,
    tokens: Vec<usize>,
    mode: BranchMode,
}

struct PairHook<'a> {
    control: &'a ControlConfig,
    source: &'a [Option<CapturedKv>],
    masks: Option<&'a (Vec<bool>, Vec<bool>)>,
}

impl ControlHook for PairHook<'_> {
    fn layer_control(&self, layer: usize) -> Option<LayerControl<'_>> {
        if !self.control.layer_active(layer) {
            return None;
        }
        let source = self.source.get(layer)?.as_ref()?;
        Some(match self.masks {
            Some((src, cur)) => LayerControl::MaskGuided {
                source,
                source_fg: src,
                current_fg: cur,
            },
            None => LayerControl::ShareKv { source },
        })
    }
}

struct ReweightHook<'a> {
    control: &'a ControlConfig,
    token: usize,
    factor: f64,
}

impl ControlHook for ReweightHook<'_> {
    fn layer_control(&self, layer: usize) -> Option<LayerControl<'_>> {
        self.control
            .layer_active(layer)
            .then_some(LayerControl::Reweight {
                token: self.token,
                factor: self.factor,
            })
    }
}

/// Drives the toy model through complete sampling runs.
#[derive(Clone, Debug)]
pub struct Sampler {
    model: ToyMmDit,
    embedder: TextEmbedder,
}

impl Sampler {
    pub fn new(model: ToyMmDit) -> Self {
        let cfg = model.config();
        let embedder = TextEmbedder::new(cfg.d_model, cfg.seed);
        Sampler { model, embedder }
    }

    pub fn seeded(config: ModelConfig) -> Result<Self> {
        Ok(Sampler::new(ToyMmDit::seeded(config)?))
    }

    pub fn model(&self) -> &ToyMmDit {
        &self.model
    }

    pub fn embedder(&self) -> &TextEmbedder {
        &self.embedder
    }

    /// Initial noise over the whole global frame range; segments slice it,
    /// so overlapping frames start from identical values.
    pub fn initial_noise(&self, dims: LatentDims, seed: u64) -> LatentVideo {
        LatentVideo::gaussian(dims, seed ^ NOISE_SEED_SALT)
    }

    fn branch(&self, prompt: &PromptSpec, mode: BranchMode) -> Result<Branch> {
        Ok(Branch {
            embed: self.embedder.embed(&prompt.text)?,
            tokens: prompt.tokens.clone(),
            mode,
        })
    }

    /// Run every branch through one sampler step, in order.
    #[allow(clippy::too_many_arguments)]
    fn run_step(
        &self,
        step: usize,
        alphas: &[f64],
        coeffs: &[StepCoefficients],
        control: &ControlConfig,
        branches: &[Branch],
        latents: &[LatentVideo],
        prev_records: &mut [Option<AttentionRecord>],
        masks_out: &mut [Option<SemanticMask>],
    ) -> Result<Vec<LatentVideo>> {
        let alpha = alphas[step];
        let identity = self.model.config().identity_denoiser;
        let sharing = !identity && control.step_active(step) && !control.is_empty();
        let mask_guided = sharing && control.mask_guided;
        let any_share = branches
            .iter()
            .any(|b| b.mode == BranchMode::ShareFromPrevious);
        let record_now = !identity
            && any_share
            && control.mask_guided
            && !control.is_empty()
            && (control.step_active(step) || control.step_active(step + 1));

        let mut kvs: Vec<Vec<Option<CapturedKv>>> = Vec::with_capacity(branches.len());
        let mut records: Vec<Option<AttentionRecord>> = Vec::with_capacity(branches.len());
        let mut next = Vec::with_capacity(branches.len());
        for (i, (branch, z)) in branches.iter().zip(latents).enumerate() {
            let is_source = sharing
                && branches
                    .get(i + 1)
                    .is_some_and(|b| b.mode == BranchMode::ShareFromPrevious);
            let capture_kv = is_source.then_some(control.kv_share_layers);

            let masks = if mask_guided && branch.mode == BranchMode::ShareFromPrevious && i > 0 {
                Some(self.pair_masks(
                    step,
                    i,
                    alpha,
                    control,
                    branches,
                    latents,
                    &records,
                    prev_records,
                    masks_out,
                )?)
            } else {
                None
            };
            let pair_hook;
            let reweight_hook;
            let hook: Option<&dyn ControlHook> = match branch.mode {
                BranchMode::ShareFromPrevious if sharing && i > 0 => {
                    pair_hook = PairHook {
                        control,
                        source: &kvs[i - 1],
                        masks: masks.as_ref(),
                    };
                    Some(&pair_hook)
                }
                BranchMode::Reweight { token, factor }
                    if !identity && control.step_active(step) =>
                {
                    reweight_hook = ReweightHook {
                        control,
                        token,
                        factor,
                    };
                    Some(&reweight_hook)
                }
                _ => None,
            };
            let out = self
                .model
                .predict_noise(
                    z,
                    &branch.embed,
                    alpha,
                    &ForwardOptions {
                        record: record_now,
                        capture_kv,
                        hook,
                    },
                )
                .map_err(|e| match e {
                    Error::DegenerateMask { .. } => Error::ControlAt {
                        step,
                        layer: control.kv_share_layers.0,
                        branch: i,
                        source: Box::new(e),
                    },
                    other => other,
                })?;
            next.push(denoise_step(z, &out.noise, coeffs[step])?);
            kvs.push(out.kv);
            records.push(out.record);
        }
        if record_now {
            for (slot, rec) in prev_records.iter_mut().zip(records) {
                *slot = rec;
            }
        }
        Ok(next)
    }

    /// Source and current masks for pair `(i − 1, i)` at `step`. The source
    /// mask comes from the source pass of this step; the current mask from
    /// branch `i`'s most recent pass, or from an uncontrolled probe pass at
    /// this step when none exists yet.
    #[allow(clippy::too_many_arguments)]
    fn pair_masks(
        &self,
        step: usize,
        i: usize,
        alpha: f64,
        control: &ControlConfig,
        branches: &[Branch],
        latents: &[LatentVideo],
        records: &[Option<AttentionRecord>],
        prev_records: &[Option<AttentionRecord>],
        masks_out: &mut [Option<SemanticMask>],
    ) -> Result<(Vec<bool>, Vec<bool>)> {
        let src_rec = records[i - 1]
            .as_ref()
            .ok_or_else(|| Error::invalid("source attention record missing"))?;
        let probe;
        let cur_rec = match prev_records[i].as_ref() {
            Some(r) => r,
            None => {
                probe = self
                    .model
                    .predict_noise(
                        &latents[i],
                        &branches[i].embed,
                        alpha,
                        &ForwardOptions {
                            record: true,
                            ..ForwardOptions::default()
                        },
                    )?
                    .record
                    .expect("recording requested");
                &probe
            }
        };
        let at = |branch: usize, e: Error| Error::ControlAt {
            step,
            layer: control.kv_share_layers.0,
            branch,
            source: Box::new(e),
        };
        let src = SemanticMap::extract(src_rec, &branches[i - 1].tokens, i - 1)
            .map_err(|e| at(i - 1, e))?
            .binarize(control.mask_threshold);
        let cur = SemanticMap::extract(cur_rec, &branches[i].tokens, i)
            .map_err(|e| at(i, e))?
            .binarize(control.mask_threshold);
        let fg = src.count_foreground();
        if fg == 0 || fg == src.bits().len() {
            let side = if fg == 0 {
                MaskSide::Foreground
            } else {
                MaskSide::Background
            };
            return Err(at(i - 1, Error::DegenerateMask { side }));
        }
        let pair = (src.bits().to_vec(), cur.bits().to_vec());
        masks_out[i - 1] = Some(src);
        masks_out[i] = Some(cur);
        Ok(pair)
    }

    fn run_branches(
        &self,
        steps: usize,
        control: &ControlConfig,
        branches: &[Branch],
        mut latents: Vec<LatentVideo>,
        mut combine: impl FnMut(Vec<LatentVideo>) -> Result<Vec<LatentVideo>>,
    ) -> Result<(Vec<LatentVideo>, Vec<Option<SemanticMask>>)> {
        let alphas = noise_schedule(steps)?;
        let coeffs = step_coefficients(&alphas);
        let mut prev_records = vec![None; branches.len()];
        let mut masks = vec![None; branches.len()];
        for step in 0..steps {
            let next = self.run_step(
                step,
                &alphas,
                &coeffs,
                control,
                branches,
                &latents,
                &mut prev_records,
                &mut masks,
            )?;
            latents = combine(next)?;
        }
        Ok((latents, masks))
    }

    /// Plain single-branch sampling from a given initial latent.
    pub fn sample_plain(
        &self,
        prompt: &PromptSpec,
        initial: LatentVideo,
        steps: usize,
    ) -> Result<LatentVideo> {
        let branches = [self.branch(prompt, BranchMode::Plain)?];
        let (mut out, _) = self.run_branches(
            steps,
            &ControlConfig::disabled(),
            &branches,
            vec![initial],
            Ok,
        )?;
        Ok(out.remove(0))
    }

    /// Multi-prompt generation: segment `i` shares K/V from segment `i − 1`
    /// inside the control windows, and all segments are blended after every
    /// step.
    pub fn sample_multi_prompt(
        &self,
        schedule: &PromptSchedule,
        opts: SampleOptions,
    ) -> Result<SampleOutput> {
        let cfg = self.model.config();
        schedule.validate(cfg)?;
        let layout = schedule.layout()?;
        let branches = schedule
            .prompts
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mode = if i == 0 {
                    BranchMode::Plain
                } else {
                    BranchMode::ShareFromPrevious
                };
                self.branch(p, mode)
            })
            .collect::<Result<Vec<_>>>()?;
        let global = self.initial_noise(
            schedule.latent_dims(cfg.channels, layout.total_frames()),
            schedule.seed,
        );
        let mut step_latents = Vec::new();
        let mut last_global = None;
        let (_, masks) = self.run_branches(
            schedule.steps,
            &schedule.control,
            &branches,
            reslice(&global, &layout)?,
            |segments| {
                let g = blend(&segments, &layout)?;
                let parts = reslice(&g, &layout)?;
                if opts.keep_step_latents {
                    step_latents.push(g.clone());
                }
                last_global = Some(g);
                Ok(parts)
            },
        )?;
        Ok(SampleOutput {
            latent: last_global.expect("at least one step"),
            layout,
            step_latents,
            masks,
        })
    }

    /// Longer single-prompt generation: every segment uses the same prompt.
    pub fn sample_single_prompt_long(
        &self,
        prompt: &PromptSpec,
        n_segments: usize,
        base: &PromptSchedule,
    ) -> Result<LatentVideo> {
        if n_segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        let schedule = PromptSchedule {
            prompts: vec![prompt.clone(); n_segments],
            ..base.clone()
        };
        Ok(self
            .sample_multi_prompt(&schedule, SampleOptions::default())?
            .latent)
    }

    /// Ablation run: disabled mechanisms are made inert per [`Toggles::apply`].
    pub fn run_ablation(
        &self,
        schedule: &PromptSchedule,
        toggles: Toggles,
    ) -> Result<AblationOutput> {
        let schedule = toggles.apply(schedule);
        let output = self.sample_multi_prompt(&schedule, SampleOptions::default())?;
        Ok(AblationOutput {
            toggles,
            row_name: toggles.row_name(),
            schedule,
            output,
        })
    }

    /// Word-swap editing: source and target prompts start from the same
    /// noise over one segment; the target shares K/V from the source inside
    /// the control windows. No blending.
    pub fn word_swap_run(
        &self,
        source: &PromptSpec,
        target: &PromptSpec,
        schedule: &PromptSchedule,
    ) -> Result<(LatentVideo, LatentVideo)> {
        let cfg = self.model.config();
        if source.n_text() != target.n_text() {
            return Err(Error::invalid(format!(
                "word swap needs prompts of equal token count, got {} and {}",
                source.n_text(),
                target.n_text()
            )));
        }
        let check = PromptSchedule {
            prompts: vec![source.clone(), target.clone()],
            overlap: 0,
            ..schedule.clone()
        };
        check.validate(cfg)?;
        let noise = self.initial_noise(
            schedule.latent_dims(cfg.channels, schedule.segment_frames),
            schedule.seed,
        );
        let branches = [
            self.branch(source, BranchMode::Plain)?,
            self.branch(target, BranchMode::ShareFromPrevious)?,
        ];
        let (mut out, _) = self.run_branches(
            schedule.steps,
            &schedule.control,
            &branches,
            vec![noise.clone(), noise],
            Ok,
        )?;
        let tgt = out.pop().expect("two branches");
        let src = out.pop().expect("two branches");
        Ok((src, tgt))
    }

    /// Reweight editing: a baseline run and a run in which `token`'s T2V row
    /// and V2T column are scaled by `factor` inside the control windows.
    pub fn reweight_run(
        &self,
        prompt: &PromptSpec,
        token: usize,
        factor: f64,
        schedule: &PromptSchedule,
    ) -> Result<(LatentVideo, LatentVideo)> {
        let cfg = self.model.config();
        if token >= prompt.n_text() {
            return Err(Error::IndexOutOfRange {
                what: "reweight token",
                index: token,
                len: prompt.n_text(),
            });
        }
        if !(factor.is_finite() && factor >= 0.0) {
            return Err(Error::invalid(format!(
                "reweight factor must be finite and non-negative, got {factor}"
            )));
        }
        let check = PromptSchedule {
            prompts: vec![prompt.clone()],
            overlap: 0,
            ..schedule.clone()
        };
        check.validate(cfg)?;
        let noise = self.initial_noise(
            schedule.latent_dims(cfg.channels, schedule.segment_frames),
            schedule.seed,
        );
        let branches = [
            self.branch(prompt, BranchMode::Plain)?,
            self.branch(prompt, BranchMode::Reweight { token, factor })?,
        ];
        let (mut out, _) = self.run_branches(
            schedule.steps,
            &schedule.control,
            &branches,
            vec![noise.clone(), noise],
            Ok,
        )?;
        let edited = out.pop().expect("two branches");
        let base = out.pop().expect("two branches");
        Ok((base, edited))
    }
}

/// Mean absolute frame-to-frame change across each segment transition,
/// averaged over transitions. For the boundary between segments `i` and
/// `i + 1` the frame pairs `(g, g + 1)` run from the frame before `i + 1`
/// starts through the last frame of `i`.
pub fn seam_discontinuity(latent: &LatentVideo, layout: &SegmentLayout) -> Result<f64> {
    if latent.dims().frames != layout.total_frames() {
        return Err(Error::invalid("latent does not match layout"));
    }
    if layout.n_segments < 2 {
        return Ok(0.0);
    }
    let mut per_seam = Vec::with_capacity(layout.n_segments - 1);
    for i in 0..layout.n_segments - 1 {
        let first = layout.start(i + 1) - 1;
        let last = layout.range(i).end - 1;
        let mut total = 0.0;
        let mut count = 0usize;
        for g in first..=last.min(layout.total_frames() - 2) {
            for (a, b) in latent.frame(g).iter().zip(latent.frame(g + 1)) {
                total += (b - a).abs();
                count += 1;
            }
        }
        per_seam.push(total / count as f64);
    }
    Ok(per_seam.iter().sum::<f64>() / per_seam.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_model(identity: bool) -> Sampler {
        Sampler::seeded(ModelConfig {
            n_layers: 3,
            n_heads: 2,
            d_model: 8,
            channels: 2,
            seed: 21,
            identity_denoiser: identity,
        })
        .unwrap()
    }

    fn schedule(prompts: &[&str], t: usize, o: usize) -> PromptSchedule {
        PromptSchedule {
            prompts: prompts
                .iter()
                .map(|p| PromptSpec::new(*p, vec![1]))
                .collect(),
            segment_frames: t,
            overlap: o,
            height: 2,
            width: 2,
            steps: 4,
            control: ControlConfig {
                kv_share_steps: (1, 3),
                kv_share_layers: (1, 3),
                mask_threshold: 0.3,
                mask_guided: true,
            },
            seed: 5,
        }
    }

    #[test]
    fn identity_denoiser_closed_form() {
        let s = small_model(true);
        let sch = schedule(&["a cat", "a dog"], 3, 1);
        let out = s
            .sample_multi_prompt(&sch, SampleOptions::default())
            .unwrap();
        let init = s.initial_noise(sch.latent_dims(2, 5), sch.seed);
        let coeffs = step_coefficients(&noise_schedule(4).unwrap());
        let scale: f64 = coeffs.iter().map(|c| 1.0 / c.c2).product();
        for (got, x) in out.latent.data().iter().zip(init.data()) {
            assert!((got - x * scale).abs() < 1e-9);
        }
    }

    #[test]
    fn single_prompt_equals_plain() {
        let s = small_model(false);
        let sch = schedule(&["a cat runs"], 3, 1);
        let out = s
            .sample_multi_prompt(&sch, SampleOptions::default())
            .unwrap();
        let init = s.initial_noise(sch.latent_dims(2, 3), sch.seed);
        let plain = s.sample_plain(&sch.prompts[0], init, sch.steps).unwrap();
        assert_eq!(out.latent, plain);
    }

    #[test]
    fn step_latents_and_masks_are_reported() {
        let s = small_model(false);
        let sch = schedule(&["a cat runs", "a dog runs"], 3, 1);
        let out = s
            .sample_multi_prompt(
                &sch,
                SampleOptions {
                    keep_step_latents: true,
                },
            )
            .unwrap();
        assert_eq!(out.step_latents.len(), 4);
        assert_eq!(out.step_latents.last().unwrap(), &out.latent);
        assert!(out.step_latents.iter().all(|l| l.dims().frames == 5));
        assert!(out.masks.iter().all(|m| m.is_some()));
    }

    #[test]
    fn toggles_map_to_rows() {
        assert_eq!(Toggles::NONE.row_name(), "Isolated");
        assert_eq!(Toggles::ALL.row_name(), "DiTCtrl(full)");
        let blend_only = Toggles {
            blending: true,
            ..Toggles::NONE
        };
        assert_eq!(blend_only.row_name(), "DiTCtrl(w/o kv-sharing)");
        let no_mask = Toggles {
            mask_guided: false,
            ..Toggles::ALL
        };
        assert_eq!(no_mask.row_name(), "DiTCtrl(w/o mask-guided)");
        let sch = schedule(&["a", "b"], 3, 1);
        let iso = Toggles::NONE.apply(&sch);
        assert_eq!(iso.overlap, 0);
        assert!(iso.control.is_empty());
        assert!(!iso.control.mask_guided);
    }

    #[test]
    fn word_swap_rejects_length_mismatch() {
        let s = small_model(false);
        let sch = schedule(&["x"], 3, 0);
        assert!(s
            .word_swap_run(
                &PromptSpec::new("a cat", vec![1]),
                &PromptSpec::new("a big dog", vec![1]),
                &sch
            )
            .is_err());
    }

    #[test]
    fn schedule_validation() {
        let model = ModelConfig {
            n_layers: 3,
            ..ModelConfig::default()
        };
        let mut sch = schedule(&["a cat"], 3, 1);
        assert!(sch.validate(&model).is_ok());
        sch.prompts[0].tokens = vec![5];
        assert!(sch.validate(&model).is_err());
        let mut sch = schedule(&["a cat"], 3, 3);
        assert!(sch.validate(&model).is_err());
        sch.overlap = 1;
        sch.control.kv_share_layers = (0, 4);
        assert!(sch.validate(&model).is_err());
        sch.prompts.clear();
        assert!(sch.validate(&model).is_err());
    }

    #[test]
    fn seam_metric_by_hand() {
        let layout = SegmentLayout::plan(2, 2, 0).unwrap();
        let z = LatentVideo::new(LatentDims::new(4, 1, 1, 1), vec![0.0, 1.0, 5.0, 6.0]).unwrap();
        assert_eq!(seam_discontinuity(&z, &layout).unwrap(), 4.0);
        let layout = SegmentLayout::plan(2, 3, 1).unwrap();
        let z =
            LatentVideo::new(LatentDims::new(5, 1, 1, 1), vec![0.0, 1.0, 3.0, 6.0, 6.0]).unwrap();
        // Pairs (1,2) and (2,3): |2| and |3|.
        assert_eq!(seam_discontinuity(&z, &layout).unwrap(), 2.5);
    }
}
