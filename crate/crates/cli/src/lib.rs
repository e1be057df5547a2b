//! Batch driver behind the `ditctrl` binary.
//!
//! Every command writes its artifacts and a `manifest.txt` into an output
//! directory. The manifest holds the resolved config and a SHA-256 digest
//! of every artifact, so two runs can be compared by manifest alone.
//!
//! | exit code | meaning |
//! |---|---|
//! | 0 | success |
//! | 2 | usage error |
//! | 3 | invalid config |
//! | 4 | I/O or file-format error |
//! | 5 | model or tensor error |
//! | 6 | attention-control error |
//! | 7 | metric error |

pub mod config;

use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use ditctrl_core::blend::{reslice, write_weights_csv};
use ditctrl_core::metrics::{read_embeddings_csv, synthetic_trajectory, TrajectoryKind};
use ditctrl_core::model::{DiagonalReport, ForwardOptions};
use ditctrl_core::pipeline::{noise_schedule, seam_discontinuity, SampleOptions, Toggles};
use ditctrl_core::{
    adjacent_similarity, cscv, EmbeddingTrajectory, Error, LatentVideo, Sampler, SemanticMap,
};

pub use config::{ConfigError, RunConfig};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_MODEL: u8 = 5;
pub const EXIT_CONTROL: u8 = 6;
pub const EXIT_METRIC: u8 = 7;

pub const MANIFEST_FILE: &str = "manifest.txt";

/// A failed command: a diagnostic and the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure {
            code,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::new(EXIT_USAGE, message)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Format { .. } => EXIT_IO,
        Error::EmptyKeyMask
        | Error::DegenerateMask { .. }
        | Error::ControlAt { .. }
        | Error::EmptyTokenSet
        | Error::IncompleteRecord { .. } => EXIT_CONTROL,
        Error::UndefinedCscv => EXIT_METRIC,
        _ => EXIT_MODEL,
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(exit_code(&e), e.to_string())
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(EXIT_IO, e.to_string())
    }
}

pub type CmdResult<T> = Result<T, Failure>;

/// `key = value` lines followed by one digest line per artifact.
#[derive(Debug, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
    outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        let mut m = Manifest::default();
        m.set("command", command);
        m
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    pub fn output(&mut self, path: PathBuf) {
        self.outputs.push(path);
    }

    pub fn outputs(&mut self, paths: impl IntoIterator<Item = PathBuf>) {
        self.outputs.extend(paths);
    }

    pub fn render(&self) -> CmdResult<String> {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        let mut digests = self
            .outputs
            .iter()
            .map(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or_default();
                let parent = p
                    .parent()
                    .and_then(|d| d.file_name())
                    .and_then(|n| n.to_str())
                    .filter(|d| d.starts_with("branch_"));
                let label = match parent {
                    Some(d) => format!("{d}/{name}"),
                    None => name.to_string(),
                };
                Ok((label, hex::encode(Sha256::digest(fs::read(p)?))))
            })
            .collect::<CmdResult<Vec<_>>>()?;
        digests.sort();
        for (name, d) in digests {
            writeln!(s, "sha256 {name} = {d}").unwrap();
        }
        Ok(s)
    }

    pub fn write(&self, dir: &Path) -> CmdResult<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, self.render()?)?;
        Ok(path)
    }
}

fn prepare_out(dir: &Path) -> CmdResult<()> {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::new(EXIT_IO, format!("cannot create {}: {e}", dir.display())))
}

fn base_manifest(command: &str, cfg: &RunConfig) -> Manifest {
    let mut m = Manifest::new(command);
    m.set("config", cfg.to_json_compact());
    m.set("guidance", "none");
    m
}

fn sampler(cfg: &RunConfig) -> CmdResult<Sampler> {
    Ok(Sampler::seeded(cfg.model_config())?)
}

fn save_latent(m: &mut Manifest, dir: &Path, name: &str, z: &LatentVideo) -> CmdResult<()> {
    let path = dir.join(name);
    z.save(&path)?;
    m.output(path);
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> CmdResult<Manifest> {
    prepare_out(out)?;
    let s = sampler(cfg)?;
    let schedule = cfg.schedule();
    let result = s.sample_multi_prompt(
        &schedule,
        SampleOptions {
            keep_step_latents: cfg.dump.step_latents,
        },
    )?;
    let layout = result.layout;
    let mut m = base_manifest("generate", cfg);
    m.set("segments", layout.n_segments);
    m.set("segment_frames", layout.segment_frames);
    m.set("overlap", layout.overlap);
    m.set("total_frames", layout.total_frames());
    save_latent(&mut m, out, "latent.ditc", &result.latent)?;
    if cfg.dump.segments {
        for (i, seg) in reslice(&result.latent, &layout)?.iter().enumerate() {
            save_latent(&mut m, out, &format!("segment_{i}.ditc"), seg)?;
        }
    }
    for (s, z) in result.step_latents.iter().enumerate() {
        save_latent(&mut m, out, &format!("step_{s:03}.ditc"), z)?;
    }
    if cfg.dump.masks {
        for mask in result.masks.iter().flatten() {
            m.outputs(mask.export(out)?);
        }
    }
    let weights = out.join("blend_weights.csv");
    write_weights_csv(layout.segment_frames, fs::File::create(&weights)?)?;
    m.output(weights);
    m.write(out)?;
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EditMode {
    Swap,
    Reweight { token: usize, factor: f64 },
}

pub fn cmd_edit(cfg: &RunConfig, mode: EditMode, out: &Path) -> CmdResult<Manifest> {
    prepare_out(out)?;
    let s = sampler(cfg)?;
    let schedule = cfg.schedule();
    let mut m = base_manifest("edit", cfg);
    match mode {
        EditMode::Swap => {
            let [src, tgt] = cfg.prompts.as_slice() else {
                return Err(Failure::new(
                    EXIT_CONFIG,
                    format!(
                        "word swap needs exactly 2 prompts, config has {}",
                        cfg.prompts.len()
                    ),
                ));
            };
            let (a, b) = s.word_swap_run(src, tgt, &schedule)?;
            m.set("mode", "swap");
            save_latent(&mut m, out, "source.ditc", &a)?;
            save_latent(&mut m, out, "target.ditc", &b)?;
        }
        EditMode::Reweight { token, factor } => {
            let (a, b) = s.reweight_run(&cfg.prompts[0], token, factor, &schedule)?;
            m.set("mode", "reweight");
            m.set("token", token);
            m.set("factor", format!("{factor:?}"));
            save_latent(&mut m, out, "base.ditc", &a)?;
            save_latent(&mut m, out, "edited.ditc", &b)?;
        }
    }
    m.write(out)?;
    Ok(m)
}

/// Parse `none`, `all` or a comma list drawn from `kv`, `mask`, `blend`.
pub fn parse_toggles(list: &str) -> Result<Toggles, String> {
    match list.trim() {
        "none" => return Ok(Toggles::NONE),
        "all" => return Ok(Toggles::ALL),
        _ => {}
    }
    let mut t = Toggles::NONE;
    for part in list.split(',').map(str::trim) {
        match part {
            "kv" => t.kv_sharing = true,
            "mask" => t.mask_guided = true,
            "blend" => t.blending = true,
            other => {
                return Err(format!(
                    "unknown toggle `{other}` (expected none, all, or kv,mask,blend)"
                ))
            }
        }
    }
    Ok(t)
}

pub fn cmd_ablate(cfg: &RunConfig, toggles: Toggles, out: &Path) -> CmdResult<Manifest> {
    prepare_out(out)?;
    let s = sampler(cfg)?;
    let run = s.run_ablation(&cfg.schedule(), toggles)?;
    let seam = seam_discontinuity(&run.output.latent, &run.output.layout)?;
    let mut m = base_manifest("ablate", cfg);
    m.set("row", run.row_name);
    m.set("kv_sharing", toggles.kv_sharing);
    m.set("mask_guided", toggles.mask_guided);
    m.set("blending", toggles.blending);
    m.set("overlap", run.schedule.overlap);
    m.set("total_frames", run.output.layout.total_frames());
    m.set("seam_discontinuity", format!("{seam:.16e}"));
    save_latent(&mut m, out, "latent.ditc", &run.output.latent)?;
    m.write(out)?;
    Ok(m)
}

pub enum TrajectorySource<'a> {
    Csv(&'a Path),
    Synthetic {
        kind: TrajectoryKind,
        frames: usize,
        seed: u64,
    },
}

/// Score a trajectory; optionally write its normalized CSV.
pub fn cmd_eval_cscv(
    source: TrajectorySource<'_>,
    lambda: f64,
    export: Option<&Path>,
) -> CmdResult<f64> {
    let traj = match source {
        TrajectorySource::Csv(path) => {
            let file = fs::File::open(path).map_err(|e| {
                Failure::new(EXIT_IO, format!("cannot open {}: {e}", path.display()))
            })?;
            let rows = read_embeddings_csv(std::io::BufReader::new(file))?;
            EmbeddingTrajectory::new(rows, path.display().to_string())
                .map_err(|e| Failure::new(EXIT_METRIC, e.to_string()))?
        }
        TrajectorySource::Synthetic { kind, frames, seed } => {
            synthetic_trajectory(kind, frames, seed)
                .map_err(|e| Failure::new(EXIT_METRIC, e.to_string()))?
        }
    };
    if let Some(path) = export {
        traj.write_csv(fs::File::create(path)?)?;
    }
    let series =
        adjacent_similarity(&traj).map_err(|e| Failure::new(EXIT_METRIC, e.to_string()))?;
    cscv(&series, lambda).map_err(|e| Failure::new(EXIT_METRIC, e.to_string()))
}

#[derive(Serialize)]
struct BranchDiagnostics<'a> {
    branch: usize,
    prompt: &'a str,
    n_text: usize,
    diagnostics: DiagonalReport,
    foreground_tokens: usize,
}

/// One recorded forward pass per prompt on its segment's initial noise at
/// the noise level of `step`, with attention dumps, diagonal diagnostics,
/// semantic maps and masks.
pub fn cmd_dump_attention(cfg: &RunConfig, step: usize, out: &Path) -> CmdResult<Manifest> {
    if cfg.model.identity_denoiser {
        return Err(Failure::new(
            EXIT_CONFIG,
            "dump-attention needs the network denoiser",
        ));
    }
    let alphas = noise_schedule(cfg.steps)?;
    let alpha = *alphas.get(step).ok_or_else(|| {
        Failure::usage(format!("step {step} out of range (steps = {})", cfg.steps))
    })?;
    prepare_out(out)?;
    let s = sampler(cfg)?;
    let schedule = cfg.schedule();
    let layout = schedule.layout()?;
    let init = s.initial_noise(
        schedule.latent_dims(cfg.model.channels, layout.total_frames()),
        cfg.seed,
    );
    let segments = reslice(&init, &layout)?;
    let mut m = base_manifest("dump-attention", cfg);
    m.set("step", step);
    m.set("alpha", format!("{alpha:?}"));
    let mut reports = Vec::with_capacity(cfg.prompts.len());
    for (i, (prompt, z)) in cfg.prompts.iter().zip(&segments).enumerate() {
        let text = s.embedder().embed(&prompt.text)?;
        let rec = s
            .model()
            .predict_noise(
                z,
                &text,
                alpha,
                &ForwardOptions {
                    record: true,
                    ..ForwardOptions::default()
                },
            )?
            .record
            .expect("recording requested");
        let dir = out.join(format!("branch_{i}"));
        prepare_out(&dir)?;
        m.outputs(rec.export(&dir)?);
        let map = SemanticMap::extract(&rec, &prompt.tokens, i)?;
        let map_path = out.join(format!("semantic_{i}.ditc"));
        map.tensor().save(&map_path)?;
        m.output(map_path);
        let mask = map.binarize(cfg.control.mask_threshold);
        m.outputs(mask.export(out)?);
        reports.push(BranchDiagnostics {
            branch: i,
            prompt: &prompt.text,
            n_text: rec.n_text(),
            diagnostics: rec.diagonal_diagnostics(),
            foreground_tokens: mask.count_foreground(),
        });
    }
    let diag = out.join("diagnostics.json");
    fs::write(
        &diag,
        serde_json::to_string_pretty(&reports).expect("serializable"),
    )?;
    m.output(diag);
    m.write(out)?;
    Ok(m)
}
