//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use ditctrl_cli::RunConfig;
use ditctrl_core::blend::{blend, position_weight, SegmentLayout};
use ditctrl_core::control::{mask_guided_fusion, CapturedKv, ControlHook, LayerControl};
use ditctrl_core::metrics::{synthetic_trajectory, TrajectoryKind};
use ditctrl_core::model::ForwardOptions;
use ditctrl_core::pipeline::{seam_discontinuity, Toggles};
use ditctrl_core::{
    adjacent_similarity, cscv, ControlConfig, LatentDims, LatentVideo, ModelConfig, PromptSchedule,
    PromptSpec, Sampler, SemanticMask, SimilaritySeries, Tensor, TextEmbedder, ToyMmDit, VideoGrid,
};

const ROW_SUM_TOL: f64 = 1e-9;
const ATTENTION_BUDGET: Duration = Duration::from_secs(5);
const FUSION_TOL: f64 = 1e-12;
const BLEND_TOL: f64 = 1e-12;
const CSCV_TOL: f64 = 1e-9;
const CSCV_BUDGET: Duration = Duration::from_secs(10);
const CSCV_SEEDS: u64 = 100;
const CSCV_FRAMES: usize = 16;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn attention_soundness() -> Check {
    let start = Instant::now();
    let model = ToyMmDit::seeded(ModelConfig {
        n_layers: 4,
        n_heads: 2,
        d_model: 16,
        seed: 1,
        ..ModelConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let prompt = "a small red kite rises over hills";
    ensure(
        TextEmbedder::token_count(prompt) == 8,
        "prompt must give 8 text tokens",
    )?;
    let text = TextEmbedder::new(16, 1)
        .embed(prompt)
        .map_err(|e| e.to_string())?;
    let z = LatentVideo::gaussian(LatentDims::new(5, 8, 8, 4), 2);
    let rec = model
        .predict_noise(
            &z,
            &text,
            0.5,
            &ForwardOptions {
                record: true,
                ..ForwardOptions::default()
            },
        )
        .map_err(|e| e.to_string())?
        .record
        .ok_or("no record")?;
    let mut worst = 0.0f64;
    let mut rows = 0;
    for (l, h, a) in rec.iter() {
        ensure(
            a.dims() == [328, 328],
            format!("matrix shape {:?}", a.dims()),
        )?;
        for r in 0..a.rows() {
            worst = worst.max((a.row(r).iter().sum::<f64>() - 1.0).abs());
            rows += 1;
        }
        let back = rec
            .region_views(l, h)
            .and_then(|v| v.reassemble())
            .map_err(|e| e.to_string())?;
        let same = back
            .data()
            .iter()
            .zip(a.data())
            .all(|(x, y)| x.to_bits() == y.to_bits());
        ensure(
            same && back.dims() == a.dims(),
            format!("layer {l} head {h}: reassembly differs"),
        )?;
    }
    let elapsed = start.elapsed();
    ensure(worst <= ROW_SUM_TOL, format!("row sum error {worst:e}"))?;
    ensure(elapsed < ATTENTION_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "{rows} rows, max |sum-1| = {worst:.1e}, tiling bitwise, {elapsed:.2?}"
    ))
}

fn same_bits(a: &LatentVideo, b: &LatentVideo) -> bool {
    a.dims() == b.dims()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn restricted_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    qi: usize,
    keep: &[bool],
    scale: f64,
) -> Vec<f64> {
    let logits: Vec<f64> = (0..k.rows())
        .map(|j| (0..q.cols()).map(|c| q.at(qi, c) * k.at(j, c)).sum::<f64>() * scale)
        .collect();
    let top = (0..k.rows())
        .filter(|&j| keep[j])
        .map(|j| logits[j])
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = (0..k.rows())
        .filter(|&j| keep[j])
        .map(|j| (logits[j] - top).exp())
        .sum();
    (0..v.cols())
        .map(|c| {
            (0..k.rows())
                .filter(|&j| keep[j])
                .map(|j| (logits[j] - top).exp() / z * v.at(j, c))
                .sum()
        })
        .collect()
}

fn fusion_oracle() -> Check {
    let q = Tensor::from_rows(&[
        [0.9, -0.3, 0.4],
        [-1.2, 0.8, 0.1],
        [0.05, 0.6, -0.7],
        [1.4, 1.1, 0.2],
    ])
    .unwrap();
    let k = Tensor::from_rows(&[
        [0.2, 1.0, -0.5],
        [1.3, -0.6, 0.9],
        [-0.8, 0.3, 0.3],
        [0.4, 0.4, -1.1],
    ])
    .unwrap();
    let v = Tensor::from_rows(&[[1.0, -2.0], [0.5, 0.5], [-3.0, 1.5], [2.5, 0.0]]).unwrap();
    let scale = 1.0 / 3f64.sqrt();
    let bits = |p: u32| (0..4).map(|i| p >> i & 1 == 1).collect::<Vec<bool>>();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for src in 1..15 {
        let fg = bits(src);
        let bg: Vec<bool> = fg.iter().map(|b| !b).collect();
        for cur in 0..16 {
            let m_cur = bits(cur);
            let out =
                mask_guided_fusion(&q, &k, &v, &fg, &m_cur, scale).map_err(|e| e.to_string())?;
            for (qi, &is_fg) in m_cur.iter().enumerate() {
                let want =
                    restricted_attention(&q, &k, &v, qi, if is_fg { &fg } else { &bg }, scale);
                for (c, w) in want.iter().enumerate() {
                    worst = worst.max((out.at(qi, c) - w).abs());
                }
            }
            cases += 1;
        }
    }
    ensure(cases == 224, format!("{cases} cases"))?;
    ensure(worst <= FUSION_TOL, format!("max error {worst:e}"))?;
    Ok(format!("{cases} mask pairs, max error {worst:.1e}"))
}

struct OwnKv<'a>(&'a [Option<CapturedKv>]);

impl ControlHook for OwnKv<'_> {
    fn layer_control(&self, layer: usize) -> Option<LayerControl<'_>> {
        self.0[layer]
            .as_ref()
            .map(|source| LayerControl::ShareKv { source })
    }
}

fn small_sampler(seed: u64) -> Sampler {
    Sampler::seeded(ModelConfig {
        n_layers: 4,
        seed,
        ..ModelConfig::default()
    })
    .unwrap()
}

fn small_schedule(prompts: &[&str], t: usize, o: usize, seed: u64) -> PromptSchedule {
    PromptSchedule {
        prompts: prompts
            .iter()
            .map(|p| PromptSpec::new(*p, vec![1]))
            .collect(),
        segment_frames: t,
        overlap: o,
        height: 3,
        width: 3,
        steps: 10,
        control: ControlConfig {
            kv_share_steps: (2, 8),
            kv_share_layers: (1, 4),
            ..ControlConfig::default()
        },
        seed,
    }
}

fn identity_laws() -> Check {
    let s = small_sampler(5);
    let e = |x: ditctrl_core::Error| x.to_string();

    // (a) model level: feeding a pass its own K/V; pipeline level: sharing
    // from an identical branch.
    let z = LatentVideo::gaussian(LatentDims::new(3, 3, 3, 4), 8);
    let text = s.embedder().embed("a kite over hills").map_err(e)?;
    let own = s
        .model()
        .predict_noise(
            &z,
            &text,
            0.3,
            &ForwardOptions {
                capture_kv: Some((0, 4)),
                ..ForwardOptions::default()
            },
        )
        .map_err(e)?;
    let hooked = s
        .model()
        .predict_noise(
            &z,
            &text,
            0.3,
            &ForwardOptions {
                hook: Some(&OwnKv(&own.kv)),
                ..ForwardOptions::default()
            },
        )
        .map_err(e)?;
    ensure(
        same_bits(&hooked.noise, &own.noise),
        "(a) own-KV hook changed the prediction",
    )?;
    let mut sch = small_schedule(&["a kite over hills"], 4, 0, 3);
    sch.control.mask_guided = false;
    let p = &sch.prompts[0];
    let (_, tgt) = s.word_swap_run(p, p, &sch).map_err(e)?;
    let init = s.initial_noise(sch.latent_dims(4, 4), sch.seed);
    let plain = s.sample_plain(p, init, sch.steps).map_err(e)?;
    ensure(
        same_bits(&tgt, &plain),
        "(a) sharing from an identical branch changed the output",
    )?;

    // (b)
    let (base, edited) = s.reweight_run(p, 1, 1.0, &sch).map_err(e)?;
    ensure(
        same_bits(&base, &edited),
        "(b) factor 1 reweight changed the output",
    )?;

    // (c)
    let mut sch = small_schedule(
        &[
            "a kite over hills",
            "a kite over water",
            "a bird over water",
        ],
        3,
        0,
        4,
    );
    sch.control = ControlConfig::disabled();
    let joint = s.sample_multi_prompt(&sch, Default::default()).map_err(e)?;
    let init = s.initial_noise(sch.latent_dims(4, 9), sch.seed);
    for (i, p) in sch.prompts.iter().enumerate() {
        let alone = s
            .sample_plain(p, init.slice_frames(3 * i, 3).map_err(e)?, sch.steps)
            .map_err(e)?;
        ensure(
            same_bits(&joint.latent.slice_frames(3 * i, 3).map_err(e)?, &alone),
            format!("(c) segment {i} differs from its independent run"),
        )?;
    }
    Ok("own-KV share, unit reweight and disabled control are bitwise identities".into())
}

fn blending_correctness() -> Check {
    let w6 = position_weight(6, 13).map_err(|e| e.to_string())?;
    let w0 = position_weight(0, 13).map_err(|e| e.to_string())?;
    ensure(w6 == 1.0, format!("w(6) = {w6}"))?;
    ensure(w0 == 1.0 / 13.0, format!("w(0) = {w0}"))?;

    let layout = SegmentLayout::plan(2, 3, 1).map_err(|e| e.to_string())?;
    ensure(layout.total_frames() == 5, "layout should cover 5 frames")?;
    let dims = LatentDims::new(3, 1, 2, 1);
    let a = LatentVideo::new(dims, vec![0.5, -1.0, 2.0, 4.0, 3.0, -2.0]).unwrap();
    let b = LatentVideo::new(dims, vec![7.0, 1.0, -5.0, 0.25, 9.0, 6.0]).unwrap();
    let out = blend(&[a.clone(), b.clone()], &layout).map_err(|e| e.to_string())?;
    let (wa, wb) = (1.0 / 3.0, 1.0 / 3.0);
    let want = [
        0.5,
        -1.0,
        2.0,
        4.0,
        (wa * 3.0 + wb * 7.0) / (wa + wb),
        (wa * -2.0 + wb * 1.0) / (wa + wb),
        -5.0,
        0.25,
        9.0,
        6.0,
    ];
    let worst = out
        .data()
        .iter()
        .zip(&want)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    ensure(worst <= BLEND_TOL, format!("hand instance error {worst:e}"))?;

    let layout0 = SegmentLayout::plan(3, 2, 0).map_err(|e| e.to_string())?;
    let segs: Vec<LatentVideo> = (0..3)
        .map(|i| LatentVideo::gaussian(LatentDims::new(2, 2, 2, 3), i))
        .collect();
    let cat = LatentVideo::concat_frames(&segs).map_err(|e| e.to_string())?;
    let blended = blend(&segs, &layout0).map_err(|e| e.to_string())?;
    let bitwise = blended
        .data()
        .iter()
        .zip(cat.data())
        .all(|(x, y)| x.to_bits() == y.to_bits());
    ensure(bitwise, "O=0 blend is not concatenation")?;
    Ok(format!(
        "w(6)=1, w(0)=1/13 exact; hand blend error {worst:.1e}; O=0 concatenation bitwise"
    ))
}

fn cscv_reproduction() -> Check {
    let start = Instant::now();
    let flat = SimilaritySeries::from_values(vec![0.7; 6]).map_err(|e| e.to_string())?;
    let flat_score = cscv(&flat, 10.0).map_err(|e| e.to_string())?;
    ensure(flat_score == 1.0, format!("sigma = 0 scored {flat_score}"))?;

    let s = [1.0f64, 0.5, 1.0];
    let mu = (s[0] + s[1] + s[2]) / 3.0;
    let var = s.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / 3.0;
    let want = 1.0 / (1.0 + 10.0 * var.sqrt() / mu);
    let got = cscv(&SimilaritySeries::from_values(s.to_vec()).unwrap(), 10.0)
        .map_err(|e| e.to_string())?;
    ensure(
        (got - want).abs() <= CSCV_TOL,
        format!("constructed case {got} vs {want}"),
    )?;

    let mut margin = f64::INFINITY;
    for seed in 0..CSCV_SEEDS {
        let score = |kind| -> Result<f64, String> {
            let t = synthetic_trajectory(kind, CSCV_FRAMES, seed).map_err(|e| e.to_string())?;
            cscv(&adjacent_similarity(&t).map_err(|e| e.to_string())?, 10.0)
                .map_err(|e| e.to_string())
        };
        let (smooth, split) = (
            score(TrajectoryKind::Smooth)?,
            score(TrajectoryKind::TwoCluster)?,
        );
        ensure(
            smooth > split,
            format!("seed {seed}: smooth {smooth} <= two-cluster {split}"),
        )?;
        margin = margin.min(smooth - split);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < CSCV_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!(
        "sigma=0 -> 1.0; [1,0.5,1] -> {got:.6} (|err| {:.1e}); {CSCV_SEEDS} seeds smooth > two-cluster (min margin {margin:.4}), {elapsed:.2?}",
        (got - want).abs()
    ))
}

fn ablation_ordering() -> Check {
    let s = small_sampler(0);
    let sch = small_schedule(&["a cat walks on grass", "a cat sleeps on grass"], 5, 2, 0);
    let seam = |t: Toggles| -> Result<f64, String> {
        let run = s.run_ablation(&sch, t).map_err(|e| e.to_string())?;
        seam_discontinuity(&run.output.latent, &run.output.layout).map_err(|e| e.to_string())
    };
    let isolated = seam(Toggles::NONE)?;
    let blend_only = seam(Toggles {
        blending: true,
        ..Toggles::NONE
    })?;
    let full = seam(Toggles::ALL)?;
    ensure(
        isolated > blend_only,
        format!("isolated {isolated:.6} not above blending-only {blend_only:.6}"),
    )?;
    let second = if blend_only >= full {
        "holds"
    } else {
        "does not hold"
    };
    Ok(format!(
        "isolated {isolated:.6} > blending-only {blend_only:.6}; blending-only >= full ({full:.6}) {second} [report only]"
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ditctrl"))
        .args(args)
        .env_remove("DITCTRL_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(
        out.status.success(),
        format!(
            "ditctrl {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ),
    )
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = RunConfig {
        model: ditctrl_cli::config::ModelSection {
            n_layers: 4,
            ..Default::default()
        },
        height: 3,
        width: 3,
        segment_frames: 5,
        overlap: 2,
        steps: 8,
        control: ControlConfig {
            kv_share_steps: (1, 6),
            kv_share_layers: (1, 4),
            ..ControlConfig::default()
        },
        dump: ditctrl_cli::config::DumpFlags {
            masks: true,
            step_latents: true,
            segments: true,
        },
        seed: 17,
        ..RunConfig::default()
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let cfg_path = dir.path().join("c.json");
    std::fs::write(&cfg_path, cfg.to_json()).map_err(|e| e.to_string())?;
    let cfg_arg = cfg_path.to_str().unwrap();
    let mut manifests = Vec::new();
    for (run, threads) in [("a", "1"), ("b", "4"), ("c", "1"), ("d", "3")] {
        let out = dir.path().join(run);
        run_cli(&[
            "--threads",
            threads,
            "generate",
            "--config",
            cfg_arg,
            "--out",
            out.to_str().unwrap(),
        ])?;
        manifests
            .push(std::fs::read_to_string(out.join("manifest.txt")).map_err(|e| e.to_string())?);
    }
    ensure(
        manifests.iter().all(|m| m == &manifests[0]),
        "manifests differ across runs",
    )?;
    let digests = manifests[0]
        .lines()
        .filter(|l| l.starts_with("sha256 "))
        .count();
    ensure(digests > 3, "manifest lists too few artifacts")?;
    Ok(format!(
        "4 generate runs at 1/4/1/3 threads, identical manifests ({digests} digests)"
    ))
}

fn file_round_trip(path: &Path) -> Result<(), String> {
    let bytes = std::fs::read(path).map_err(|e| e.to_string())?;
    let t = Tensor::read_dump(bytes.as_slice()).map_err(|e| e.to_string())?;
    let mut again = Vec::new();
    t.write_dump(&mut again).map_err(|e| e.to_string())?;
    ensure(
        again == bytes,
        format!("{} changed on round trip", path.display()),
    )
}

fn io_bit_exactness() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data: Vec<f64> = (0..60)
        .map(|i| ((i * 37 % 23) as f32 / 7.0 - 1.5) as f64)
        .collect();
    let t = Tensor::new(vec![3, 4, 5], data).map_err(|e| e.to_string())?;
    let path = dir.path().join("t.ditc");
    t.save(&path).map_err(|e| e.to_string())?;
    let back = Tensor::load(&path).map_err(|e| e.to_string())?;
    let bitwise = back.dims() == t.dims()
        && back
            .data()
            .iter()
            .zip(t.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
    ensure(bitwise, "tensor dump round trip changed values")?;
    file_round_trip(&path)?;

    let grid = VideoGrid {
        frames: 3,
        height: 4,
        width: 5,
    };
    let bits: Vec<bool> = (0..grid.tokens())
        .map(|i| (i * 7 + i / 3) % 5 < 2)
        .collect();
    let mask = SemanticMask::new(bits.clone(), grid, 1).map_err(|e| e.to_string())?;
    let files = mask.export(dir.path()).map_err(|e| e.to_string())?;
    let frames: Vec<Vec<u8>> = files
        .iter()
        .map(std::fs::read)
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let again = SemanticMask::from_pgm_frames(&frames, 1).map_err(|e| e.to_string())?;
    ensure(
        again.bits() == bits.as_slice() && again.grid() == grid,
        "mask round trip changed bits",
    )?;
    for (f, bytes) in frames.iter().enumerate() {
        ensure(
            &again.frame_pgm(f).map_err(|e| e.to_string())? == bytes,
            "PGM bytes changed",
        )?;
    }

    let mut cfg = RunConfig::default();
    cfg.control.mask_threshold = 0.1 + 0.2;
    cfg.cscv_lambda = 2.0f64.sqrt();
    let once = RunConfig::from_json(&cfg.to_json()).map_err(|e| e.to_string())?;
    let twice = RunConfig::from_json(&once.to_json()).map_err(|e| e.to_string())?;
    ensure(
        once == cfg && twice == once,
        "config round trip changed values",
    )?;
    ensure(
        RunConfig::from_json("{}").map_err(|e| e.to_string())? == RunConfig::default(),
        "defaults",
    )?;
    Ok("tensor dump, PGM mask and config round trips are exact".into())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("attention soundness", attention_soundness),
        ("fusion oracle", fusion_oracle),
        ("identity laws", identity_laws),
        ("blending correctness", blending_correctness),
        ("CSCV reproduction", cscv_reproduction),
        ("ablation ordering", ablation_ordering),
        ("determinism", determinism),
        ("I/O bit-exactness", io_bit_exactness),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("acceptance {} PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {} FAIL {name}: {why}", i + 1)
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
