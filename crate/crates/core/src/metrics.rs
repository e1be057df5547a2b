//! Cross-segment smoothness score (CSCV) over per-frame embeddings.
//!
//! Adjacent frames give cosine similarities `s_i = x_iᵀx_{i+1}`; the score is
//! `1 / (1 + λ·σ(s)/μ(s))` with population σ.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 10.0;

/// Unit-normalized per-frame feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTrajectory {
    vectors: Vec<Vec<f64>>,
    source: String,
}

impl EmbeddingTrajectory {
    /// Validate and L2-normalize `vectors`.
    pub fn new(vectors: Vec<Vec<f64>>, source: impl Into<String>) -> Result<Self> {
        if vectors.len() < 2 {
            return Err(Error::invalid(format!(
                "trajectory needs at least 2 frames, got {}",
                vectors.len()
            )));
        }
        let d = vectors[0].len();
        if d == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        let mut out = Vec::with_capacity(vectors.len());
        for (i, v) in vectors.into_iter().enumerate() {
            if v.len() != d {
                return Err(Error::Shape {
                    op: "EmbeddingTrajectory::new",
                    expected: vec![d],
                    got: vec![v.len()],
                });
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    op: "EmbeddingTrajectory::new",
                });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::invalid(format!(
                    "frame {i} has zero or unbounded norm"
                )));
            }
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
        Ok(EmbeddingTrajectory {
            vectors: out,
            source: source.into(),
        })
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn reversed(&self) -> Self {
        EmbeddingTrajectory {
            vectors: self.vectors.iter().rev().cloned().collect(),
            source: self.source.clone(),
        }
    }

    /// CSV text: header `frame,v0,…`, then one row per frame with 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("frame");
        for j in 0..self.dim() {
            write!(s, ",v{j}").unwrap();
        }
        s.push('\n');
        for (i, v) in self.vectors.iter().enumerate() {
            write!(s, "{i}").unwrap();
            for x in v {
                write!(s, ",{x:.16e}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

/// Parse embedding CSV rows without normalizing them.
pub fn read_embeddings_csv<R: BufRead>(r: R) -> Result<Vec<Vec<f64>>> {
    let bad = |m: String| Error::format("embedding CSV", m);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad("empty input".into()))??;
    let cols: Vec<&str> = header.trim_end().split(',').collect();
    if cols.first() != Some(&"frame") {
        return Err(bad("header must start with `frame`".into()));
    }
    let d = cols.len() - 1;
    if d == 0 {
        return Err(bad("no embedding columns".into()));
    }
    for (j, c) in cols[1..].iter().enumerate() {
        if *c != format!("v{j}") {
            return Err(bad(format!("column {} should be `v{j}`, got `{c}`", j + 1)));
        }
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 1 {
            return Err(bad(format!(
                "row {n} has {} fields, expected {}",
                fields.len(),
                d + 1
            )));
        }
        let frame: usize = fields[0]
            .trim()
            .parse()
            .map_err(|_| bad(format!("row {n}: bad frame index `{}`", fields[0])))?;
        if frame != rows.len() {
            return Err(bad(format!("row {n}: frame index {frame} out of order")));
        }
        let v = fields[1..]
            .iter()
            .map(|f| {
                f.trim()
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {n}: bad value `{f}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(v);
    }
    Ok(rows)
}

/// Adjacent similarities with their mean and population deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SimilaritySeries {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("similarity series is empty"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                op: "SimilaritySeries",
            });
        }
        let (mean, std) = if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
            (values[0], 0.0)
        } else {
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        Ok(SimilaritySeries { values, mean, std })
    }

    /// Coefficient of variation `σ/μ`.
    pub fn cv(&self) -> f64 {
        self.std / self.mean
    }
}

pub fn adjacent_similarity(traj: &EmbeddingTrajectory) -> Result<SimilaritySeries> {
    let s = traj
        .vectors
        .windows(2)
        .map(|w| w[0].iter().zip(&w[1]).map(|(a, b)| a * b).sum())
        .collect();
    SimilaritySeries::from_values(s)
}

pub fn cscv(series: &SimilaritySeries, lambda: f64) -> Result<f64> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::invalid(format!(
            "lambda must be finite and non-negative, got {lambda}"
        )));
    }
    if series.mean <= 0.0 {
        return Err(Error::UndefinedCscv);
    }
    if series.std == 0.0 || lambda == 0.0 {
        return Ok(1.0);
    }
    Ok(1.0 / (1.0 + lambda * series.cv()))
}

/// Produces a per-frame trajectory for a latent video. No pretrained
/// encoder ships with the crate.
pub trait Embedder {
    fn embed_frames(&self, frames: &[Vec<f64>]) -> Result<EmbeddingTrajectory>;
}

/// Flattens each frame and uses it directly as its feature vector.
#[derive(Clone, Copy, Debug, Default)]
pub struct RawFrameEmbedder;

impl Embedder for RawFrameEmbedder {
    fn embed_frames(&self, frames: &[Vec<f64>]) -> Result<EmbeddingTrajectory> {
        EmbeddingTrajectory::new(frames.to_vec(), "raw-frames")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryKind {
    Smooth,
    TwoCluster,
}

/// Dimension of synthetic trajectories.
pub const SYNTHETIC_DIM: usize = 8;
/// Angle covered by the smooth arc.
const ARC_ANGLE: f64 = std::f64::consts::FRAC_PI_2;
const SMOOTH_JITTER: f64 = 0.01;
const CLUSTER_SPREAD: f64 = 0.05;

/// Seeded synthetic trajectory.
pub fn synthetic_trajectory(
    kind: TrajectoryKind,
    m: usize,
    seed: u64,
) -> Result<EmbeddingTrajectory> {
    synthetic_with_noise(
        kind,
        m,
        seed,
        match kind {
            TrajectoryKind::Smooth => SMOOTH_JITTER,
            TrajectoryKind::TwoCluster => CLUSTER_SPREAD,
        },
    )
}

/// As [`synthetic_trajectory`] with an explicit jitter scale.
pub fn synthetic_with_noise(
    kind: TrajectoryKind,
    m: usize,
    seed: u64,
    jitter: f64,
) -> Result<EmbeddingTrajectory> {
    if m < 4 {
        return Err(Error::invalid(format!(
            "synthetic trajectory needs m >= 4, got {m}"
        )));
    }
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(Error::invalid("jitter must be finite and non-negative"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noise = |v: &mut Vec<f64>| {
        for x in v.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *x += jitter * z;
        }
    };
    let vectors = (0..m)
        .map(|i| {
            let mut v = vec![0.0; SYNTHETIC_DIM];
            match kind {
                TrajectoryKind::Smooth => {
                    let theta = ARC_ANGLE * i as f64 / (m - 1) as f64;
                    v[0] = theta.cos();
                    v[1] = theta.sin();
                }
                TrajectoryKind::TwoCluster => {
                    v[if i < m / 2 { 0 } else { 2 }] = 1.0;
                }
            }
            noise(&mut v);
            v
        })
        .collect();
    let tag = match kind {
        TrajectoryKind::Smooth => "synthetic-smooth",
        TrajectoryKind::TwoCluster => "synthetic-two-cluster",
    };
    EmbeddingTrajectory::new(vectors, format!("{tag}:{seed}"))
}
