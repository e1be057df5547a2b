use crate::error::{Error, Result};
use crate::latent::LatentVideo;

/// Noise levels `α_s = (s + 1) / (S + 1)` for `s = 0..S`: strictly
/// increasing, all in `(0, 1)`. Step `s` moves the latent from `α_s` to
/// `α_{s+1}`, and the last step lands on `α = 1`.
pub fn noise_schedule(steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::invalid("sampler needs at least one step"));
    }
    let denom = (steps + 1) as f64;
    Ok((0..steps).map(|s| (s + 1) as f64 / denom).collect())
}

/// Coefficients of the deterministic update `x' = (x − c1·ε̂) / c2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepCoefficients {
    pub c1: f64,
    pub c2: f64,
}

impl StepCoefficients {
    /// DDIM (η = 0) transport from level `alpha` to `alpha_next`:
    /// `c2 = √(α/α')`, `c1 = −c2·(√(1−α') − √α'·√(1−α)/√α)`.
    pub fn between(alpha: f64, alpha_next: f64) -> Self {
        let c2 = (alpha / alpha_next).sqrt();
        let beta =
            (1.0 - alpha_next).sqrt() - alpha_next.sqrt() * (1.0 - alpha).sqrt() / alpha.sqrt();
        StepCoefficients { c1: -beta * c2, c2 }
    }
}

/// Per-step coefficients for an `S`-step schedule.
pub fn step_coefficients(alphas: &[f64]) -> Vec<StepCoefficients> {
    alphas
        .iter()
        .enumerate()
        .map(|(s, &a)| StepCoefficients::between(a, alphas.get(s + 1).copied().unwrap_or(1.0)))
        .collect()
}

/// Apply one update step.
pub fn denoise_step(
    latent: &LatentVideo,
    noise: &LatentVideo,
    coeffs: StepCoefficients,
) -> Result<LatentVideo> {
    if latent.dims() != noise.dims() {
        return Err(Error::Shape {
            op: "denoise_step",
            expected: vec![latent.dims().len()],
            got: vec![noise.dims().len()],
        });
    }
    let data = latent
        .data()
        .iter()
        .zip(noise.data())
        .map(|(x, e)| (x - coeffs.c1 * e) / coeffs.c2)
        .collect();
    LatentVideo::new(latent.dims(), data)
}
