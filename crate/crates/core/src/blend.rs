//! Overlapped segment layout and per-step latent blending.
//!
//! Segment `i` covers global frames `[i·(T−O), i·(T−O)+T)`. A global frame
//! is the weighted mean of every segment frame that covers it, with the
//! tent weight `w(t) = min(2(t+½)/T, 2 − 2(t+½)/T)` on the local index `t`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentVideo;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLayout {
    pub n_segments: usize,
    pub segment_frames: usize,
    pub overlap: usize,
}

impl SegmentLayout {
    pub fn plan(n_segments: usize, segment_frames: usize, overlap: usize) -> Result<Self> {
        if n_segments == 0 {
            return Err(Error::invalid("segment count must be at least 1"));
        }
        if overlap >= segment_frames {
            return Err(Error::invalid(format!(
                "overlap {overlap} must be smaller than segment length {segment_frames}"
            )));
        }
        Ok(SegmentLayout {
            n_segments,
            segment_frames,
            overlap,
        })
    }

    pub fn stride(&self) -> usize {
        self.segment_frames - self.overlap
    }

    pub fn start(&self, segment: usize) -> usize {
        segment * self.stride()
    }

    pub fn range(&self, segment: usize) -> std::ops::Range<usize> {
        let s = self.start(segment);
        s..s + self.segment_frames
    }

    pub fn total_frames(&self) -> usize {
        self.segment_frames + (self.n_segments - 1) * self.stride()
    }

    /// Segments covering global frame `g`, ascending.
    pub fn covering(&self, g: usize) -> impl Iterator<Item = usize> + '_ {
        let stride = self.stride();
        let first = (g + 1).saturating_sub(self.segment_frames).div_ceil(stride);
        let last = (g / stride).min(self.n_segments - 1);
        first..=last
    }

    /// Largest number of segments sharing one frame.
    pub fn max_cover(&self) -> usize {
        (0..self.total_frames())
            .map(|g| self.covering(g).count())
            .max()
            .unwrap_or(0)
    }
}

/// Tent weight at local frame `t` of a `T`-frame segment.
///
/// Evaluated as `(2u + 1)/T` with `u = min(t, T−1−t)`, which equals the
/// `min` form exactly and makes `w(t) == w(T−1−t)` hold bitwise.
pub fn position_weight(t: usize, segment_frames: usize) -> Result<f64> {
    if t >= segment_frames {
        return Err(Error::IndexOutOfRange {
            what: "segment frame",
            index: t,
            len: segment_frames,
        });
    }
    let u = t.min(segment_frames - 1 - t);
    Ok((2 * u + 1) as f64 / segment_frames as f64)
}

pub fn blend_weights(segment_frames: usize) -> Vec<f64> {
    (0..segment_frames)
        .map(|t| position_weight(t, segment_frames).expect("in range"))
        .collect()
}

/// CSV `t,w` rows, header included, 17 significant digits.
pub fn write_weights_csv<W: Write>(segment_frames: usize, mut w: W) -> Result<()> {
    writeln!(w, "t,w")?;
    for (t, wt) in blend_weights(segment_frames).into_iter().enumerate() {
        writeln!(w, "{t},{wt:.16e}")?;
    }
    Ok(())
}

/// Blend per-segment latents into one global latent.
///
/// Single-cover frames and frames on which every contributor agrees are
/// copied verbatim. Elsewhere the weighted sum is formed over contributors
/// sorted by value, so the result does not depend on segment order, and is
/// clamped to the contributors' range.
pub fn blend(segments: &[LatentVideo], layout: &SegmentLayout) -> Result<LatentVideo> {
    if segments.len() != layout.n_segments {
        return Err(Error::invalid(format!(
            "layout has {} segments, got {} latents",
            layout.n_segments,
            segments.len()
        )));
    }
    let dims = segments[0].dims();
    for s in segments {
        if s.dims() != dims.with_frames(layout.segment_frames) {
            return Err(Error::Shape {
                op: "blend",
                expected: vec![
                    layout.segment_frames,
                    dims.height,
                    dims.width,
                    dims.channels,
                ],
                got: vec![
                    s.dims().frames,
                    s.dims().height,
                    s.dims().width,
                    s.dims().channels,
                ],
            });
        }
    }
    let weights = blend_weights(layout.segment_frames);
    let mut out = LatentVideo::zeros(dims.with_frames(layout.total_frames()));
    let mut terms: Vec<(f64, f64)> = Vec::with_capacity(layout.max_cover());
    for g in 0..layout.total_frames() {
        let cover: Vec<(usize, usize)> = layout
            .covering(g)
            .map(|i| (i, g - layout.start(i)))
            .collect();
        if let [(i, t)] = cover[..] {
            out.frame_mut(g).copy_from_slice(segments[i].frame(t));
            continue;
        }
        let frames: Vec<&[f64]> = cover.iter().map(|&(i, t)| segments[i].frame(t)).collect();
        let ws: Vec<f64> = cover.iter().map(|&(_, t)| weights[t]).collect();
        let dst = out.frame_mut(g);
        for (e, o) in dst.iter_mut().enumerate() {
            let first = frames[0][e];
            if frames.iter().all(|f| f[e] == first) {
                *o = first;
                continue;
            }
            terms.clear();
            terms.extend(frames.iter().zip(&ws).map(|(f, &w)| (f[e], w)));
            terms.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let (mut num, mut den) = (0.0, 0.0);
            for &(z, w) in &terms {
                num += w * z;
                den += w;
            }
            let (lo, hi) = (terms[0].0, terms[terms.len() - 1].0);
            *o = (num / den).clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Cut a global latent back into per-segment latents.
pub fn reslice(global: &LatentVideo, layout: &SegmentLayout) -> Result<Vec<LatentVideo>> {
    if global.dims().frames != layout.total_frames() {
        return Err(Error::invalid(format!(
            "global latent has {} frames, layout needs {}",
            global.dims().frames,
            layout.total_frames()
        )));
    }
    (0..layout.n_segments)
        .map(|i| global.slice_frames(layout.start(i), layout.segment_frames))
        .collect()
}
