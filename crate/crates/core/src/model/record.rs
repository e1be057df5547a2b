use std::path::Path;

use serde::Serialize;

use super::mmdit::VideoGrid;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Post-softmax attention probabilities per layer and head over the unified
/// sequence, with the text/video boundary at `n_text`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    n_layers: usize,
    n_heads: usize,
    n_text: usize,
    grid: VideoGrid,
    layers: Vec<Vec<Tensor>>,
}

/// The four quadrants of one attention matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionViews {
    pub t2t: Tensor,
    pub t2v: Tensor,
    pub v2t: Tensor,
    pub v2v: Tensor,
}

impl RegionViews {
    /// Rebuild the full matrix from its quadrants.
    pub fn reassemble(&self) -> Result<Tensor> {
        let top = Tensor::hstack(&[&self.t2t, &self.t2v])?;
        let bottom = Tensor::hstack(&[&self.v2t, &self.v2v])?;
        Tensor::vstack(&[&top, &bottom])
    }
}

/// Diagonal-pattern statistics, each a mean over layers, heads and the
/// relevant query rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiagonalReport {
    /// V2V mass on keys in the query's own frame.
    pub v2v_same_frame_mass: f64,
    /// V2V mass on keys at the query's spatial position in any frame.
    pub v2v_same_position_mass: f64,
    /// V2V mass on the query token itself.
    pub v2v_self_mass: f64,
    /// T2T mass on the diagonal.
    pub t2t_diagonal_mass: f64,
    /// T2T mass on the last text token's column.
    pub t2t_last_token_mass: f64,
}

impl AttentionRecord {
    pub fn new(n_layers: usize, n_heads: usize, n_text: usize, grid: VideoGrid) -> Self {
        AttentionRecord {
            n_layers,
            n_heads,
            n_text,
            grid,
            layers: Vec::with_capacity(n_layers),
        }
    }

    /// Append one layer's per-head matrices.
    pub fn push_layer(&mut self, heads: Vec<Tensor>) -> Result<()> {
        let l = self.seq_len();
        if heads.len() != self.n_heads {
            return Err(Error::invalid(format!(
                "record expects {} heads, got {}",
                self.n_heads,
                heads.len()
            )));
        }
        if self.layers.len() == self.n_layers {
            return Err(Error::invalid("record already holds every layer"));
        }
        for h in &heads {
            if h.dims() != [l, l] {
                return Err(Error::Shape {
                    op: "AttentionRecord::push_layer",
                    expected: vec![l, l],
                    got: h.dims().to_vec(),
                });
            }
        }
        self.layers.push(heads);
        Ok(())
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn n_text(&self) -> usize {
        self.n_text
    }

    pub fn grid(&self) -> VideoGrid {
        self.grid
    }

    pub fn n_video(&self) -> usize {
        self.grid.tokens()
    }

    pub fn seq_len(&self) -> usize {
        self.n_text + self.grid.tokens()
    }

    pub fn recorded_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn is_complete(&self) -> bool {
        self.layers.len() == self.n_layers
    }

    pub fn ensure_complete(&self) -> Result<()> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(Error::IncompleteRecord {
                have: self.layers.len(),
                want: self.n_layers,
            })
        }
    }

    pub fn matrix(&self, layer: usize, head: usize) -> Result<&Tensor> {
        let heads = self.layers.get(layer).ok_or(Error::IndexOutOfRange {
            what: "layer",
            index: layer,
            len: self.layers.len(),
        })?;
        heads.get(head).ok_or(Error::IndexOutOfRange {
            what: "head",
            index: head,
            len: heads.len(),
        })
    }

    /// Iterate `(layer, head, matrix)` over everything recorded.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, hs)| hs.iter().enumerate().map(move |(h, m)| (l, h, m)))
    }

    /// Split `A^{layer,head}` at the text/video boundary.
    pub fn region_views(&self, layer: usize, head: usize) -> Result<RegionViews> {
        let a = self.matrix(layer, head)?;
        let (t, l) = (self.n_text, self.seq_len());
        Ok(RegionViews {
            t2t: a.block(0..t, 0..t)?,
            t2v: a.block(0..t, t..l)?,
            v2t: a.block(t..l, 0..t)?,
            v2v: a.block(t..l, t..l)?,
        })
    }

    pub fn diagonal_diagnostics(&self) -> DiagonalReport {
        let (t, g) = (self.n_text, self.grid);
        let hw = g.height * g.width;
        let nv = g.tokens();
        let mut same_frame = 0.0;
        let mut same_pos = 0.0;
        let mut self_mass = 0.0;
        let mut t2t_diag = 0.0;
        let mut t2t_last = 0.0;
        let mut mats = 0usize;
        for (_, _, a) in self.iter() {
            mats += 1;
            let (mut sf, mut sp, mut sm) = (0.0, 0.0, 0.0);
            for q in 0..nv {
                let row = &a.row(t + q)[t..];
                let (qf, qs) = (q / hw, q % hw);
                sf += row[qf * hw..(qf + 1) * hw].iter().sum::<f64>();
                sp += (0..g.frames).map(|f| row[f * hw + qs]).sum::<f64>();
                sm += row[q];
            }
            if nv > 0 {
                same_frame += sf / nv as f64;
                same_pos += sp / nv as f64;
                self_mass += sm / nv as f64;
            }
            if t > 0 {
                t2t_diag += (0..t).map(|j| a.at(j, j)).sum::<f64>() / t as f64;
                t2t_last += (0..t).map(|j| a.at(j, t - 1)).sum::<f64>() / t as f64;
            }
        }
        let n = mats.max(1) as f64;
        DiagonalReport {
            v2v_same_frame_mass: same_frame / n,
            v2v_same_position_mass: same_pos / n,
            v2v_self_mass: self_mass / n,
            t2t_diagonal_mass: t2t_diag / n,
            t2t_last_token_mass: t2t_last / n,
        }
    }

    /// Write every matrix as `attn_L{layer}_H{head}.ditc` under `dir`.
    pub fn export(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut written = Vec::new();
        for (l, h, m) in self.iter() {
            let path = dir.join(format!("attn_L{l}_H{h}.ditc"));
            m.save(&path)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(f: usize, h: usize, w: usize) -> VideoGrid {
        VideoGrid {
            frames: f,
            height: h,
            width: w,
        }
    }

    fn pseudo_random(l: usize, salt: u64) -> Tensor {
        let data = (0..l * l)
            .map(|i| {
                let x = (i as u64 + 1)
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(salt);
                (x >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        Tensor::matrix(l, l, data).unwrap()
    }

    #[test]
    fn degenerate_boundaries() {
        let mut rec = AttentionRecord::new(1, 1, 0, grid(1, 2, 2));
        let a = pseudo_random(4, 1);
        rec.push_layer(vec![a.clone()]).unwrap();
        let v = rec.region_views(0, 0).unwrap();
        assert!(v.t2t.is_empty() && v.t2v.is_empty() && v.v2t.is_empty());
        assert_eq!(v.v2v, a);
        assert_eq!(v.reassemble().unwrap(), a);

        let mut rec = AttentionRecord::new(1, 1, 4, grid(0, 2, 2));
        rec.push_layer(vec![a.clone()]).unwrap();
        let v = rec.region_views(0, 0).unwrap();
        assert_eq!(v.t2t, a);
        assert!(v.t2v.is_empty() && v.v2t.is_empty() && v.v2v.is_empty());
        assert_eq!(v.reassemble().unwrap(), a);
    }

    #[test]
    fn views_tile_exactly() {
        let mut rec = AttentionRecord::new(2, 2, 3, grid(2, 2, 1));
        for l in 0..2 {
            rec.push_layer(vec![pseudo_random(7, l), pseudo_random(7, l + 10)])
                .unwrap();
        }
        for (l, h, a) in rec.iter() {
            let v = rec.region_views(l, h).unwrap();
            assert_eq!(v.t2t.dims(), &[3, 3]);
            assert_eq!(v.t2v.dims(), &[3, 4]);
            assert_eq!(v.v2t.dims(), &[4, 3]);
            assert_eq!(v.v2v.dims(), &[4, 4]);
            assert_eq!(&v.reassemble().unwrap(), a);
        }
        assert!(matches!(
            rec.region_views(2, 0),
            Err(Error::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            rec.region_views(0, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn identity_attention_diagnostics() {
        let mut rec = AttentionRecord::new(1, 2, 2, grid(2, 2, 2));
        rec.push_layer(vec![Tensor::identity(10), Tensor::identity(10)])
            .unwrap();
        let r = rec.diagonal_diagnostics();
        assert_eq!(r.v2v_same_frame_mass, 1.0);
        assert_eq!(r.v2v_same_position_mass, 1.0);
        assert_eq!(r.v2v_self_mass, 1.0);
        assert_eq!(r.t2t_diagonal_mass, 1.0);
        assert_eq!(r.t2t_last_token_mass, 0.5);
    }

    #[test]
    fn uniform_attention_diagnostics() {
        let l = 2 + 2 * 2 * 2;
        let mut rec = AttentionRecord::new(1, 1, 2, grid(2, 2, 2));
        rec.push_layer(vec![Tensor::full(vec![l, l], 1.0 / l as f64)])
            .unwrap();
        let r = rec.diagonal_diagnostics();
        let lf = l as f64;
        assert!((r.t2t_diagonal_mass - 1.0 / lf).abs() < 1e-15);
        assert!((r.v2v_self_mass - 1.0 / lf).abs() < 1e-15);
        assert!((r.v2v_same_frame_mass - 4.0 / lf).abs() < 1e-15);
        assert!((r.v2v_same_position_mass - 2.0 / lf).abs() < 1e-15);
    }

    #[test]
    fn push_validates() {
        let mut rec = AttentionRecord::new(1, 1, 1, grid(1, 1, 1));
        assert!(rec.push_layer(vec![Tensor::identity(3)]).is_err());
        assert!(rec.push_layer(vec![]).is_err());
        assert!(rec.ensure_complete().is_err());
        rec.push_layer(vec![Tensor::identity(2)]).unwrap();
        assert!(rec.ensure_complete().is_ok());
        assert!(rec.push_layer(vec![Tensor::identity(2)]).is_err());
    }
}
