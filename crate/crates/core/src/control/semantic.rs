use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::{AttentionRecord, VideoGrid};
use crate::tensor::Tensor;

/// Per-video-token saliency of a token set, `F × H × W`, in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    values: Tensor,
    grid: VideoGrid,
    pub tokens: Vec<usize>,
    pub branch: usize,
}

/// Binary foreground mask over the video token grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SemanticMask {
    bits: Vec<bool>,
    grid: VideoGrid,
    pub threshold_bits: u64,
    pub branch: usize,
}

impl SemanticMap {
    pub fn from_values(values: Vec<f64>, grid: VideoGrid, branch: usize) -> Result<Self> {
        let values = Tensor::new(vec![grid.frames, grid.height, grid.width], values)?;
        Ok(SemanticMap {
            values,
            grid,
            tokens: Vec::new(),
            branch,
        })
    }

    pub fn values(&self) -> &[f64] {
        self.values.data()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn grid(&self) -> VideoGrid {
        self.grid
    }

    /// Average the T2V rows and V2T columns of `tokens` over every layer and
    /// head, then min-max normalize each frame. A constant frame maps to 0.
    pub fn extract(rec: &AttentionRecord, tokens: &[usize], branch: usize) -> Result<Self> {
        rec.ensure_complete()?;
        let mut tokens = tokens.to_vec();
        tokens.sort_unstable();
        tokens.dedup();
        if tokens.is_empty() {
            return Err(Error::EmptyTokenSet);
        }
        let t = rec.n_text();
        if let Some(&bad) = tokens.iter().find(|&&j| j >= t) {
            return Err(Error::IndexOutOfRange {
                what: "text token",
                index: bad,
                len: t,
            });
        }
        let nv = rec.n_video();
        let mut raw = vec![0.0; nv];
        let mut count = 0usize;
        for (_, _, a) in rec.iter() {
            for &j in &tokens {
                count += 1;
                let t2v = &a.row(j)[t..];
                for (v, r) in raw.iter_mut().enumerate() {
                    *r += (t2v[v] + a.at(t + v, j)) / 2.0;
                }
            }
        }
        for r in &mut raw {
            *r /= count as f64;
        }
        let grid = rec.grid();
        let per_frame = grid.height * grid.width;
        if per_frame > 0 {
            for frame in raw.chunks_mut(per_frame) {
                normalize_min_max(frame);
            }
        }
        let mut map = SemanticMap::from_values(raw, grid, branch)?;
        map.tokens = tokens;
        Ok(map)
    }

    /// `bit = value >= threshold`.
    pub fn binarize(&self, threshold: f64) -> SemanticMask {
        SemanticMask {
            bits: self.values().iter().map(|&v| v >= threshold).collect(),
            grid: self.grid,
            threshold_bits: threshold.to_bits(),
            branch: self.branch,
        }
    }
}

fn normalize_min_max(xs: &mut [f64]) {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    if hi > lo {
        let span = hi - lo;
        for x in xs.iter_mut() {
            *x = (*x - lo) / span;
        }
    } else {
        xs.iter_mut().for_each(|x| *x = 0.0);
    }
}

impl SemanticMask {
    pub fn new(bits: Vec<bool>, grid: VideoGrid, branch: usize) -> Result<Self> {
        if bits.len() != grid.tokens() {
            return Err(Error::Shape {
                op: "SemanticMask::new",
                expected: vec![grid.frames, grid.height, grid.width],
                got: vec![bits.len()],
            });
        }
        Ok(SemanticMask {
            bits,
            grid,
            threshold_bits: 0.5f64.to_bits(),
            branch,
        })
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn grid(&self) -> VideoGrid {
        self.grid
    }

    pub fn threshold(&self) -> f64 {
        f64::from_bits(self.threshold_bits)
    }

    pub fn count_foreground(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_map(&self) -> SemanticMap {
        let values = self
            .bits
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect();
        SemanticMap::from_values(values, self.grid, self.branch).expect("same grid")
    }

    /// Binary PGM (P5, maxval 255) of one frame: 255 foreground, 0 background.
    pub fn frame_pgm(&self, frame: usize) -> Result<Vec<u8>> {
        if frame >= self.grid.frames {
            return Err(Error::IndexOutOfRange {
                what: "frame",
                index: frame,
                len: self.grid.frames,
            });
        }
        let n = self.grid.height * self.grid.width;
        let mut out = format!("P5\n{} {}\n255\n", self.grid.width, self.grid.height).into_bytes();
        out.extend(
            self.bits[frame * n..(frame + 1) * n]
                .iter()
                .map(|&b| if b { 255u8 } else { 0 }),
        );
        Ok(out)
    }

    /// Rebuild a mask from per-frame PGM images.
    pub fn from_pgm_frames<B: AsRef<[u8]>>(frames: &[B], branch: usize) -> Result<Self> {
        let mut bits = Vec::new();
        let mut shape = None;
        for f in frames {
            let (w, h, pixels) = parse_pgm(f.as_ref())?;
            if *shape.get_or_insert((w, h)) != (w, h) {
                return Err(Error::format("pgm", "frames differ in size"));
            }
            for p in pixels {
                bits.push(match p {
                    0 => false,
                    255 => true,
                    other => return Err(Error::format("pgm", format!("non-binary pixel {other}"))),
                });
            }
        }
        let (w, h) = shape.unwrap_or((0, 0));
        SemanticMask::new(
            bits,
            VideoGrid {
                frames: frames.len(),
                height: h,
                width: w,
            },
            branch,
        )
    }

    /// Write `mask_{branch}_f{frame}.pgm` for every frame.
    pub fn export(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::with_capacity(self.grid.frames);
        for f in 0..self.grid.frames {
            let path = dir.join(format!("mask_{}_f{}.pgm", self.branch, f));
            std::fs::File::create(&path)?.write_all(&self.frame_pgm(f)?)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Parse a binary P5 PGM with maxval 255. Returns `(width, height, pixels)`.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("pgm", "truncated header"));
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| Error::format("pgm", "non-ascii header"))?,
        );
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    if fields[0] != "P5" {
        return Err(Error::format(
            "pgm",
            format!("unsupported magic {:?}", fields[0]),
        ));
    }
    let num = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format("pgm", format!("bad header field {s:?}")))
    };
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(Error::format("pgm", format!("maxval {maxval} != 255")));
    }
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != w * h {
        return Err(Error::format(
            "pgm",
            format!("expected {} pixels, found {}", w * h, raster.len()),
        ));
    }
    Ok((w, h, raster.to_vec()))
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

    #[test]
    fn uniform_attention_gives_zero_map() {
        let g = grid(2, 2, 2);
        let l = 3 + g.tokens();
        let mut rec = AttentionRecord::new(1, 1, 3, g);
        rec.push_layer(vec![Tensor::full(vec![l, l], 1.0 / l as f64)])
            .unwrap();
        let map = SemanticMap::extract(&rec, &[1], 0).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_attention_localizes() {
        let g = grid(1, 2, 2);
        let (t, l) = (2, 6);
        let target = 3; // video token index
        let mut a = Tensor::zeros(vec![l, l]);
        for i in 0..l {
            a.set(i, t + target, 1.0);
        }
        let mut rec = AttentionRecord::new(1, 1, t, g);
        rec.push_layer(vec![a]).unwrap();
        let map = SemanticMap::extract(&rec, &[0], 0).unwrap();
        assert_eq!(map.values(), &[0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hand_average_two_layers() {
        // n_text = 2, one frame of 1×3 video tokens, token set {0, 1}.
        let g = grid(1, 1, 3);
        let layer = |salt: f64| {
            let data = (0..25)
                .map(|i| ((i as f64 * 0.37 + salt).sin() + 1.0) / 10.0)
                .collect();
            Tensor::matrix(5, 5, data).unwrap()
        };
        let (l1, l2) = (layer(0.1), layer(2.3));
        let mut rec = AttentionRecord::new(2, 1, 2, g);
        rec.push_layer(vec![l1.clone()]).unwrap();
        rec.push_layer(vec![l2.clone()]).unwrap();

        let raw: Vec<f64> = (0..3)
            .map(|v| {
                let mut terms = Vec::new();
                for a in [&l1, &l2] {
                    for j in 0..2 {
                        terms.push((a.at(j, 2 + v) + a.at(2 + v, j)) / 2.0);
                    }
                }
                terms.iter().sum::<f64>() / terms.len() as f64
            })
            .collect();
        let lo = raw.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

        let map = SemanticMap::extract(&rec, &[1, 0, 1], 0).unwrap();
        assert_eq!(map.tokens, vec![0, 1]);
        for (got, r) in map.values().iter().zip(raw) {
            assert!((got - (r - lo) / (hi - lo)).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_average_single_layer() {
        let g = grid(1, 1, 3);
        let a = Tensor::from_rows(&[
            [0.1, 0.2, 0.3, 0.4],
            [0.5, 0.1, 0.2, 0.2],
            [0.1, 0.3, 0.3, 0.3],
            [0.7, 0.1, 0.1, 0.1],
        ])
        .unwrap();
        let mut rec = AttentionRecord::new(1, 1, 1, g);
        rec.push_layer(vec![a]).unwrap();
        let map = SemanticMap::extract(&rec, &[0], 0).unwrap();
        // raw = [(0.2+0.5)/2, (0.3+0.1)/2, (0.4+0.7)/2] = [0.35, 0.2, 0.55]
        let want = [(0.35 - 0.2) / 0.35, 0.0, 1.0];
        for (g, w) in map.values().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn extract_errors() {
        let g = grid(1, 1, 1);
        let mut rec = AttentionRecord::new(2, 1, 1, g);
        rec.push_layer(vec![Tensor::identity(2)]).unwrap();
        assert!(matches!(
            SemanticMap::extract(&rec, &[0], 0),
            Err(Error::IncompleteRecord { have: 1, want: 2 })
        ));
        rec.push_layer(vec![Tensor::identity(2)]).unwrap();
        assert!(matches!(
            SemanticMap::extract(&rec, &[], 0),
            Err(Error::EmptyTokenSet)
        ));
        assert!(matches!(
            SemanticMap::extract(&rec, &[1], 0),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn binarize_boundary_and_examples() {
        let g = grid(1, 1, 4);
        let m = SemanticMap::from_values(vec![0.3; 4], g, 0).unwrap();
        assert!(m.binarize(0.3).bits().iter().all(|&b| b));
        let m = SemanticMap::from_values(vec![0.0; 4], g, 0).unwrap();
        assert!(m.binarize(0.3).bits().iter().all(|&b| !b));
        let m = SemanticMap::from_values(vec![0.1, 0.29, 0.3, 0.9], g, 0).unwrap();
        let mask = m.binarize(0.3);
        assert_eq!(mask.bits(), &[false, false, true, true]);
        assert_eq!(
            mask.to_map().binarize(0.3),
            mask.to_map().binarize(0.3).to_map().binarize(0.3)
        );
        assert_eq!(mask.to_map().binarize(0.3).bits(), mask.bits());
    }

    #[test]
    fn pgm_round_trip() {
        let g = grid(2, 2, 3);
        let bits = vec![
            true, false, true, false, false, true, true, true, false, false, false, false,
        ];
        let mask = SemanticMask::new(bits, g, 4).unwrap();
        let frames: Vec<Vec<u8>> = (0..2).map(|f| mask.frame_pgm(f).unwrap()).collect();
        assert_eq!(&frames[0][..11], b"P5\n3 2\n255\n");
        assert_eq!(&frames[0][11..], &[255, 0, 255, 0, 0, 255]);
        let back = SemanticMask::from_pgm_frames(&frames, 4).unwrap();
        assert_eq!(back.bits(), mask.bits());
        assert_eq!(back.grid(), g);
        for (f, bytes) in frames.iter().enumerate() {
            assert_eq!(&back.frame_pgm(f).unwrap(), bytes);
        }
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(parse_pgm(b"P2\n1 1\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n2 1\n255\n\x00").is_err());
        assert!(parse_pgm(b"P5\n1 1\n15\n\x00").is_err());
        assert!(SemanticMask::from_pgm_frames(&[b"P5\n1 1\n255\n\x07".to_vec()], 0).is_err());
        assert_eq!(
            parse_pgm(b"P5\n# comment\n1 1\n255\n\xff").unwrap(),
            (1, 1, vec![255])
        );
    }
}
