use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Extents of a latent clip: frames × height × width × channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LatentDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl LatentDims {
    pub fn new(frames: usize, height: usize, width: usize, channels: usize) -> Self {
        LatentDims {
            frames,
            height,
            width,
            channels,
        }
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn with_frames(&self, frames: usize) -> Self {
        LatentDims { frames, ..*self }
    }
}

/// The diffusion state: a dense `F × H × W × C` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentVideo {
    dims: LatentDims,
    tensor: Tensor,
}

impl LatentVideo {
    pub fn new(dims: LatentDims, data: Vec<f64>) -> Result<Self> {
        let tensor = Tensor::new(
            vec![dims.frames, dims.height, dims.width, dims.channels],
            data,
        )?;
        Ok(LatentVideo { dims, tensor })
    }

    pub fn zeros(dims: LatentDims) -> Self {
        LatentVideo {
            dims,
            tensor: Tensor::zeros(vec![dims.frames, dims.height, dims.width, dims.channels]),
        }
    }

    /// Standard-normal latent drawn from a ChaCha8 stream, frame-major.
    pub fn gaussian(dims: LatentDims, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..dims.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        LatentVideo::new(dims, data).expect("length matches dims")
    }

    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        tensor.ensure_rank("LatentVideo::from_tensor", 4)?;
        let d = tensor.dims();
        let dims = LatentDims::new(d[0], d[1], d[2], d[3]);
        Ok(LatentVideo { dims, tensor })
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn data(&self) -> &[f64] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.tensor.data_mut()
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        let n = self.dims.frame_len();
        &self.data()[f * n..(f + 1) * n]
    }

    pub fn frame_mut(&mut self, f: usize) -> &mut [f64] {
        let n = self.dims.frame_len();
        &mut self.tensor.data_mut()[f * n..(f + 1) * n]
    }

    /// Copy of frames `[start, start + count)`.
    pub fn slice_frames(&self, start: usize, count: usize) -> Result<LatentVideo> {
        if start + count > self.dims.frames {
            return Err(Error::IndexOutOfRange {
                what: "frame",
                index: start + count,
                len: self.dims.frames,
            });
        }
        let n = self.dims.frame_len();
        LatentVideo::new(
            self.dims.with_frames(count),
            self.data()[start * n..(start + count) * n].to_vec(),
        )
    }

    /// Frame-axis concatenation.
    pub fn concat_frames(parts: &[LatentVideo]) -> Result<LatentVideo> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("concat_frames needs at least one latent"))?
            .dims;
        let mut frames = 0;
        let mut data = Vec::new();
        for p in parts {
            if p.dims.with_frames(first.frames) != first {
                return Err(Error::Shape {
                    op: "concat_frames",
                    expected: vec![first.height, first.width, first.channels],
                    got: vec![p.dims.height, p.dims.width, p.dims.channels],
                });
            }
            frames += p.dims.frames;
            data.extend_from_slice(p.data());
        }
        LatentVideo::new(first.with_frames(frames), data)
    }

    /// Frame-axis reversal.
    pub fn reversed_frames(&self) -> LatentVideo {
        let mut data = Vec::with_capacity(self.dims.len());
        for f in (0..self.dims.frames).rev() {
            data.extend_from_slice(self.frame(f));
        }
        LatentVideo::new(self.dims, data).expect("same dims")
    }

    /// Token-major view `(F·H·W) × C`, rows ordered `((f·H)+h)·W + w`.
    pub fn as_token_matrix(&self) -> Tensor {
        Tensor::matrix(self.dims.tokens(), self.dims.channels, self.data().to_vec())
            .expect("length matches dims")
    }

    pub fn from_token_matrix(dims: LatentDims, m: &Tensor) -> Result<LatentVideo> {
        if m.dims() != [dims.tokens(), dims.channels] {
            return Err(Error::Shape {
                op: "LatentVideo::from_token_matrix",
                expected: vec![dims.tokens(), dims.channels],
                got: m.dims().to_vec(),
            });
        }
        LatentVideo::new(dims, m.data().to_vec())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        self.tensor.save(path)
    }
}
