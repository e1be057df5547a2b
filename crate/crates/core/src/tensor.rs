//! Dense row-major tensors and the handful of kernels the rest of the crate
//! is built on.
//!
//! Every reduction walks its index in ascending order, and parallel kernels
//! split work by output row only, so results are bitwise reproducible
//! regardless of the rayon pool size.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Magic prefix of the binary tensor dump format.
pub const DUMP_MAGIC: &[u8; 4] = b"DITC";

/// Below this many multiply-adds a matmul stays on the calling thread.
const PAR_THRESHOLD: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                expected: dims,
                got: vec![data.len()],
            });
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn full(dims: Vec<usize>, value: f64) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    /// Rank-2 tensor from a row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Rank-2 tensor from nested rows. All rows must share a length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape {
                    op: "Tensor::from_rows",
                    expected: vec![cols],
                    got: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        self.dims[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        self.dims[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let c = self.cols();
        self.data[i * c + j] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.rank() != rank {
            return Err(Error::Rank {
                op,
                expected: rank,
                got: self.rank(),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, op: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    pub fn transpose(&self) -> Result<Tensor> {
        self.ensure_rank("transpose", 2)?;
        let (r, c) = (self.rows(), self.cols());
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::matrix(c, r, out)
    }

    /// Copy of rows `[lo, hi)` of a rank-2 tensor.
    pub fn slice_rows(&self, lo: usize, hi: usize) -> Result<Tensor> {
        self.ensure_rank("slice_rows", 2)?;
        if lo > hi || hi > self.rows() {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: hi,
                len: self.rows(),
            });
        }
        let c = self.cols();
        Tensor::matrix(hi - lo, c, self.data[lo * c..hi * c].to_vec())
    }

    /// Copy of the sub-block `rows × cols` of a rank-2 tensor.
    pub fn block(
        &self,
        rows: std::ops::Range<usize>,
        cols: std::ops::Range<usize>,
    ) -> Result<Tensor> {
        self.ensure_rank("block", 2)?;
        if rows.start > rows.end || rows.end > self.rows() {
            return Err(Error::IndexOutOfRange {
                what: "row",
                index: rows.end,
                len: self.rows(),
            });
        }
        if cols.start > cols.end || cols.end > self.cols() {
            return Err(Error::IndexOutOfRange {
                what: "column",
                index: cols.end,
                len: self.cols(),
            });
        }
        let mut data = Vec::with_capacity(rows.len() * cols.len());
        for i in rows.clone() {
            data.extend_from_slice(&self.row(i)[cols.clone()]);
        }
        Tensor::matrix(rows.len(), cols.len(), data)
    }

    /// Copy of columns `[lo, hi)` of a rank-2 tensor.
    pub fn slice_cols(&self, lo: usize, hi: usize) -> Result<Tensor> {
        self.block(0..self.rows(), lo..hi)
    }

    /// Stack rank-2 tensors with equal column counts on top of each other.
    pub fn vstack(parts: &[&Tensor]) -> Result<Tensor> {
        let cols = parts.first().map_or(0, |t| t.cols());
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            p.ensure_rank("vstack", 2)?;
            if p.cols() != cols {
                return Err(Error::Shape {
                    op: "vstack",
                    expected: vec![p.rows(), cols],
                    got: p.dims.clone(),
                });
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, cols, data)
    }

    /// Place rank-2 tensors with equal row counts side by side.
    pub fn hstack(parts: &[&Tensor]) -> Result<Tensor> {
        let rows = parts.first().map_or(0, |t| t.rows());
        let cols: usize = parts.iter().map(|p| p.cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for p in parts {
            p.ensure_rank("hstack", 2)?;
            if p.rows() != rows {
                return Err(Error::Shape {
                    op: "hstack",
                    expected: vec![rows, p.cols()],
                    got: p.dims.clone(),
                });
            }
        }
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Tensor::matrix(rows, cols, data)
    }

    /// Elementwise sum with a tensor of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.dims != other.dims {
            return Err(Error::Shape {
                op: "add",
                expected: self.dims.clone(),
                got: other.dims.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::new(self.dims.clone(), data)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Write in the `DITC` dump format (values narrowed to f32).
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let rank = u32::try_from(self.rank())
            .map_err(|_| Error::format("tensor dump", "rank exceeds u32"))?;
        w.write_all(DUMP_MAGIC)?;
        w.write_all(&rank.to_le_bytes())?;
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::format("tensor dump", format!("extent {d} exceeds u32")))?;
            w.write_all(&d.to_le_bytes())?;
        }
        for &v in &self.data {
            let narrow = v as f32;
            if !narrow.is_finite() {
                return Err(Error::NonFinite { op: "write_dump" });
            }
            w.write_all(&narrow.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DUMP_MAGIC {
            return Err(Error::format("tensor dump", "bad magic"));
        }
        let rank = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(read_u32(&mut r)? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format("tensor dump", "element count overflows"))?;
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing)? != 0 {
            return Err(Error::format("tensor dump", "trailing bytes after payload"));
        }
        Tensor::new(dims, data)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_dump(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        Tensor::read_dump(BufReader::new(File::open(path)?))
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Shared row kernel: max-subtracted softmax over the keys admitted by
/// `mask` (all keys when `None`). Excluded keys get exactly zero.
pub(crate) fn softmax_row_into(row: &[f64], mask: Option<&[bool]>, out: &mut [f64]) -> Result<()> {
    let admitted = |j: usize| mask.is_none_or(|m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &v) in row.iter().enumerate() {
        if admitted(j) && v > max {
            max = v;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::EmptyKeyMask);
    }
    let mut sum = 0.0;
    for (j, (&v, o)) in row.iter().zip(out.iter_mut()).enumerate() {
        *o = if admitted(j) { (v - max).exp() } else { 0.0 };
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(())
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    m.ensure_rank("softmax_rows", 2)?;
    m.ensure_finite("softmax_rows")?;
    let mut out = Tensor::zeros(m.dims.clone());
    if m.cols() == 0 {
        return if m.rows() == 0 {
            Ok(out)
        } else {
            Err(Error::EmptyKeyMask)
        };
    }
    for i in 0..m.rows() {
        softmax_row_into(m.row(i), None, out.row_mut(i))?;
    }
    Ok(out)
}

/// Row-wise softmax in which columns with `key_mask[j] == false` act as
/// `-inf` logits: they receive exactly zero weight and the surviving columns
/// renormalize.
pub fn masked_softmax_rows(m: &Tensor, key_mask: &[bool]) -> Result<Tensor> {
    m.ensure_rank("masked_softmax_rows", 2)?;
    if key_mask.len() != m.cols() {
        return Err(Error::Shape {
            op: "masked_softmax_rows",
            expected: vec![m.cols()],
            got: vec![key_mask.len()],
        });
    }
    if !key_mask.iter().any(|&b| b) {
        return Err(Error::EmptyKeyMask);
    }
    m.ensure_finite("masked_softmax_rows")?;
    let mut out = Tensor::zeros(m.dims.clone());
    for i in 0..m.rows() {
        softmax_row_into(m.row(i), Some(key_mask), out.row_mut(i))?;
    }
    Ok(out)
}

/// `a · b` with ascending-index accumulation per output element.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.ensure_rank("matmul", 2)?;
    b.ensure_rank("matmul", 2)?;
    if a.cols() != b.rows() {
        return Err(Error::Shape {
            op: "matmul",
            expected: vec![a.cols(), b.cols()],
            got: b.dims.clone(),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; n * m];
    let row_kernel = |i: usize, orow: &mut [f64]| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b.data[p * m..(p + 1) * m];
            for (o, &bpj) in orow.iter_mut().zip(brow) {
                *o += aip * bpj;
            }
        }
    };
    if m > 0 {
        if n * k * m >= PAR_THRESHOLD {
            out.par_chunks_mut(m)
                .enumerate()
                .for_each(|(i, orow)| row_kernel(i, orow));
        } else {
            out.chunks_mut(m)
                .enumerate()
                .for_each(|(i, orow)| row_kernel(i, orow));
        }
    }
    let t = Tensor::matrix(n, m, out)?;
    t.ensure_finite("matmul")?;
    Ok(t)
}

/// `a · bᵀ` without materializing the transpose. Each dot product runs in
/// ascending index order.
pub fn matmul_t(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.ensure_rank("matmul_t", 2)?;
    b.ensure_rank("matmul_t", 2)?;
    if a.cols() != b.cols() {
        return Err(Error::Shape {
            op: "matmul_t",
            expected: vec![b.rows(), a.cols()],
            got: b.dims.clone(),
        });
    }
    let (n, k, m) = (a.rows(), a.cols(), b.rows());
    let mut out = vec![0.0; n * m];
    let row_kernel = |i: usize, orow: &mut [f64]| {
        let arow = &a.data[i * k..(i + 1) * k];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b.data[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            *o = acc;
        }
    };
    if m > 0 {
        if n * k * m >= PAR_THRESHOLD {
            out.par_chunks_mut(m)
                .enumerate()
                .for_each(|(i, orow)| row_kernel(i, orow));
        } else {
            out.chunks_mut(m)
                .enumerate()
                .for_each(|(i, orow)| row_kernel(i, orow));
        }
    }
    let t = Tensor::matrix(n, m, out)?;
    t.ensure_finite("matmul_t")?;
    Ok(t)
}
