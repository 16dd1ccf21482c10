//! Dense row-major `f32` kernels.
//!
//! Everything above this module (attention, baselines, training) is built on
//! these few primitives. All kernels are pure functions over their inputs.
//! A thread-local counter records one FLOP per scalar multiply and per scalar
//! add performed by the kernels; see [`flop_counter`].

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("{op}: row {row} is fully masked")]
    FullyMasked { op: &'static str, row: usize },
    #[error("{op}: length {len} is not divisible by segment width {w}")]
    NotDivisible { op: &'static str, len: usize, w: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Counts scalar multiplies and adds executed by the kernels on this thread.
/// Multiply-accumulate pairs inside products are also tallied on their own.
pub mod flop_counter {
    use std::cell::Cell;

    thread_local! {
        static FLOPS: Cell<u64> = const { Cell::new(0) };
        static MACS: Cell<u64> = const { Cell::new(0) };
    }

    #[inline]
    pub fn add(n: u64) {
        FLOPS.with(|c| c.set(c.get().wrapping_add(n)));
    }

    #[inline]
    pub fn add_macs(n: u64) {
        MACS.with(|c| c.set(c.get().wrapping_add(n)));
    }

    pub fn reset() {
        FLOPS.with(|c| c.set(0));
        MACS.with(|c| c.set(0));
    }

    pub fn read() -> u64 {
        FLOPS.with(|c| c.get())
    }

    pub fn read_macs() -> u64 {
        MACS.with(|c| c.get())
    }

    /// Runs `f` and returns its result with the FLOPs and multiply-accumulates
    /// it executed.
    pub fn measure_both<T>(f: impl FnOnce() -> T) -> (T, u64, u64) {
        let (before, before_macs) = (read(), read_macs());
        let out = f();
        (
            out,
            read().wrapping_sub(before),
            read_macs().wrapping_sub(before_macs),
        )
    }

    /// Runs `f` and returns its result together with the FLOPs it executed.
    pub fn measure<T>(f: impl FnOnce() -> T) -> (T, u64) {
        let before = read();
        let out = f();
        (out, read().wrapping_sub(before))
    }
}

/// Row-major `rows × cols` matrix.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)?;
        if self.data.len() <= 64 {
            f.debug_list()
                .entries(self.data.chunks(self.cols.max(1)))
                .finish()?;
        }
        Ok(())
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f32) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Panics if `data.len() != rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), rows * cols, "Matrix::from_vec length");
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Copies rows `[start, end)` into a new matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_vec(
            end - start,
            self.cols,
            self.data[start * self.cols..end * self.cols].to_vec(),
        )
    }

    /// Copies columns `[start, end)` into a new matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Matrix {
        Matrix::from_fn(self.rows, end - start, |i, j| self.get(i, start + j))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Appends zero rows until `rows == target`. No-op if already that long.
    pub fn pad_rows(&self, target: usize) -> Matrix {
        let mut data = self.data.clone();
        if target > self.rows {
            data.resize(target * self.cols, 0.0);
        }
        Matrix::from_vec(target.max(self.rows), self.cols, data)
    }

    pub fn vstack(parts: &[Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, Matrix::cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if p.cols != cols {
                return Err(TensorError::Shape {
                    op: "vstack",
                    lhs: (rows, cols),
                    rhs: p.shape(),
                });
            }
            rows += p.rows;
            data.extend_from_slice(&p.data);
        }
        Ok(Matrix::from_vec(rows, cols, data))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f32) -> Matrix {
        flop_counter::add(self.data.len() as u64);
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|x| x * s).collect())
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same("add", other)?;
        flop_counter::add(self.data.len() as u64);
        Ok(Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.check_same("add_assign", other)?;
        flop_counter::add(self.data.len() as u64);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds `bias` to every row.
    pub fn add_row_vector(&self, bias: &Vector) -> Result<Matrix> {
        if bias.dim() != self.cols {
            return Err(TensorError::Shape {
                op: "add_row_vector",
                lhs: self.shape(),
                rhs: (1, bias.dim()),
            });
        }
        flop_counter::add(self.data.len() as u64);
        let mut out = self.clone();
        for r in 0..self.rows {
            for (x, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
                *x += b;
            }
        }
        Ok(out)
    }

    fn check_same(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(TensorError::Shape {
                op,
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        Ok(())
    }
}

/// Dense `f32` vector.
#[derive(Clone, PartialEq)]
pub struct Vector {
    data: Vec<f32>,
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vector({})", self.data.len())?;
        if self.data.len() <= 64 {
            f.debug_list().entries(&self.data).finish()?;
        }
        Ok(())
    }
}

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn filled(dim: usize, v: f32) -> Self {
        Self { data: vec![v; dim] }
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        Self { data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// View as a `1 × dim` matrix.
    pub fn to_row(&self) -> Matrix {
        Matrix::from_vec(1, self.data.len(), self.data.clone())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f32>> for Vector {
    fn from(v: Vec<f32>) -> Self {
        Vector::from_vec(v)
    }
}

fn check_matmul(op: &'static str, ok: bool, a: &Matrix, b: &Matrix) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(TensorError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        })
    }
}

#[inline]
fn dot_flops(m: usize, n: usize, k: usize) -> u64 {
    // k multiplies and k-1 adds per output entry
    (m * n * (2 * k).saturating_sub(1)) as u64
}

fn count_product(m: usize, n: usize, k: usize) {
    flop_counter::add(dot_flops(m, n, k));
    flop_counter::add_macs((m * n * k) as u64);
}

/// `a × b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul("matmul", a.cols == b.rows, a, b)?;
    let (m, k, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a.data[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    count_product(m, n, k);
    Ok(Matrix::from_vec(m, n, out))
}

/// `aᵀ × b`.
pub fn matmul_tn(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul("matmul_tn", a.rows == b.rows, a, b)?;
    let (k, m, n) = (a.rows, a.cols, b.cols);
    let mut out = vec![0.0f32; m * n];
    for p in 0..k {
        let arow = &a.data[p * m..(p + 1) * m];
        let brow = &b.data[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    count_product(m, n, k);
    Ok(Matrix::from_vec(m, n, out))
}

/// `a × bᵀ`.
pub fn matmul_nt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    check_matmul("matmul_nt", a.cols == b.cols, a, b)?;
    let (m, k, n) = (a.rows, a.cols, b.rows);
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b.data[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    count_product(m, n, k);
    Ok(Matrix::from_vec(m, n, out))
}

/// Row vector times matrix: `v × b`.
pub fn vecmat(v: &[f32], b: &Matrix) -> Result<Vec<f32>> {
    if v.len() != b.rows {
        return Err(TensorError::Shape {
            op: "vecmat",
            lhs: (1, v.len()),
            rhs: b.shape(),
        });
    }
    let n = b.cols;
    let mut out = vec![0.0f32; n];
    for (p, &vp) in v.iter().enumerate() {
        let brow = &b.data[p * n..(p + 1) * n];
        for (o, &bv) in out.iter_mut().zip(brow) {
            *o += vp * bv;
        }
    }
    count_product(1, n, v.len());
    Ok(out)
}

/// Matrix times column vector: `b × v`, i.e. `v × bᵀ` as a row.
pub fn matvec(b: &Matrix, v: &[f32]) -> Result<Vec<f32>> {
    if v.len() != b.cols {
        return Err(TensorError::Shape {
            op: "matvec",
            lhs: b.shape(),
            rhs: (v.len(), 1),
        });
    }
    let out = (0..b.rows).map(|i| dot(b.row(i), v)).collect();
    count_product(b.rows, 1, v.len());
    Ok(out)
}

/// Unaccounted dot product; callers count FLOPs themselves.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `dst += s * src` without FLOP accounting.
#[inline]
pub fn axpy(dst: &mut [f32], s: f32, src: &[f32]) {
    for (d, x) in dst.iter_mut().zip(src) {
        *d += s * x;
    }
}

/// Outer product accumulation `dst += uᵀ v` for `dst: |u| × |v|`.
pub fn add_outer(dst: &mut Matrix, u: &[f32], v: &[f32]) {
    debug_assert_eq!(dst.shape(), (u.len(), v.len()));
    for (i, &ui) in u.iter().enumerate() {
        if ui != 0.0 {
            axpy(dst.row_mut(i), ui, v);
        }
    }
    flop_counter::add(2 * (u.len() * v.len()) as u64);
    flop_counter::add_macs((u.len() * v.len()) as u64);
}

const SIGMOID_MAX: f32 = 1.0 - f32::EPSILON / 2.0;

#[inline]
pub fn sigmoid_scalar(x: f32) -> f32 {
    // f64 keeps σ(x) + σ(-x) within an ulp of 1; the clamp keeps the
    // result strictly inside (0, 1) once f32 would round to an endpoint
    let x = x as f64;
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    (s as f32).clamp(f32::MIN_POSITIVE, SIGMOID_MAX)
}

/// Elementwise logistic function.
pub fn sigmoid(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|&v| sigmoid_scalar(v)).collect())
}

pub fn relu(x: &Matrix) -> Matrix {
    Matrix::from_vec(x.rows, x.cols, x.data.iter().map(|&v| v.max(0.0)).collect())
}

const MASK_FILL: f32 = -1e9;

/// In-place stable softmax over `row`, restricted to entries where `valid`
/// is true (all entries when `valid` is `None`). Masked entries become 0.
/// Returns false if no entry is valid.
pub fn softmax_in_place(row: &mut [f32], valid: Option<&[bool]>) -> bool {
    let is_valid = |j: usize| valid.is_none_or(|v| v[j]);
    if !(0..row.len()).any(is_valid) {
        return false;
    }
    for (j, x) in row.iter_mut().enumerate() {
        if !is_valid(j) {
            *x += MASK_FILL;
        }
    }
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for (j, x) in row.iter_mut().enumerate() {
        *x = if is_valid(j) { *x / sum } else { 0.0 };
    }
    flop_counter::add(3 * row.len() as u64);
    true
}

/// Row-wise softmax. `mask[i][j] == true` marks a usable entry.
pub fn softmax_rows(x: &Matrix, mask: Option<&[Vec<bool>]>) -> Result<Matrix> {
    if let Some(m) = mask {
        if m.len() != x.rows || m.iter().any(|r| r.len() != x.cols) {
            return Err(TensorError::Shape {
                op: "softmax_rows",
                lhs: x.shape(),
                rhs: (m.len(), m.first().map_or(0, Vec::len)),
            });
        }
    }
    let mut out = x.clone();
    for i in 0..x.rows {
        let valid = mask.map(|m| m[i].as_slice());
        if !softmax_in_place(out.row_mut(i), valid) {
            return Err(TensorError::FullyMasked {
                op: "softmax_rows",
                row: i,
            });
        }
    }
    Ok(out)
}

pub const LN_EPS: f32 = 1e-5;

/// Per-row statistics retained for the layer-norm backward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f32>,
}

/// Layer normalization with population variance.
pub fn layer_norm(x: &Matrix, gain: &Vector, bias: &Vector, eps: f32) -> Result<Matrix> {
    layer_norm_cached(x, gain, bias, eps).map(|(y, _)| y)
}

pub fn layer_norm_cached(
    x: &Matrix,
    gain: &Vector,
    bias: &Vector,
    eps: f32,
) -> Result<(Matrix, LayerNormCache)> {
    if gain.dim() != x.cols || bias.dim() != x.cols {
        return Err(TensorError::Shape {
            op: "layer_norm",
            lhs: x.shape(),
            rhs: (gain.dim(), bias.dim()),
        });
    }
    let d = x.cols;
    let mut out = Matrix::zeros(x.rows, d);
    let mut normalized = Matrix::zeros(x.rows, d);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let is = 1.0 / (var + eps).sqrt();
        inv_std.push(is);
        let nrow = normalized.row_mut(i);
        for (n, v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * is;
        }
        let nrow = normalized.row(i).to_vec();
        for ((o, n), (g, b)) in out
            .row_mut(i)
            .iter_mut()
            .zip(&nrow)
            .zip(gain.data().iter().zip(bias.data()))
        {
            *o = g * n + b;
        }
    }
    flop_counter::add(8 * (x.rows * d) as u64);
    Ok((out, LayerNormCache { normalized, inv_std }))
}

/// Segment view of a matrix: shape `(rows / w, w, cols)`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    source: &'a Matrix,
    w: usize,
}

impl<'a> SegmentView<'a> {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.source.rows / self.w, self.w, self.source.cols)
    }

    #[inline]
    pub fn get(&self, seg: usize, j: usize, c: usize) -> f32 {
        self.source.get(seg * self.w + j, c)
    }

    /// The `j`-th row of segment `seg`.
    #[inline]
    pub fn row(&self, seg: usize, j: usize) -> &'a [f32] {
        self.source.row(seg * self.w + j)
    }

    pub fn segment(&self, seg: usize) -> Matrix {
        self.source.slice_rows(seg * self.w, (seg + 1) * self.w)
    }

    /// Flattens back to the `(rows, cols)` source layout.
    pub fn flatten(&self) -> Matrix {
        self.source.clone()
    }
}

/// Reinterprets `x` as `rows / w` consecutive segments of `w` rows.
pub fn reshape_segments(x: &Matrix, w: usize) -> Result<SegmentView<'_>> {
    if w == 0 || !x.rows.is_multiple_of(w) {
        return Err(TensorError::NotDivisible {
            op: "reshape_segments",
            len: x.rows,
            w,
        });
    }
    Ok(SegmentView { source: x, w })
}

/// Column-wise maximum.
pub fn max_pool_rows(x: &Matrix) -> Result<Vector> {
    if x.rows == 0 {
        return Err(TensorError::Empty("max_pool_rows"));
    }
    let mut out = x.row(0).to_vec();
    for i in 1..x.rows {
        for (o, &v) in out.iter_mut().zip(x.row(i)) {
            if v > *o {
                *o = v;
            }
        }
    }
    Ok(Vector::from_vec(out))
}

/// Intermediates of a two-layer ReLU FFN, kept for backward.
#[derive(Debug, Clone)]
pub struct FfnCache {
    pub hidden_pre: Matrix,
    pub hidden: Matrix,
}

/// `relu(x·w1 + b1)·w2 + b2`.
pub fn ffn_forward(
    x: &Matrix,
    w1: &Matrix,
    b1: &Vector,
    w2: &Matrix,
    b2: &Vector,
) -> Result<Matrix> {
    ffn_forward_cached(x, w1, b1, w2, b2).map(|(y, _)| y)
}

pub fn ffn_forward_cached(
    x: &Matrix,
    w1: &Matrix,
    b1: &Vector,
    w2: &Matrix,
    b2: &Vector,
) -> Result<(Matrix, FfnCache)> {
    if w1.cols != w2.rows {
        return Err(TensorError::Shape {
            op: "ffn_forward",
            lhs: w1.shape(),
            rhs: w2.shape(),
        });
    }
    let hidden_pre = matmul(x, w1)?.add_row_vector(b1)?;
    let hidden = relu(&hidden_pre);
    let out = matmul(&hidden, w2)?.add_row_vector(b2)?;
    Ok((out, FfnCache { hidden_pre, hidden }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for k in 0..a.cols() {
                    out[i * b.cols() + j] += a.get(i, k) as f64 * b.get(k, j) as f64;
                }
            }
        }
        out
    }

    #[test]
    fn matmul_small_cases() {
        let i2 = Matrix::identity(2);
        let b = Matrix::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]);
        assert_eq!(matmul(&i2, &b).unwrap(), b);
        let a = Matrix::from_rows(&[vec![1.0, 2.0]]);
        let c = Matrix::from_rows(&[vec![3.0], vec![4.0]]);
        assert_eq!(matmul(&a, &c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 7, 5);
        let b = random(&mut rng, 5, 3);
        let got = matmul(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(triple_loop(&a, &b)) {
            assert!((*g as f64 - e).abs() < 1e-6);
        }
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        assert_eq!(tn, got);
        for (x, y) in nt.data().iter().zip(got.data()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Matrix::zeros(2, 3), &Matrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(2, 3)"), "{msg}");
    }

    #[test]
    fn sigmoid_values() {
        let x = Matrix::from_vec(1, 4, vec![0.0, -10.0, 10.0, -100.0]);
        let s = sigmoid(&x);
        assert_eq!(s.get(0, 0), 0.5);
        // 1 / (1 + e^10) = 4.5397868702434395e-05
        assert!((s.get(0, 1) as f64 - 4.539_786_870_243_44e-5).abs() < 1e-10);
        assert!(((s.get(0, 1) + s.get(0, 2)) as f64 - 1.0).abs() < 1e-7);
        assert!(s.get(0, 3) >= 0.0 && s.get(0, 3).is_finite());
        let big = sigmoid(&Matrix::from_vec(1, 2, vec![1e4, -1e4]));
        assert!(big.is_finite());
    }

    #[test]
    fn softmax_examples() {
        let x = Matrix::from_rows(&[vec![0.0, 0.0, 0.0], vec![1000.0, 0.0, -5.0], vec![1.0, 2.0, 3.0]]);
        let s = softmax_rows(&x, None).unwrap();
        for j in 0..3 {
            assert!((s.get(0, j) - 1.0 / 3.0).abs() < 1e-7);
        }
        assert!((s.get(1, 0) - 1.0).abs() < 1e-6 && s.get(1, 1) < 1e-6);
        // exp(k)/sum(exp): 0.0900305732, 0.2447284711, 0.6652409558
        let expect = [0.090_030_57, 0.244_728_47, 0.665_240_96];
        for (j, e) in expect.iter().enumerate() {
            assert!((s.get(2, j) - e).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_mask_zeroes_and_rejects_empty_rows() {
        let x = Matrix::from_rows(&[vec![5.0, 1.0, 2.0]]);
        let m = vec![vec![false, true, true]];
        let s = softmax_rows(&x, Some(&m)).unwrap();
        assert_eq!(s.get(0, 0), 0.0);
        assert!((s.get(0, 1) + s.get(0, 2) - 1.0).abs() < 1e-6);
        let none = vec![vec![false, false, false]];
        assert!(matches!(
            softmax_rows(&x, Some(&none)),
            Err(TensorError::FullyMasked { row: 0, .. })
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Vector::filled(4, 1.0);
        let zeros = Vector::zeros(4);
        let c = Matrix::from_rows(&[vec![5.0; 4]]);
        assert_eq!(layer_norm(&c, &ones, &zeros, LN_EPS).unwrap().data(), &[0.0; 4]);

        // population variance of [1,-1] is 1, so output is ±1/sqrt(1 + 1e-5)
        let g2 = Vector::filled(2, 1.0);
        let b2 = Vector::zeros(2);
        let y = layer_norm(&Matrix::from_rows(&[vec![1.0, -1.0]]), &g2, &b2, LN_EPS).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.get(0, 0) as f64 - expect).abs() < 1e-6);
        assert!((y.get(0, 1) as f64 + expect).abs() < 1e-6);

        let bias = Vector::from_vec(vec![0.5, -0.25, 1.0, 2.0]);
        let x = Matrix::from_rows(&[vec![3.0, -1.0, 0.2, 7.0]]);
        let y = layer_norm(&x, &Vector::zeros(4), &bias, LN_EPS).unwrap();
        assert_eq!(y.data(), bias.data());
    }

    #[test]
    fn reshape_segments_indexing() {
        let x = Matrix::from_fn(6, 2, |i, j| (i * 10 + j) as f32);
        let v = reshape_segments(&x, 3).unwrap();
        assert_eq!(v.shape(), (2, 3, 2));
        assert_eq!(v.row(1, 0), x.row(3));
        assert_eq!(reshape_segments(&x, 1).unwrap().shape(), (6, 1, 2));
        assert_eq!(reshape_segments(&x, 6).unwrap().shape(), (1, 6, 2));
        assert!(reshape_segments(&x, 4).is_err());
        assert_eq!(v.flatten(), x);
    }

    #[test]
    fn max_pool_examples() {
        let x = Matrix::from_rows(&[vec![1.0, 5.0], vec![3.0, 2.0]]);
        assert_eq!(max_pool_rows(&x).unwrap().data(), &[3.0, 5.0]);
        let one = Matrix::from_rows(&[vec![-1.0, 2.0]]);
        assert_eq!(max_pool_rows(&one).unwrap().data(), one.row(0));
        assert!(max_pool_rows(&Matrix::zeros(0, 3)).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&mut rng, 50, 8);
        let got = max_pool_rows(&x).unwrap();
        for c in 0..8 {
            let mut m = f32::NEG_INFINITY;
            for r in 0..50 {
                m = m.max(x.get(r, c));
            }
            assert_eq!(got.data()[c], m);
        }
    }

    #[test]
    fn ffn_examples() {
        let d = 3;
        let x = Matrix::from_rows(&[vec![0.5, 1.0, 2.0], vec![0.0, 3.0, 0.25]]);
        let zero = ffn_forward(
            &x,
            &Matrix::zeros(d, 2 * d),
            &Vector::zeros(2 * d),
            &Matrix::zeros(2 * d, d),
            &Vector::zeros(d),
        )
        .unwrap();
        assert_eq!(zero.data(), &[0.0; 6]);

        // w1 = [I 0], w2 = [I; 0]: relu passes nonnegative input unchanged
        let w1 = Matrix::from_fn(d, 2 * d, |i, j| if i == j { 1.0 } else { 0.0 });
        let w2 = Matrix::from_fn(2 * d, d, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = ffn_forward(&x, &w1, &Vector::zeros(2 * d), &w2, &Vector::zeros(d)).unwrap();
        assert_eq!(y, x);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random(&mut rng, 4, d);
        let w1 = random(&mut rng, d, 8);
        let b1 = Vector::from_vec((0..8).map(|i| i as f32 * 0.1 - 0.4).collect());
        let w2 = random(&mut rng, 8, d);
        let b2 = Vector::from_vec(vec![0.1, -0.2, 0.3]);
        let got = ffn_forward(&x, &w1, &b1, &w2, &b2).unwrap();
        for r in 0..4 {
            for c in 0..d {
                let mut acc = b2.data()[c] as f64;
                for h in 0..8 {
                    let mut pre = b1.data()[h] as f64;
                    for k in 0..d {
                        pre += x.get(r, k) as f64 * w1.get(k, h) as f64;
                    }
                    acc += pre.max(0.0) * w2.get(h, c) as f64;
                }
                assert!((got.get(r, c) as f64 - acc).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn flop_counter_counts_matmul() {
        let a = Matrix::zeros(3, 4);
        let b = Matrix::zeros(4, 5);
        let (_, n) = flop_counter::measure(|| matmul(&a, &b).unwrap());
        assert_eq!(n, 3 * 5 * 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn mat(r: usize, c: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-1.0f32..1.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v))
        }

        proptest! {
            #[test]
            fn matmul_associative((a, b, c) in (1usize..6, 1usize..6, 1usize..6, 1usize..6)
                .prop_flat_map(|(m, k, n, p)| (mat(m, k), mat(k, n), mat(n, p)))) {
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                for (x, y) in left.data().iter().zip(right.data()) {
                    prop_assert!((x - y).abs() <= 1e-4 * (1.0 + x.abs().max(y.abs())));
                }
            }

            #[test]
            fn sigmoid_open_interval_and_symmetric(x in -30.0f32..30.0) {
                let s = sigmoid_scalar(x);
                prop_assert!(s > 0.0 && s < 1.0);
                prop_assert!(((s + sigmoid_scalar(-x)) as f64 - 1.0).abs() <= 1e-7);
            }

            #[test]
            fn softmax_rows_sum_to_one(row in proptest::collection::vec(-1e4f32..1e4, 1..20)) {
                let n = row.len();
                let s = softmax_rows(&Matrix::from_vec(1, n, row), None).unwrap();
                let sum: f32 = s.data().iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-6);
                prop_assert!(s.data().iter().all(|&v| v >= 0.0));
            }

            #[test]
            fn layer_norm_shift_invariant(row in proptest::collection::vec(-10.0f32..10.0, 2..16), shift in -10.0f32..10.0) {
                let d = row.len();
                let mu = row.iter().sum::<f32>() / d as f32;
                let in_var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f32>() / d as f32;
                prop_assume!(in_var > 0.1);
                let g = Vector::filled(d, 1.0);
                let b = Vector::zeros(d);
                let x = Matrix::from_vec(1, d, row.clone());
                let xs = Matrix::from_vec(1, d, row.iter().map(|v| v + shift).collect());
                let a = layer_norm(&x, &g, &b, LN_EPS).unwrap();
                let c = layer_norm(&xs, &g, &b, LN_EPS).unwrap();
                for (p, q) in a.data().iter().zip(c.data()) {
                    prop_assert!((p - q).abs() <= 1e-5, "{} vs {}", p, q);
                }
                let mean: f32 = a.data().iter().sum::<f32>() / d as f32;
                let var: f32 = a.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
                prop_assert!(mean.abs() < 1e-6);
                prop_assert!((var - 1.0).abs() < 1e-4);
            }

            #[test]
            fn reshape_flatten_identity(segs in 1usize..6, w in 1usize..6, cols in 1usize..4) {
                let x = Matrix::from_fn(segs * w, cols, |i, j| (i * cols + j) as f32);
                let v = reshape_segments(&x, w).unwrap();
                for s in 0..segs { for j in 0..w { for c in 0..cols {
                    prop_assert_eq!(v.get(s, j, c), x.get(s * w + j, c));
                }}}
                prop_assert_eq!(v.flatten(), x);
            }
        }
    }
}
