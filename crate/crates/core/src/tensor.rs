//! Dense row-major matrices, vector helpers, and the seeded random stream
//! used everywhere else in the crate.
//!
//! All arithmetic is in `f64`. There is deliberately no BLAS binding and no
//! sparse storage: the networks this crate handles are small dense MLPs and
//! the simple loops below are fast enough at that scale.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix. Immutable once constructed except through the
/// explicitly mutating helpers used by builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Panics if the entry count does
    /// not match `rows * cols`; that is a programmer error, not an input error.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(
            data.len(),
            rows * cols,
            "matrix entries must be rows*cols ({}x{} != {})",
            rows,
            cols,
            data.len()
        );
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::shape("from_rows: no rows"));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows: ragged rows"));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Ok(Matrix::new(rows.len(), cols, data))
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    /// Standard matrix product. Errors on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape(format!(
                "matmul: {}x{} * {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        // i-k-j order keeps both operands on contiguous rows.
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row.iter()) {
                    *o += a_ik * b;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::shape(format!(
                "matvec: {}x{} * {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// Transposed matrix-vector product (`A^T v`), used by backward passes.
    pub fn matvec_t(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.rows != v.len() {
            return Err(Error::shape(format!(
                "matvec_t: ({}x{})^T * {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            if vi == 0.0 {
                continue;
            }
            for (o, &a) in out.iter_mut().zip(self.row(i).iter()) {
                *o += vi * a;
            }
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sq_frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>()
    }

    /// Zeroes every row `i` with `keep[i] == false`. Used to apply an
    /// activation mask between layer products.
    pub fn mask_rows(&mut self, keep: &[bool]) {
        assert_eq!(keep.len(), self.rows, "mask length must match row count");
        for (i, &k) in keep.iter().enumerate() {
            if !k {
                self.row_mut(i).fill(0.0);
            }
        }
    }

    /// In-place `self += alpha * other`.
    pub fn add_scaled(&mut self, other: &Matrix, alpha: f64) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::shape("add_scaled: size mismatch"));
        }
        for (a, &b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn euclidean_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn sq_norm(v: &[f64]) -> f64 {
    dot(v, v)
}

/// In-place `y += alpha * x`.
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, &xi) in y.iter_mut().zip(x.iter()) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(x, y)| x - y).collect()
}

/// Name of the fixed generator behind [`RngState`]. Streams are a function of
/// the seed and the call sequence only; runs on the same platform reproduce
/// bit-identically (the Gaussian path goes through `ln`/`sqrt`, so the last
/// bit is pinned to the platform libm).
pub const RNG_ALGORITHM: &str = "chacha8/polar-box-muller";

/// Seeded random stream. One owner per stream; derive independent streams
/// with [`RngState::split`] instead of sharing.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        RngState {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        RNG_ALGORITHM
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 random mantissa bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// One standard-normal pair via the Marsaglia polar method (no trig).
    fn gaussian_pair(&mut self) -> (f64, f64) {
        loop {
            let u = 2.0 * self.uniform() - 1.0;
            let v = 2.0 * self.uniform() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let f = (-2.0 * s.ln() / s).sqrt();
                return (u * f, v * f);
            }
        }
    }

    /// Single normal draw; consumes one polar pair and discards its partner,
    /// so the stream position depends only on the call sequence.
    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let (z, _) = self.gaussian_pair();
        mean + std * z
    }

    /// `dim` i.i.d. normal draws. `std = 0` degenerates to a constant vector.
    pub fn gaussian_vector(&mut self, dim: usize, mean: f64, std: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(dim);
        while out.len() < dim {
            let (a, b) = self.gaussian_pair();
            out.push(mean + std * a);
            if out.len() < dim {
                out.push(mean + std * b);
            }
        }
        out
    }

    /// Uniform sign in `{-1.0, +1.0}`.
    pub fn rademacher_sign(&mut self) -> f64 {
        if self.next_u64() & 1 == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// Uniform index in `0..n` without modulo bias.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index: empty range");
        let n = n as u64;
        let zone = u64::MAX - u64::MAX % n;
        loop {
            let x = self.next_u64();
            if x < zone {
                return (x % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }

    /// Derives an independently seeded stream from this one.
    pub fn split(&mut self) -> RngState {
        RngState::new(self.next_u64())
    }
}

/// Convenience wrapper matching the operation-level contract: `dim` normal
/// draws from a caller-owned stream.
pub fn gaussian_vector(rng: &mut RngState, dim: usize, mean: f64, std: f64) -> Result<Vec<f64>> {
    if std < 0.0 {
        return Err(Error::invalid("gaussian_vector: std must be >= 0"));
    }
    Ok(rng.gaussian_vector(dim, mean, std))
}
