//! Dense row-major matrices and the elementwise nonlinearities.
//!
//! Shapes are validated, accumulation order is a single fixed loop per op,
//! and nothing ever runs in parallel inside an op, so results are exact
//! IEEE-754 64-bit and reproducible bit-for-bit.

use serde::{Deserialize, Serialize};

use super::rng::Rng;

/// Errors from shape mismatches or non-finite values.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NumericsError {
    /// Operand shapes do not conform for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    /// A NaN or infinity showed up where a finite value is required.
    NonFinite { context: String },
}

impl std::fmt::Display for NumericsError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NumericsError::ShapeMismatch { op, lhs, rhs } => write!(
                f,
                "{op}: shape mismatch {}x{} vs {}x{}",
                lhs.0, lhs.1, rhs.0, rhs.1
            ),
            NumericsError::NonFinite { context } => {
                write!(f, "non-finite value in {context}")
            }
        }
    }
}

impl std::error::Error for NumericsError {}

/// Dense row-major matrix of `f64`. Column vectors are `n x 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length != rows*cols");
        Matrix { rows, cols, data }
    }

    /// Column vector from a slice.
    pub fn col_vec(data: &[f64]) -> Self {
        Matrix::from_vec(data.len(), 1, data.to_vec())
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[r * c..(r + 1) * c]
    }

    /// `self * other`, inner loop over the shared dimension.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.rows {
            return Err(NumericsError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.data[i * self.cols + k] * other.data[k * other.cols + j];
                }
                out.data[i * other.cols + j] = acc;
            }
        }
        Ok(out)
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "add",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch {
                op: "hadamard",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    /// Stack `self` on top of `other` (column counts must match).
    pub fn concat_rows(&self, other: &Matrix) -> Result<Matrix, NumericsError> {
        if self.cols != other.cols {
            return Err(NumericsError::ShapeMismatch {
                op: "concat_rows",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows + other.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn zeros_like(&self) -> Matrix {
        Matrix::zeros(self.rows, self.cols)
    }

    pub fn fill(&mut self, v: f64) {
        for x in self.data.iter_mut() {
            *x = v;
        }
    }

    /// Error if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<(), NumericsError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(NumericsError::NonFinite {
                context: context.to_string(),
            })
        }
    }
}

// ── nonlinearities ──────────────────────────────────────────────────

/// Logistic sigmoid, computed in the numerically safe branch for either sign.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Softmax with max-subtraction; output sums to 1 and every component is in (0,1).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax of empty slice");
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&x| (x - m).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    out
}

/// Binary cross-entropy with the probability clamped to [1e-12, 1 - 1e-12]
/// before the logs so perfect predictions stay finite.
#[inline]
pub fn binary_cross_entropy(p: f64, label: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    -(label * p.ln() + (1.0 - label) * (1.0 - p).ln())
}

// ── initialization ──────────────────────────────────────────────────

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Uniform on (-1/sqrt(fan_in), +1/sqrt(fan_in)) with fan_in = cols.
    UniformScaled,
    /// Standard normal, unscaled.
    Gaussian,
}

/// Freshly initialized matrix, deterministic under `rng`'s seed.
pub fn init_params(rows: usize, cols: usize, scheme: InitScheme, rng: &mut Rng) -> Matrix {
    let mut m = Matrix::zeros(rows, cols);
    match scheme {
        InitScheme::UniformScaled => {
            let bound = 1.0 / (cols as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = rng.uniform(-bound, bound);
            }
        }
        InitScheme::Gaussian => {
            for v in m.data.iter_mut() {
                *v = rng.gaussian();
            }
        }
    }
    m
}

// ── slice helpers for the hot training loops ────────────────────────

/// out = W x  (shapes: W is m x n, x has n entries, out has m).
pub fn matvec_into(w: &Matrix, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(w.cols, x.len());
    debug_assert_eq!(w.rows, out.len());
    for r in 0..w.rows {
        let row = &w.data[r * w.cols..(r + 1) * w.cols];
        let mut acc = 0.0;
        for k in 0..w.cols {
            acc += row[k] * x[k];
        }
        out[r] = acc;
    }
}

/// out += Wᵀ x restricted to the first `ncols` columns of W.
pub fn add_matvec_t_prefix(w: &Matrix, x: &[f64], ncols: usize, out: &mut [f64]) {
    debug_assert_eq!(w.rows, x.len());
    debug_assert!(ncols <= w.cols && out.len() >= ncols);
    for r in 0..w.rows {
        let row = &w.data[r * w.cols..r * w.cols + ncols];
        let xr = x[r];
        for k in 0..ncols {
            out[k] += row[k] * xr;
        }
    }
}

/// dW[:, 0..h.len()] += g ⊗ h  (outer product into a column prefix).
pub fn add_outer_prefix(dw: &mut Matrix, g: &[f64], h: &[f64]) {
    debug_assert_eq!(dw.rows, g.len());
    debug_assert!(h.len() <= dw.cols);
    for r in 0..dw.rows {
        let gr = g[r];
        let row = &mut dw.data[r * dw.cols..r * dw.cols + h.len()];
        for k in 0..h.len() {
            row[k] += gr * h[k];
        }
    }
}

/// dW[:, col] += g.
pub fn add_column(dw: &mut Matrix, col: usize, g: &[f64]) {
    debug_assert_eq!(dw.rows, g.len());
    for r in 0..dw.rows {
        dw.data[r * dw.cols + col] += g[r];
    }
}

pub fn add_assign(acc: &mut [f64], x: &[f64]) {
    debug_assert_eq!(acc.len(), x.len());
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        acc += a[k] * b[k];
    }
    acc
}

pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for k in 0..a.len() {
        let d = a[k] - b[k];
        acc += d * d;
    }
    acc.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let v = Matrix::col_vec(&[3.5, -2.0]);
        let out = eye.matmul(&v).unwrap();
        assert_eq!(out.data, vec![3.5, -2.0]);
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 3);
        assert!(matches!(
            a.matmul(&b),
            Err(NumericsError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn hadamard_example() {
        let a = Matrix::col_vec(&[1.0, 2.0]);
        let b = Matrix::col_vec(&[3.0, 4.0]);
        assert_eq!(a.hadamard(&b).unwrap().data, vec![3.0, 8.0]);
    }

    #[test]
    fn concat_rows_example() {
        let a = Matrix::col_vec(&[1.0]);
        let b = Matrix::col_vec(&[2.0, 3.0]);
        assert_eq!(a.concat_rows(&b).unwrap().data, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sigmoid_and_tanh_at_zero() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!((0.0f64).tanh(), 0.0);
    }

    #[test]
    fn sigmoid_extremes_stay_finite() {
        assert!(sigmoid(1e4) <= 1.0);
        assert!(sigmoid(-1e4) >= 0.0);
        assert!(sigmoid(-1e4).is_finite());
    }

    #[test]
    fn softmax_of_constant_vector() {
        for c in [-3.0, 0.0, 7.5, 1e8] {
            let w = softmax(&[c, c, c]);
            for &x in &w {
                assert_eq!(x, 1.0 / 3.0);
            }
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let mut rng = Rng::new(5);
        for _ in 0..200 {
            let v: Vec<f64> = (0..10).map(|_| rng.uniform(-50.0, 50.0)).collect();
            let w = softmax(&v);
            let sum: f64 = w.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            // A dominant logit may round its weight to exactly 1.0.
            assert!(w.iter().all(|&x| x > 0.0 && x <= 1.0));
        }
    }

    // Shift invariance is bitwise when the shifted logits are themselves
    // exact, so the test draws logits and shifts from a 2^-6 grid.
    #[test]
    fn softmax_shift_invariance_bitwise() {
        let mut rng = Rng::new(9);
        for _ in 0..200 {
            let v: Vec<f64> = (0..8)
                .map(|_| (rng.range_inclusive(0, 1024) as f64 - 512.0) / 64.0)
                .collect();
            let c = (rng.range_inclusive(0, 1024) as f64 - 512.0) / 64.0;
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = softmax(&v);
            let b = softmax(&shifted);
            for (x, y) in a.iter().zip(&b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn init_uniform_scaled_bounds() {
        let mut rng = Rng::new(1);
        let m = init_params(40, 100, InitScheme::UniformScaled, &mut rng);
        for &v in &m.data {
            assert!(v.abs() <= 0.1);
        }
    }

    #[test]
    fn init_deterministic_under_seed() {
        let a = init_params(5, 7, InitScheme::UniformScaled, &mut Rng::new(77));
        let b = init_params(5, 7, InitScheme::UniformScaled, &mut Rng::new(77));
        assert_eq!(a, b);
    }

    #[test]
    fn init_empirical_mean_near_zero() {
        // 10^6 draws from U(-0.1, 0.1): |mean| should be within 3 sigma/sqrt(n).
        let mut rng = Rng::new(123);
        let m = init_params(1000, 100, InitScheme::UniformScaled, &mut rng);
        let n = m.data.len() as f64;
        let mean: f64 = m.data.iter().sum::<f64>() / n;
        let sigma = 0.1 / (3.0f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma / (100_000f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn bce_extremes() {
        assert!((binary_cross_entropy(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(binary_cross_entropy(1.0, 1.0) < 1e-11);
        assert!(binary_cross_entropy(1.0, 1.0) >= 0.0);
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut m = Matrix::zeros(2, 2);
        assert!(m.check_finite("test").is_ok());
        m.data[3] = f64::NAN;
        assert!(m.check_finite("test").is_err());
    }
}
