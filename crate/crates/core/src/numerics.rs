//! Scalar complex-Gaussian density algebra.
//!
//! Everything in the receiver reduces to products and mixtures of circular
//! complex Gaussians `CN(x; a, b) = exp(-|x - a|^2 / b) / (pi b)`. Mixture
//! weights are formed in the log domain and normalized with log-sum-exp.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{domain, Result};

/// Complex scalar used throughout the crate.
pub type C64 = Complex64;

/// Floor applied to any variance that ends up in a denominator.
pub const VAR_FLOOR: f64 = 1e-12;

/// Saturation magnitude for bit log-likelihood ratios.
pub const LLR_MAX: f64 = 30.0;

/// A circular complex Gaussian `CN(mean, variance)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexGaussian {
    pub mean: C64,
    pub variance: f64,
}

impl ComplexGaussian {
    pub fn new(mean: C64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() {
            return domain(format!("variance must be positive and finite, got {variance}"));
        }
        Ok(ComplexGaussian { mean, variance })
    }

    pub fn density(&self, x: C64) -> f64 {
        (-(x - self.mean).norm_sqr() / self.variance).exp() / (PI * self.variance)
    }

    pub fn ln_density(&self, x: C64) -> f64 {
        -(x - self.mean).norm_sqr() / self.variance - (PI * self.variance).ln()
    }
}

/// Evaluates `CN(x; mean, var)`.
pub fn cgauss_density(x: C64, mean: C64, var: f64) -> Result<f64> {
    Ok(ComplexGaussian::new(mean, var)?.density(x))
}

/// Log of `CN(x; mean, var)`; the variance is floored at [`VAR_FLOOR`].
#[inline]
pub fn ln_cgauss(x: C64, mean: C64, var: f64) -> f64 {
    let var = var.max(VAR_FLOOR);
    -(x - mean).norm_sqr() / var - (PI * var).ln()
}

/// Product of two Gaussians in the same variable.
///
/// Returns `(combined, scale)` with `g1(x) g2(x) = scale * combined(x)` for
/// every `x`, where `scale = CN(0; m1 - m2, v1 + v2)`.
pub fn gauss_product(g1: &ComplexGaussian, g2: &ComplexGaussian) -> Result<(ComplexGaussian, f64)> {
    if !(g1.variance > 0.0 && g2.variance > 0.0) {
        return domain("gauss_product needs positive variances");
    }
    let (p1, p2) = (1.0 / g1.variance, 1.0 / g2.variance);
    let variance = 1.0 / (p1 + p2);
    let mean = (g1.mean * p1 + g2.mean * p2) * variance;
    let scale = cgauss_density(C64::new(0.0, 0.0), g1.mean - g2.mean, g1.variance + g2.variance)?;
    Ok((ComplexGaussian { mean, variance }, scale))
}

/// `ln(sum(exp(v)))`, returning `-inf` for an empty or all `-inf` input.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Normalizes log-weights in place into a pmf. All `-inf` inputs become uniform.
pub fn normalize_log_weights(log_w: &[f64], out: &mut [f64]) {
    debug_assert_eq!(log_w.len(), out.len());
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / out.len() as f64;
        out.iter_mut().for_each(|o| *o = u);
        return;
    }
    let mut total = 0.0;
    for (o, l) in out.iter_mut().zip(log_w) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// `ln(1 + exp(x))` without overflow.
#[inline]
pub fn ln_1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Dense row-major complex matrix.
///
/// Rows index subcarriers and columns index channel lags wherever it is used
/// as a mixing matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl ComplexMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ComplexMatrix { rows, cols, data: vec![C64::new(0.0, 0.0); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        ComplexMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: C64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    /// `A^H y`.
    pub fn adjoint_mul_vec(&self, y: &[C64]) -> Vec<C64> {
        assert_eq!(y.len(), self.rows);
        let mut out = vec![C64::new(0.0, 0.0); self.cols];
        for (i, yi) in y.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a.conj() * yi;
            }
        }
        out
    }

    /// Keeps the listed rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        ComplexMatrix { rows: rows.len(), cols: self.cols, data }
    }

    /// Keeps the listed columns, in order.
    pub fn select_cols(&self, cols: &[usize]) -> Self {
        ComplexMatrix::from_fn(self.rows, cols.len(), |i, j| self.get(i, cols[j]))
    }

    /// Left-multiplies by `diag(d)`.
    pub fn scale_rows(&self, d: &[C64]) -> Self {
        assert_eq!(d.len(), self.rows);
        ComplexMatrix::from_fn(self.rows, self.cols, |i, j| d[i] * self.get(i, j))
    }

    /// True when every entry has unit modulus to within `tol`.
    pub fn is_unit_modulus(&self, tol: f64) -> bool {
        self.data.iter().all(|v| (v.norm_sqr() - 1.0).abs() <= tol)
    }

    pub fn to_nalgebra(&self) -> nalgebra::DMatrix<C64> {
        nalgebra::DMatrix::from_row_slice(self.rows, self.cols, &self.data)
    }
}

/// Squared Euclidean norm.
pub fn norm_sqr(v: &[C64]) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum()
}
