//! Slow, independent references for the moment functions and small-system posteriors.
//!
//! Nothing here calls into the estimator modules; densities and linear algebra
//! are written out again so that agreement is evidence rather than tautology.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Tensor-product midpoint grid placed around each Gaussian component.
///
/// Each component of the integrand is Gaussian in the integration variable, so
/// the grid is centered on that component's peak and spans `radius` standard
/// deviations per axis with `points` cells per axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureGrid {
    pub radius: f64,
    pub points: usize,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid { radius: 8.0, points: 96 }
    }
}

impl QuadratureGrid {
    /// Below 64 cells or 6 standard deviations the 1e-6 accuracy claim lapses.
    pub fn is_adequate(&self) -> bool {
        self.points >= 64 && self.radius >= 6.0
    }

    pub fn refined(&self) -> Self {
        QuadratureGrid { radius: self.radius, points: self.points * 2 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadMoments {
    pub mean: Complex64,
    pub variance: f64,
    /// False when the grid was too coarse for the stated accuracy.
    pub accurate: bool,
}

fn ln_density(x: Complex64, mean: Complex64, var: f64) -> f64 {
    -(x - mean).norm_sqr() / var - (PI * var).ln()
}

/// One unnormalized component: `ln_f(z)` is integrated over a grid at `center`
/// with per-axis spread `sd`.
struct Component<'a> {
    center: Complex64,
    sd: f64,
    ln_f: Box<dyn Fn(Complex64) -> f64 + 'a>,
}

/// `(ln mass, mean, variance)` of a sum of components, plus optional point
/// masses at zero given by their log weight.
fn integrate(components: &[Component<'_>], ln_point_mass_at_zero: Option<f64>, grid: QuadratureGrid) -> QuadMoments {
    let n = grid.points;
    let nodes: Vec<f64> = (0..n).map(|k| -grid.radius + (k as f64 + 0.5) * 2.0 * grid.radius / n as f64).collect();
    let cell = (2.0 * grid.radius / n as f64).powi(2);

    // log-scale reference: the largest peak value over all components
    let mut reference = ln_point_mass_at_zero.unwrap_or(f64::NEG_INFINITY);
    for c in components {
        reference = reference.max((c.ln_f)(c.center) + (cell * c.sd * c.sd).ln());
    }

    let mut mass = ln_point_mass_at_zero.map_or(0.0, |w| (w - reference).exp());
    let mut first = Complex64::new(0.0, 0.0);
    let mut samples: Vec<(Complex64, f64)> = Vec::with_capacity(components.len() * n * n);
    for c in components {
        let area = (cell * c.sd * c.sd).ln();
        for &a in &nodes {
            for &b in &nodes {
                let z = c.center + Complex64::new(a * c.sd, b * c.sd);
                let w = ((c.ln_f)(z) + area - reference).exp();
                mass += w;
                first += z * w;
                samples.push((z, w));
            }
        }
    }
    let mean = first / mass;
    // central second moment in a separate pass to avoid cancellation
    let mut second: f64 = samples.iter().map(|(z, w)| (z - mean).norm_sqr() * w).sum();
    if ln_point_mass_at_zero.is_some() {
        second += mean.norm_sqr() * ln_point_mass_at_zero.map_or(0.0, |w| (w - reference).exp());
    }
    QuadMoments { mean, variance: second / mass, accurate: grid.is_adequate() }
}

/// Posterior mean and variance of `z` given `y`, with `z ~ CN(z_hat, mu_z)` and
/// `y = s z + CN(0, noise_variance)` where `s` takes value `points[k]` with
/// probability `probs[k]`.
pub fn quad_out_moments(
    y: Complex64,
    z_hat: Complex64,
    mu_z: f64,
    probs: &[f64],
    points: &[Complex64],
    noise_variance: f64,
    grid: QuadratureGrid,
) -> QuadMoments {
    let comps: Vec<Component<'_>> = probs
        .iter()
        .zip(points)
        .filter(|(p, _)| **p > 0.0)
        .map(|(&p, &s)| {
            let a = s.norm_sqr();
            let prec = 1.0 / mu_z + a / noise_variance;
            let center = (z_hat / mu_z + s.conj() * y / noise_variance) / prec;
            Component {
                center,
                sd: (0.5 / prec).sqrt(),
                ln_f: Box::new(move |z| p.ln() + ln_density(y, s * z, noise_variance) + ln_density(z, z_hat, mu_z)),
            }
        })
        .collect();
    integrate(&comps, None, grid)
}

/// Posterior mean and variance of a tap `x` with prior
/// `(1 - sparsity) delta(x) + sparsity CN(0, variance)` given `q_hat = x + CN(0, mu_q)`.
///
/// The point mass is added in closed form; the Gaussian part is integrated.
pub fn quad_in_moments(q_hat: Complex64, mu_q: f64, sparsity: f64, variance: f64, grid: QuadratureGrid) -> QuadMoments {
    let zero = Complex64::new(0.0, 0.0);
    if sparsity <= 0.0 || variance <= 0.0 {
        return QuadMoments { mean: zero, variance: 0.0, accurate: true };
    }
    let prec = 1.0 / mu_q + 1.0 / variance;
    let comp = Component {
        center: q_hat / mu_q / prec,
        sd: (0.5 / prec).sqrt(),
        ln_f: Box::new(move |x| sparsity.ln() + ln_density(q_hat, x, mu_q) + ln_density(x, zero, variance)),
    };
    let spike = (sparsity < 1.0).then(|| (1.0 - sparsity).ln() + ln_density(q_hat, zero, mu_q));
    integrate(&[comp], spike, grid)
}

/// Size limits for [`exact_small_posterior`].
pub const EXACT_MAX_ROWS: usize = 8;
pub const EXACT_MAX_TAPS: usize = 4;
pub const EXACT_MAX_POINTS: usize = 4;

/// Exact tap posterior for a tiny system `y_i = s_i (mixing x)_i + CN(0, noise_variance)`.
#[derive(Debug, Clone)]
pub struct ExactPosterior {
    pub mean: Vec<Complex64>,
    /// Marginal posterior variances.
    pub variance: Vec<f64>,
}

/// Sums over every symbol hypothesis and every tap support pattern.
///
/// `symbol_probs[i]` is the distribution of `s_i` over `points`; taps are
/// independent with activity `sparsity[j]` and active variance `variances[j]`.
pub fn exact_small_posterior(
    y: &[Complex64],
    mixing: &DMatrix<Complex64>,
    points: &[Complex64],
    symbol_probs: &[Vec<f64>],
    sparsity: &[f64],
    variances: &[f64],
    noise_variance: f64,
) -> Result<ExactPosterior> {
    let (n, l) = mixing.shape();
    if n > EXACT_MAX_ROWS || l > EXACT_MAX_TAPS || points.len() > EXACT_MAX_POINTS {
        return Err(Error::Domain(format!(
            "exact enumeration limited to {EXACT_MAX_ROWS} rows, {EXACT_MAX_TAPS} taps and {EXACT_MAX_POINTS} points"
        )));
    }
    if y.len() != n || symbol_probs.len() != n || sparsity.len() != l || variances.len() != l {
        return Err(Error::Dimension("inputs disagree with the mixing matrix".into()));
    }
    if noise_variance <= 0.0 {
        return Err(Error::Domain("exact enumeration needs positive noise".into()));
    }
    let q = points.len();
    let yv = DVector::from_column_slice(y);
    let mut log_terms: Vec<(f64, DVector<Complex64>, DMatrix<Complex64>)> = Vec::new();
    let mut digits = vec![0usize; n];
    loop {
        let ln_sym: f64 = digits.iter().enumerate().map(|(i, &d)| symbol_probs[i][d].ln()).sum();
        if ln_sym.is_finite() {
            let a = DMatrix::from_fn(n, l, |i, j| points[digits[i]] * mixing[(i, j)]);
            for mask in 0u32..(1 << l) {
                let mut ln_w = ln_sym;
                let mut c = vec![0.0; l];
                for j in 0..l {
                    if mask >> j & 1 == 1 {
                        ln_w += sparsity[j].ln();
                        c[j] = variances[j];
                    } else {
                        ln_w += (1.0 - sparsity[j]).ln();
                    }
                }
                if !ln_w.is_finite() {
                    continue;
                }
                let cm = DMatrix::from_diagonal(&DVector::from_iterator(l, c.iter().map(|&v| Complex64::new(v, 0.0))));
                let cov = &a * &cm * a.adjoint() + DMatrix::<Complex64>::identity(n, n) * Complex64::new(noise_variance, 0.0);
                let Some(inv) = cov.clone().try_inverse() else {
                    return Err(Error::Numerical("singular evidence covariance".into()));
                };
                let det = cov.determinant().re;
                let quad = (yv.adjoint() * &inv * &yv)[(0, 0)].re;
                ln_w += -quad - det.ln() - n as f64 * PI.ln();
                let gain = &cm * a.adjoint() * &inv;
                let mean = &gain * &yv;
                let post_cov = &cm - &gain * &a * &cm;
                log_terms.push((ln_w, mean, post_cov));
            }
        }
        // next symbol hypothesis (odometer)
        let mut i = 0;
        while i < n {
            digits[i] += 1;
            if digits[i] < q {
                break;
            }
            digits[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let top = log_terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = log_terms.iter().map(|t| (t.0 - top).exp()).sum();
    let mut mean = vec![Complex64::new(0.0, 0.0); l];
    for (w, m, _) in &log_terms {
        let p = (w - top).exp() / total;
        for j in 0..l {
            mean[j] += m[j] * p;
        }
    }
    let mut variance = vec![0.0; l];
    for (w, m, c) in &log_terms {
        let p = (w - top).exp() / total;
        for j in 0..l {
            variance[j] += p * (c[(j, j)].re + (m[j] - mean[j]).norm_sqr());
        }
    }
    Ok(ExactPosterior { mean, variance })
}
