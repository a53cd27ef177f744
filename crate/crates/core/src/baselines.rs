//! Reference receivers that estimate the channel first and decode second.

use nalgebra::{DMatrix, DVector};

use crate::channel::{ChannelPrior, SparseChannelRealization};
use crate::error::{Error, Result};
use crate::jced::{demap_symbol, Frame};
use crate::ldpc::SisoDecoder;
use crate::numerics::{norm_sqr, ComplexMatrix, C64};

/// Linear observation `y = A x + CN(0, noise_variance I)`.
#[derive(Debug, Clone)]
pub struct PilotSystem {
    pub y: Vec<C64>,
    /// `diag(s) Phi` restricted to the observed rows.
    pub a: ComplexMatrix,
    pub noise_variance: f64,
}

impl PilotSystem {
    /// Rows `rows` of `y = diag(s) Phi x + v` with the symbols `s` of those rows known.
    pub fn from_rows(y: &[C64], symbols: &[C64], mixing: &ComplexMatrix, rows: &[usize], noise_variance: f64) -> Result<Self> {
        if y.len() != mixing.rows() || symbols.len() != mixing.rows() {
            return Err(Error::Dimension("observation, symbols and mixing rows disagree".into()));
        }
        if rows.iter().any(|&r| r >= y.len()) {
            return Err(Error::Dimension("row index out of range".into()));
        }
        let s: Vec<C64> = rows.iter().map(|&r| symbols[r]).collect();
        Ok(PilotSystem { y: rows.iter().map(|&r| y[r]).collect(), a: mixing.select_rows(rows).scale_rows(&s), noise_variance })
    }
}

/// Frequency-domain channel estimate handed to the demapper.
#[derive(Debug, Clone)]
pub struct SoftChannelEstimate {
    pub z_hat: Vec<C64>,
    /// Genie-aided: computed from the true gains.
    pub mu_z: f64,
}

/// Gaussian-prior MMSE estimate with prior variances `var` (zero-mean, independent).
///
/// Uses the row-space form `C A^H (A C A^H + v I)^{-1} y` when rows are fewer
/// than columns and the information form otherwise; both are the same estimator.
fn gaussian_mmse(a: &ComplexMatrix, var: &[f64], y: &[C64], v: f64) -> Result<Vec<C64>> {
    let (m, n) = (a.rows(), a.cols());
    if n == 0 {
        return Ok(Vec::new());
    }
    let am = a.to_nalgebra();
    let yv = DVector::from_column_slice(y);
    let c = DVector::from_iterator(n, var.iter().map(|&p| C64::new(p, 0.0)));
    let x = if m <= n {
        let ac = DMatrix::from_fn(m, n, |i, j| am[(i, j)] * c[j]);
        let mut g = &ac * am.adjoint();
        for i in 0..m {
            g[(i, i)] += C64::new(v, 0.0);
        }
        let sol = solve_hermitian(g, &yv)?;
        ac.adjoint() * sol
    } else {
        if var.iter().any(|&p| p <= 0.0) {
            // the information form needs an invertible prior covariance
            let ac = DMatrix::from_fn(m, n, |i, j| am[(i, j)] * c[j]);
            let mut g = &ac * am.adjoint();
            for i in 0..m {
                g[(i, i)] += C64::new(v, 0.0);
            }
            let sol = solve_hermitian(g, &yv)?;
            return Ok((ac.adjoint() * sol).iter().copied().collect());
        }
        let mut g = am.adjoint() * &am;
        for j in 0..n {
            g[(j, j)] += C64::new(v / var[j], 0.0);
        }
        solve_hermitian(g, &(am.adjoint() * yv))?
    };
    Ok(x.iter().copied().collect())
}

fn solve_hermitian(g: DMatrix<C64>, rhs: &DVector<C64>) -> Result<DVector<C64>> {
    if let Some(ch) = g.clone().cholesky() {
        return Ok(ch.solve(rhs));
    }
    g.lu().solve(rhs).ok_or_else(|| Error::Numerical("singular normal equations".into()))
}

/// Linear MMSE estimate under the prior covariance `diag(lambda_j mu_j)`.
pub fn lmmse_estimate(ps: &PilotSystem, prior: &ChannelPrior) -> Result<Vec<C64>> {
    if ps.a.cols() != prior.len() {
        return Err(Error::Dimension(format!("system has {} columns, prior {} taps", ps.a.cols(), prior.len())));
    }
    if ps.y.is_empty() {
        return domain_zero(prior.len());
    }
    gaussian_mmse(&ps.a, &prior.prior_variances(), &ps.y, ps.noise_variance)
}

fn domain_zero(len: usize) -> Result<Vec<C64>> {
    Ok(vec![C64::new(0.0, 0.0); len])
}

/// MMSE estimate when the support is known: the active taps are Gaussian with
/// variances `mu_j`, all others are zero.
pub fn genie_mmse_estimate(ps: &PilotSystem, support: &[usize], prior: &ChannelPrior) -> Result<Vec<C64>> {
    let l = prior.len();
    if ps.a.cols() != l {
        return Err(Error::Dimension(format!("system has {} columns, prior {l} taps", ps.a.cols())));
    }
    let mut x = vec![C64::new(0.0, 0.0); l];
    if support.is_empty() || ps.y.is_empty() {
        return Ok(x);
    }
    let sub = ps.a.select_cols(support);
    let var: Vec<f64> = support.iter().map(|&j| prior.tap_variances()[j]).collect();
    let xs = gaussian_mmse(&sub, &var, &ps.y, ps.noise_variance)?;
    for (&j, v) in support.iter().zip(xs) {
        x[j] = v;
    }
    Ok(x)
}

/// Stopping rule for [`lasso_solve`].
#[derive(Debug, Clone)]
pub struct LassoConfig {
    pub max_iters: usize,
    /// Relative objective decrease below which the solver stops.
    pub rel_tol: f64,
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig { max_iters: 2000, rel_tol: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LassoResult {
    pub x: Vec<C64>,
    pub objective: f64,
    /// Objective after each iteration.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// `0.5 |y - A x|^2 + tau |x|_1`.
pub fn lasso_objective(a: &ComplexMatrix, y: &[C64], x: &[C64], tau: f64) -> f64 {
    let r: f64 = a.mul_vec(x).iter().zip(y).map(|(p, q)| (q - p).norm_sqr()).sum();
    0.5 * r + tau * x.iter().map(|v| v.norm()).sum::<f64>()
}

/// Largest squared singular value of `a`, by power iteration on `A^H A`.
fn spectral_norm_sqr(a: &ComplexMatrix) -> f64 {
    let n = a.cols();
    if n == 0 || a.rows() == 0 {
        return 0.0;
    }
    let mut v: Vec<C64> = (0..n).map(|j| C64::new(1.0, 0.1 * j as f64)).collect();
    let mut est = 0.0;
    for _ in 0..200 {
        let nv = norm_sqr(&v).sqrt();
        v.iter_mut().for_each(|x| *x /= nv);
        let w = a.adjoint_mul_vec(&a.mul_vec(&v));
        let next = norm_sqr(&w).sqrt();
        let done = (next - est).abs() <= 1e-12 * next;
        est = next;
        v = w;
        if done {
            break;
        }
    }
    est
}

fn soft_threshold(v: C64, t: f64) -> C64 {
    let m = v.norm();
    if m <= t {
        C64::new(0.0, 0.0)
    } else {
        v * ((m - t) / m)
    }
}

/// Accelerated proximal gradient with function-value restart.
///
/// When an accelerated step would raise the objective the momentum is reset
/// and a plain proximal step is taken instead, so the objective never increases.
pub fn lasso_solve(a: &ComplexMatrix, y: &[C64], tau: f64, cfg: &LassoConfig) -> Result<LassoResult> {
    lasso_solve_from(a, y, tau, cfg, None)
}

/// [`lasso_solve`] from a warm start.
pub fn lasso_solve_from(a: &ComplexMatrix, y: &[C64], tau: f64, cfg: &LassoConfig, start: Option<&[C64]>) -> Result<LassoResult> {
    if tau < 0.0 || !tau.is_finite() {
        return Err(Error::Domain(format!("regularization must be a finite non-negative number, got {tau}")));
    }
    if y.len() != a.rows() {
        return Err(Error::Dimension(format!("{} observations for {} rows", y.len(), a.rows())));
    }
    let n = a.cols();
    let lip = spectral_norm_sqr(a) * 1.01;
    let mut x: Vec<C64> = start.map(|s| s.to_vec()).unwrap_or_else(|| vec![C64::new(0.0, 0.0); n]);
    let mut f = lasso_objective(a, y, &x, tau);
    if lip == 0.0 {
        return Ok(LassoResult { objective: f, x, history: vec![], iterations: 0, converged: true });
    }
    let step = 1.0 / lip;
    let prox = |point: &[C64]| -> Vec<C64> {
        let r: Vec<C64> = a.mul_vec(point).iter().zip(y).map(|(p, q)| p - q).collect();
        let g = a.adjoint_mul_vec(&r);
        point.iter().zip(&g).map(|(p, gi)| soft_threshold(p - gi * step, tau * step)).collect()
    };
    let mut momentum_point = x.clone();
    let mut t = 1.0f64;
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let mut cand = prox(&momentum_point);
        let mut f_cand = lasso_objective(a, y, &cand, tau);
        let restarted = f_cand > f;
        if restarted {
            t = 1.0;
            cand = prox(&x);
            f_cand = lasso_objective(a, y, &cand, tau).min(f);
            if f_cand >= f {
                // the plain step cannot rise with step <= 1/L; guard against rounding
                cand = x.clone();
                f_cand = f;
            }
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let beta = if restarted { 0.0 } else { (t - 1.0) / t_next };
        momentum_point = cand.iter().zip(&x).map(|(c, p)| c + (c - p) * beta).collect();
        t = if restarted { 1.0 } else { t_next };
        let decrease = f - f_cand;
        x = cand;
        f = f_cand;
        history.push(f);
        if decrease <= cfg.rel_tol * f.abs().max(f64::MIN_POSITIVE) && !restarted {
            converged = true;
            break;
        }
        if restarted && decrease == 0.0 {
            converged = true;
            break;
        }
    }
    Ok(LassoResult { x, objective: f, history, iterations, converged })
}

/// Number of regularization values tried by [`ccs_tune`].
pub const CCS_GRID_POINTS: usize = 40;

/// LASSO with the regularization picked by a genie: the grid point whose
/// estimate is closest to `x_true`. Returns the estimate and its `tau`.
pub fn ccs_tune(a: &ComplexMatrix, y: &[C64], x_true: &[C64]) -> Result<(Vec<C64>, f64)> {
    if x_true.len() != a.cols() {
        return Err(Error::Dimension("truth length differs from column count".into()));
    }
    let scale = a.adjoint_mul_vec(y).iter().map(|v| v.norm()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok((vec![C64::new(0.0, 0.0); a.cols()], 0.0));
    }
    let cfg = LassoConfig::default();
    let (lo, hi) = ((1e-4f64).ln(), (1e1f64).ln());
    let mut best: Option<(f64, Vec<C64>, f64)> = None;
    let mut warm: Option<Vec<C64>> = None;
    // largest tau first so warm starts follow the path from the zero solution
    for g in (0..CCS_GRID_POINTS).rev() {
        let tau = scale * (lo + (hi - lo) * g as f64 / (CCS_GRID_POINTS - 1) as f64).exp();
        let res = lasso_solve_from(a, y, tau, &cfg, warm.as_deref())?;
        let err: f64 = res.x.iter().zip(x_true).map(|(p, q)| (p - q).norm_sqr()).sum();
        if best.as_ref().is_none_or(|b| err < b.0) {
            best = Some((err, res.x.clone(), tau));
        }
        warm = Some(res.x);
    }
    let (_, x, tau) = best.expect("grid is non-empty");
    Ok((x, tau))
}

/// Channel estimator used ahead of a one-shot decode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Lmmse,
    /// Support-aware genie over the pilot rows.
    SupportGenie,
    /// Support-aware genie over all rows, with every symbol known.
    BitSupportGenie,
    /// Genie-tuned LASSO over the pilot rows.
    Ccs,
}

/// Tap estimate for one OFDM symbol.
pub fn estimate_taps(
    kind: EstimatorKind,
    y: &[C64],
    symbols: &[C64],
    mixing: &ComplexMatrix,
    pilot_rows: &[usize],
    noise_variance: f64,
    prior: &ChannelPrior,
    truth: &SparseChannelRealization,
) -> Result<Vec<C64>> {
    match kind {
        EstimatorKind::BitSupportGenie => {
            let all: Vec<usize> = (0..mixing.rows()).collect();
            let ps = PilotSystem::from_rows(y, symbols, mixing, &all, noise_variance)?;
            genie_mmse_estimate(&ps, &truth.support, prior)
        }
        _ if pilot_rows.is_empty() => Err(Error::Domain("pilot-based estimation needs at least one pilot".into())),
        EstimatorKind::Lmmse => lmmse_estimate(&PilotSystem::from_rows(y, symbols, mixing, pilot_rows, noise_variance)?, prior),
        EstimatorKind::SupportGenie => {
            genie_mmse_estimate(&PilotSystem::from_rows(y, symbols, mixing, pilot_rows, noise_variance)?, &truth.support, prior)
        }
        EstimatorKind::Ccs => {
            let ps = PilotSystem::from_rows(y, symbols, mixing, pilot_rows, noise_variance)?;
            Ok(ccs_tune(&ps.a, &ps.y, &truth.taps)?.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct DcedOutput {
    pub info_bits: Vec<u8>,
    pub codeword: Vec<u8>,
    pub taps: Vec<Vec<C64>>,
    pub estimates: Vec<SoftChannelEstimate>,
    /// Tap NMSE over the frame.
    pub nmse: f64,
    pub parity_ok: bool,
}

/// Estimate, then demap and decode once.
///
/// `symbols[t]` holds the transmitted points of symbol `t` (only the pilot
/// rows are used unless the estimator is the bit-aware genie) and `truth[t]`
/// the channel, which also feeds the genie-aided variance of `z_hat`.
pub fn dced_decode(
    kind: EstimatorKind,
    frame: &Frame<'_>,
    symbols: &[Vec<C64>],
    truth: &[SparseChannelRealization],
    siso_iters: usize,
) -> Result<DcedOutput> {
    let layout = frame.layout;
    let n = layout.subcarriers();
    let md = layout.data_bits();
    if symbols.len() != frame.observations.len() || truth.len() != frame.observations.len() {
        return Err(Error::Dimension("one symbol vector and one channel per observation".into()));
    }
    if frame.observations.len() * md != frame.code.n() {
        return Err(Error::Dimension("observations do not fill the codeword".into()));
    }
    let slots = layout.slot_llrs(&vec![0.0; md]);
    let mut llrs = vec![0.0; frame.code.n()];
    let mut taps = Vec::with_capacity(symbols.len());
    let mut estimates = Vec::with_capacity(symbols.len());
    let (mut err, mut energy) = (0.0, 0.0);
    for (t, obs) in frame.observations.iter().enumerate() {
        let x_hat = estimate_taps(kind, &obs.y, &symbols[t], frame.mixing, layout.pilot_subcarriers(), obs.noise_variance, frame.prior, &truth[t])?;
        let z_hat = frame.mixing.mul_vec(&x_hat);
        let z_true = frame.mixing.mul_vec(&truth[t].taps);
        let mu_z = z_hat.iter().zip(&z_true).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / n as f64;
        demap_symbol(&obs.y, &z_hat, &vec![mu_z; n], &slots, layout, frame.constellation, obs.noise_variance, &mut llrs[t * md..(t + 1) * md]);
        err += x_hat.iter().zip(&truth[t].taps).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        energy += truth[t].energy();
        taps.push(x_hat);
        estimates.push(SoftChannelEstimate { z_hat, mu_z });
    }
    let res = SisoDecoder::new(frame.code).decode(&llrs, siso_iters)?;
    Ok(DcedOutput {
        info_bits: frame.code.extract_info(&res.hard_bits),
        codeword: res.hard_bits,
        taps,
        estimates,
        nmse: if energy > 0.0 { err / energy } else { f64::NAN },
        parity_ok: res.parity_ok,
    })
}
