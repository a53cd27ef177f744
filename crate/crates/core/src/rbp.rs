//! Relaxed belief propagation over a dense linear mixing `z = Phi x`.
//!
//! The engine passes only means and variances along the edges of the
//! bipartite graph between the measurements `y_i` and the coefficients `x_j`.
//! Everything problem specific enters through two moment callbacks:
//!
//! * [`OutputChannel`]: posterior mean/variance of `z_i` given `y_i` under a
//!   Gaussian prior `CN(z_hat, mu_z)`;
//! * [`InputChannel`]: posterior mean/variance of `x_j` given a Gaussian
//!   pseudo-measurement `CN(q_hat, mu_q)`, plus the prior moments.
//!
//! One iteration runs the twelve update steps in fixed order. When every
//! mixing entry has unit modulus (DFT rows) the two variance sums collapse to
//! scalars and the per-edge work is a handful of elementwise `N x L` products.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::numerics::{norm_sqr, ComplexMatrix, C64, VAR_FLOOR};

/// Measurement-side moment function.
pub trait OutputChannel: Sync {
    /// `(F_out, E_out)` for measurement `i`.
    fn moments(&self, i: usize, y: C64, z_hat: C64, mu_z: f64) -> (C64, f64);
}

/// Coefficient-side moment function.
pub trait InputChannel: Sync {
    /// Prior mean and variance of coefficient `j`.
    fn prior_moments(&self, j: usize) -> (C64, f64);
    /// `(F_in, E_in)` for coefficient `j`.
    fn moments(&self, j: usize, q_hat: C64, mu_q: f64) -> (C64, f64);
}

/// `y_i = s_i z_i + CN(0, noise_variance)` with known gains `s_i`.
#[derive(Debug, Clone)]
pub struct AwgnOutput {
    pub gains: Vec<C64>,
    pub noise_variance: f64,
}

impl OutputChannel for AwgnOutput {
    fn moments(&self, i: usize, y: C64, z_hat: C64, mu_z: f64) -> (C64, f64) {
        let s = self.gains[i];
        let denom = s.norm_sqr() * mu_z + self.noise_variance;
        let mean = z_hat + s.conj() * mu_z * (y - s * z_hat) / denom;
        (mean, mu_z * self.noise_variance / denom)
    }
}

/// Independent zero-mean Gaussian coefficients.
#[derive(Debug, Clone)]
pub struct GaussianInput {
    pub variances: Vec<f64>,
}

impl InputChannel for GaussianInput {
    fn prior_moments(&self, j: usize) -> (C64, f64) {
        (C64::new(0.0, 0.0), self.variances[j])
    }

    fn moments(&self, j: usize, q_hat: C64, mu_q: f64) -> (C64, f64) {
        let v = self.variances[j];
        if v <= 0.0 {
            return (C64::new(0.0, 0.0), 0.0);
        }
        (q_hat * (v / (v + mu_q)), v * mu_q / (v + mu_q))
    }
}

/// How the two variance sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VariancePath {
    /// Scalar form when the mixing matrix is unit modulus, general otherwise.
    #[default]
    Auto,
    /// Force the scalar form (caller guarantees unit modulus).
    Scalar,
    /// Always use per-row / per-column sums.
    General,
}

/// Iteration policy.
#[derive(Debug, Clone)]
pub struct RbpConfig {
    pub max_iters: usize,
    /// Stop when `|x[n+1] - x[n]|^2 / |x[n]|^2` falls below this (unnormalized
    /// when `x[n]` is zero).
    pub tol: f64,
    /// `mu_e` is clipped at `clip * mu_z` so the `mu_u` update stays positive.
    pub clip: f64,
    /// Weight of the new coefficient estimate; 1.0 disables damping.
    pub damping: f64,
    pub variance_path: VariancePath,
    /// Record `n, mu_z, mu_q, residual` per iteration.
    pub trace: bool,
}

impl Default for RbpConfig {
    fn default() -> Self {
        RbpConfig { max_iters: 50, tol: 1e-6, clip: 0.99, damping: 1.0, variance_path: VariancePath::Auto, trace: false }
    }
}

/// All per-iteration quantities.
///
/// Edge arrays are row-major `N x L`, indexed `[i * L + j]`. Variances are
/// kept per row / per column even on the scalar path, where all entries are equal.
#[derive(Debug, Clone)]
pub struct RbpState {
    pub rows: usize,
    pub cols: usize,
    /// Edge means `x_ij`.
    pub x_edge: Vec<C64>,
    pub x_hat: Vec<C64>,
    pub mu_x: Vec<f64>,
    pub z_hat: Vec<C64>,
    pub mu_z: Vec<f64>,
    pub e_edge: Vec<C64>,
    pub mu_e: Vec<f64>,
    pub u_edge: Vec<C64>,
    pub mu_u: Vec<f64>,
    pub q_hat: Vec<C64>,
    pub mu_q: Vec<f64>,
    /// Iterations completed.
    pub iteration: usize,
    /// Elementwise multiplies performed by the last iteration (mixing work
    /// only; the moment callbacks are not counted).
    pub last_multiplies: u64,
    scratch_p: Vec<C64>,
    scratch_v: Vec<C64>,
    f_out: Vec<C64>,
}

/// Initial state from the prior moments.
pub fn rbp_init(input: &dyn InputChannel, rows: usize, cols: usize) -> RbpState {
    let mut x_hat = Vec::with_capacity(cols);
    let mut mu_x = Vec::with_capacity(cols);
    for j in 0..cols {
        let (m, v) = input.prior_moments(j);
        x_hat.push(m);
        mu_x.push(v);
    }
    let mut x_edge = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        x_edge.extend_from_slice(&x_hat);
    }
    let zero = C64::new(0.0, 0.0);
    RbpState {
        rows,
        cols,
        x_edge,
        x_hat,
        mu_x,
        z_hat: vec![zero; rows],
        mu_z: vec![0.0; rows],
        e_edge: vec![zero; rows * cols],
        mu_e: vec![0.0; rows],
        u_edge: vec![zero; rows * cols],
        mu_u: vec![0.0; rows],
        q_hat: vec![zero; cols],
        mu_q: vec![0.0; cols],
        iteration: 0,
        last_multiplies: 0,
        scratch_p: vec![zero; rows * cols],
        scratch_v: vec![zero; rows * cols],
        f_out: vec![zero; rows],
    }
}

fn use_scalar(phi: &ComplexMatrix, path: VariancePath) -> bool {
    match path {
        VariancePath::Scalar => true,
        VariancePath::General => false,
        VariancePath::Auto => phi.is_unit_modulus(1e-12),
    }
}

impl RbpState {
    /// Output-side variance and mean from the current edge means: returns the
    /// number of multiplies and leaves `Phi_ij x_ij` in `scratch_p`.
    fn output_side(&mut self, phi: &ComplexMatrix, scalar: bool) -> u64 {
        let (n, l) = (self.rows, self.cols);
        if scalar {
            let s: f64 = self.mu_x.iter().sum();
            self.mu_z.iter_mut().for_each(|m| *m = s);
        } else {
            for i in 0..n {
                self.mu_z[i] = phi.row(i).iter().zip(&self.mu_x).map(|(p, v)| p.norm_sqr() * v).sum();
            }
        }
        for i in 0..n {
            let row = phi.row(i);
            let xe = &self.x_edge[i * l..(i + 1) * l];
            let p = &mut self.scratch_p[i * l..(i + 1) * l];
            let mut acc = C64::new(0.0, 0.0);
            for j in 0..l {
                p[j] = row[j] * xe[j];
                acc += p[j];
            }
            self.z_hat[i] = acc;
        }
        let general = if scalar { 0 } else { (n * l) as u64 };
        (n * l) as u64 + general
    }

    /// Refreshes `(z_hat, mu_z)` from the current edge means without touching
    /// anything else. These are the Gaussian beliefs about `z_i` that exclude
    /// measurement `i` itself.
    pub fn refresh_output_beliefs(&mut self, phi: &ComplexMatrix, path: VariancePath) {
        let scalar = use_scalar(phi, path);
        self.output_side(phi, scalar);
    }
}

/// One full iteration of the update schedule.
pub fn rbp_iterate(
    state: &mut RbpState,
    phi: &ComplexMatrix,
    y: &[C64],
    out: &dyn OutputChannel,
    input: &dyn InputChannel,
    cfg: &RbpConfig,
) -> Result<()> {
    let (n, l) = (state.rows, state.cols);
    if phi.rows() != n || phi.cols() != l || y.len() != n {
        return Err(Error::Dimension(format!("state is {n}x{l}, mixing is {}x{}, {} measurements", phi.rows(), phi.cols(), y.len())));
    }
    let scalar = use_scalar(phi, cfg.variance_path);
    let mut mults: u64 = 0;

    // output-side variances and means; per-edge z is kept implicit via scratch_p
    mults += state.output_side(phi, scalar);

    // output moments, with clipping of mu_e
    let mut ratio = vec![0.0; n];
    for i in 0..n {
        let mu_z = state.mu_z[i].max(VAR_FLOOR);
        let (f, e) = out.moments(i, y[i], state.z_hat[i], mu_z);
        if !f.re.is_finite() || !f.im.is_finite() || !e.is_finite() {
            return Err(Error::Numerical(format!("output moments not finite at row {i}")));
        }
        let e = e.max(0.0).min(cfg.clip * mu_z);
        state.f_out[i] = f;
        state.mu_e[i] = e;
        ratio[i] = e / mu_z;
    }
    mults += n as u64;

    // per-edge residuals and scaled residuals
    for i in 0..n {
        let r = ratio[i];
        let keep = 1.0 - r;
        let inv = 1.0 / keep;
        state.mu_u[i] = state.mu_z[i].max(VAR_FLOOR) * inv;
        let base = state.f_out[i] - state.z_hat[i];
        let p = &state.scratch_p[i * l..(i + 1) * l];
        let e = &mut state.e_edge[i * l..(i + 1) * l];
        let u = &mut state.u_edge[i * l..(i + 1) * l];
        for j in 0..l {
            // F - (z_hat - P) - P r
            e[j] = base + p[j] * keep;
            u[j] = e[j] * inv;
        }
    }
    mults += 2 * (n * l) as u64 + 2 * n as u64;

    // input-side pseudo-observation variances and means
    let inv_mu_u: Vec<f64> = state.mu_u.iter().map(|m| 1.0 / m.max(VAR_FLOOR)).collect();
    if scalar {
        let s: f64 = inv_mu_u.iter().sum();
        state.mu_q.iter_mut().for_each(|m| *m = 1.0 / s);
    } else {
        for j in 0..l {
            let s: f64 = (0..n).map(|i| phi.get(i, j).norm_sqr() * inv_mu_u[i]).sum();
            state.mu_q[j] = 1.0 / s.max(VAR_FLOOR);
        }
        mults += (n * l) as u64;
    }
    let mut q_acc = vec![C64::new(0.0, 0.0); l];
    for i in 0..n {
        let row = phi.row(i);
        let u = &state.u_edge[i * l..(i + 1) * l];
        let v = &mut state.scratch_v[i * l..(i + 1) * l];
        let w = inv_mu_u[i];
        for j in 0..l {
            v[j] = row[j].conj() * u[j] * w;
            q_acc[j] += v[j];
        }
    }
    mults += 2 * (n * l) as u64;
    for j in 0..l {
        state.q_hat[j] = q_acc[j] * state.mu_q[j];
    }

    // R10-R11
    let prev = state.x_hat.clone();
    for j in 0..l {
        let (f, e) = input.moments(j, state.q_hat[j], state.mu_q[j]);
        if !f.re.is_finite() || !f.im.is_finite() || !e.is_finite() {
            return Err(Error::Numerical(format!("input moments not finite at column {j}")));
        }
        let d = cfg.damping;
        state.x_hat[j] = f * d + prev[j] * (1.0 - d);
        state.mu_x[j] = e.max(0.0) * d + state.mu_x[j] * (1.0 - d);
    }
    mults += 2 * l as u64;

    // R12
    for i in 0..n {
        let v = &state.scratch_v[i * l..(i + 1) * l];
        let xe = &mut state.x_edge[i * l..(i + 1) * l];
        for j in 0..l {
            xe[j] = state.x_hat[j] - v[j] * state.mu_x[j];
        }
    }
    mults += (n * l) as u64;

    state.iteration += 1;
    state.last_multiplies = mults;
    Ok(())
}

/// Result of [`rbp_run`].
#[derive(Debug, Clone)]
pub struct RbpOutput {
    pub x_hat: Vec<C64>,
    pub mu_x: Vec<f64>,
    /// Beliefs about `z_i` that exclude measurement `i`, from the final edge means.
    pub z_hat: Vec<C64>,
    pub mu_z: Vec<f64>,
    pub q_hat: Vec<C64>,
    pub mu_q: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// CSV rows `n,mu_z,mu_q,residual` when tracing is on.
    pub trace: Option<String>,
    pub state: RbpState,
}

/// Iterates from the prior until the relative change in `x_hat` drops below
/// `cfg.tol` or `cfg.max_iters` is reached.
pub fn rbp_run(phi: &ComplexMatrix, y: &[C64], out: &dyn OutputChannel, input: &dyn InputChannel, cfg: &RbpConfig) -> Result<RbpOutput> {
    let state = rbp_init(input, phi.rows(), phi.cols());
    rbp_run_from(state, phi, y, out, input, cfg)
}

/// Like [`rbp_run`] but continues from an existing state.
pub fn rbp_run_from(
    mut state: RbpState,
    phi: &ComplexMatrix,
    y: &[C64],
    out: &dyn OutputChannel,
    input: &dyn InputChannel,
    cfg: &RbpConfig,
) -> Result<RbpOutput> {
    let prior_energy: f64 = (0..phi.cols())
        .map(|j| {
            let (m, v) = input.prior_moments(j);
            m.norm_sqr() + v
        })
        .sum::<f64>()
        .max(1e-30);
    let mut trace = cfg.trace.then(|| String::from("n,mu_z,mu_q,residual\n"));
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let prev = state.x_hat.clone();
        rbp_iterate(&mut state, phi, y, out, input, cfg)?;
        iterations += 1;
        let diff: f64 = state.x_hat.iter().zip(&prev).map(|(a, b)| (a - b).norm_sqr()).sum();
        let base = norm_sqr(&prev);
        let residual = if base > 0.0 { diff / base } else { diff };
        if let Some(t) = trace.as_mut() {
            let mz = state.mu_z.iter().sum::<f64>() / state.mu_z.len().max(1) as f64;
            let mq = state.mu_q.iter().sum::<f64>() / state.mu_q.len().max(1) as f64;
            let _ = writeln!(t, "{},{mz:e},{mq:e},{residual:e}", state.iteration);
        }
        let energy = norm_sqr(&state.x_hat);
        if !energy.is_finite() || energy > 1e6 * prior_energy {
            return Err(Error::Numerical(format!("estimate energy {energy:e} exceeds 1e6 times the prior energy at iteration {}", state.iteration)));
        }
        if residual < cfg.tol {
            converged = true;
            break;
        }
    }
    state.refresh_output_beliefs(phi, cfg.variance_path);
    Ok(RbpOutput {
        x_hat: state.x_hat.clone(),
        mu_x: state.mu_x.clone(),
        z_hat: state.z_hat.clone(),
        mu_z: state.mu_z.clone(),
        q_hat: state.q_hat.clone(),
        mu_q: state.mu_q.clone(),
        iterations,
        converged,
        trace,
        state,
    })
}
