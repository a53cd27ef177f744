//! Joint channel estimation and decoding.
//!
//! Each received subcarrier is modelled as `y = s z + noise`, with the symbol
//! `s` uncertain; the belief about `s` turns the measurement channel into a
//! Gaussian mixture over the constellation. Taps follow a Bernoulli-Gaussian
//! prior. The turbo loop alternates relaxed BP over the taps with
//! soft demapping and LDPC decoding.

use crate::channel::{ChannelPrior, Observation};
use crate::error::{Error, Result};
use crate::ldpc::{LdpcCode, SisoDecoder, DEFAULT_SISO_ITERS};
use crate::modem::{extrinsic_bit_llrs, symbol_prior_llr, Constellation, FrameLayout, Slot, SymbolBelief};
use crate::numerics::{ln_cgauss, ComplexMatrix, C64, VAR_FLOOR};
use crate::rbp::{rbp_run, InputChannel, OutputChannel, RbpConfig};

/// Posterior moments of `z` under the mixture measurement model.
#[derive(Debug, Clone)]
pub struct OutMoments {
    pub mean: C64,
    pub variance: f64,
    /// Posterior pmf of the transmitted symbol.
    pub symbol_posterior: Vec<f64>,
}

/// Mean and variance of `z` given `y`, prior `CN(z_hat, mu_z)` and symbol belief `belief`.
pub fn out_moments(y: C64, z_hat: C64, mu_z: f64, belief: &SymbolBelief, constellation: &Constellation, noise_variance: f64) -> OutMoments {
    let mut post = vec![0.0; constellation.size()];
    let (mean, variance) = out_moments_into(y, z_hat, mu_z, belief.ln_probs(), constellation.points(), noise_variance, &mut post);
    OutMoments { mean, variance, symbol_posterior: post }
}

fn out_moments_into(y: C64, z_hat: C64, mu_z: f64, ln_beta: &[f64], points: &[C64], noise_variance: f64, post: &mut [f64]) -> (C64, f64) {
    let mut max = f64::NEG_INFINITY;
    for (k, (&s, &lb)) in points.iter().zip(ln_beta).enumerate() {
        post[k] = if lb == f64::NEG_INFINITY { f64::NEG_INFINITY } else { lb + ln_cgauss(y, s * z_hat, s.norm_sqr() * mu_z + noise_variance) };
        max = max.max(post[k]);
    }
    if max == f64::NEG_INFINITY {
        post.iter_mut().for_each(|p| *p = 0.0);
        return (z_hat, mu_z);
    }
    let mut total = 0.0;
    for p in post.iter_mut() {
        *p = (*p - max).exp();
        total += *p;
    }
    let mut e_bar = C64::new(0.0, 0.0);
    let mut var_acc = 0.0;
    for (p, &s) in post.iter_mut().zip(points) {
        *p /= total;
        if *p == 0.0 {
            continue;
        }
        let denom = s.norm_sqr() * mu_z + noise_variance;
        e_bar += *p * s.conj() * (y - s * z_hat) * (mu_z / denom);
        var_acc += *p * mu_z * noise_variance / denom;
    }
    for (p, &s) in post.iter().zip(points) {
        if *p == 0.0 {
            continue;
        }
        let denom = s.norm_sqr() * mu_z + noise_variance;
        let e_k = s.conj() * (y - s * z_hat) * (mu_z / denom);
        var_acc += p * (e_bar - e_k).norm_sqr();
    }
    (z_hat + e_bar, var_acc)
}

/// Posterior mean and variance of a Bernoulli-Gaussian tap (activity
/// `sparsity`, active variance `variance`) seen through `CN(q_hat, mu_q)`.
pub fn in_moments(q_hat: C64, mu_q: f64, sparsity: f64, variance: f64) -> (C64, f64) {
    if sparsity <= 0.0 || variance <= 0.0 {
        return (C64::new(0.0, 0.0), 0.0);
    }
    let mu_q = mu_q.max(VAR_FLOOR);
    let nu = mu_q * variance / (mu_q + variance);
    let gamma = q_hat * (nu / mu_q);
    if sparsity >= 1.0 {
        return (gamma, nu);
    }
    // alpha - 1 = exp(t); 1/alpha is the posterior activity probability
    let t = ((1.0 - sparsity) / sparsity).ln() + (variance / nu).ln() - gamma.norm_sqr() / nu;
    let active = if t > 0.0 { (-t).exp() / (1.0 + (-t).exp()) } else { 1.0 / (1.0 + t.exp()) };
    (gamma * active, gamma.norm_sqr() * active * (1.0 - active) + nu * active)
}

/// Log of `CN(y; s z_hat, |s|^2 mu_z + noise_variance)` for every point `s`.
pub fn leftward_symbol_likelihood(y: C64, z_hat: C64, mu_z: f64, constellation: &Constellation, noise_variance: f64, out: &mut [f64]) {
    for (o, &s) in out.iter_mut().zip(constellation.points()) {
        *o = ln_cgauss(y, s * z_hat, s.norm_sqr() * mu_z.max(0.0) + noise_variance);
    }
}

/// Gaussian-mixture measurement model for one OFDM symbol.
#[derive(Debug, Clone)]
pub struct MixtureOutputChannel<'a> {
    pub beliefs: Vec<SymbolBelief>,
    pub constellation: &'a Constellation,
    pub noise_variance: f64,
}

impl OutputChannel for MixtureOutputChannel<'_> {
    fn moments(&self, i: usize, y: C64, z_hat: C64, mu_z: f64) -> (C64, f64) {
        let mut post = [0.0; 256];
        let size = self.constellation.size();
        out_moments_into(y, z_hat, mu_z, self.beliefs[i].ln_probs(), self.constellation.points(), self.noise_variance, &mut post[..size])
    }
}

/// Independent Bernoulli-Gaussian taps.
#[derive(Debug, Clone)]
pub struct BernoulliGaussInputChannel {
    pub sparsity: Vec<f64>,
    pub variances: Vec<f64>,
}

impl BernoulliGaussInputChannel {
    pub fn from_prior(prior: &ChannelPrior) -> Self {
        BernoulliGaussInputChannel { sparsity: prior.sparsity().to_vec(), variances: prior.tap_variances().to_vec() }
    }
}

impl InputChannel for BernoulliGaussInputChannel {
    fn prior_moments(&self, j: usize) -> (C64, f64) {
        (C64::new(0.0, 0.0), self.sparsity[j] * self.variances[j])
    }

    fn moments(&self, j: usize, q_hat: C64, mu_q: f64) -> (C64, f64) {
        in_moments(q_hat, mu_q, self.sparsity[j], self.variances[j])
    }
}

/// Damping used by the receiver's channel estimator. The undamped iteration
/// oscillates on mixture measurements with unknown data symbols.
pub const TURBO_DAMPING: f64 = 0.5;

/// Iteration budgets for [`turbo_decode`].
#[derive(Debug, Clone)]
pub struct TurboConfig {
    /// Full turbo iterations; 0 means pilot/training-only estimation and a single decode.
    pub max_turbo_iters: usize,
    pub siso_iters: usize,
    /// Stop once the fraction of changed data-bit decisions falls below this.
    pub flip_fraction: f64,
    pub rbp: RbpConfig,
}

impl Default for TurboConfig {
    fn default() -> Self {
        TurboConfig {
            max_turbo_iters: 8,
            siso_iters: DEFAULT_SISO_ITERS,
            flip_fraction: 1e-3,
            rbp: RbpConfig { damping: TURBO_DAMPING, ..RbpConfig::default() },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct TurboDiagnostics {
    /// Tap NMSE after the channel estimate of each turbo iteration (needs truth).
    pub nmse: Vec<f64>,
    pub parity_ok: bool,
    /// Changed data-bit decisions relative to the previous iteration.
    pub bit_flips: Vec<usize>,
    pub iterations: usize,
    pub rbp_iterations: Vec<usize>,
}

impl TurboDiagnostics {
    /// CSV rows `turbo_iter,nmse,parity_ok`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("turbo_iter,nmse,parity_ok\n");
        for (t, e) in self.nmse.iter().enumerate() {
            let last = t + 1 == self.nmse.len();
            s.push_str(&format!("{},{e:e},{}\n", t + 1, u8::from(last && self.parity_ok)));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TurboOutput {
    pub info_bits: Vec<u8>,
    pub codeword: Vec<u8>,
    /// Final tap estimate for each OFDM symbol.
    pub taps: Vec<Vec<C64>>,
    pub diagnostics: TurboDiagnostics,
}

/// Everything the receiver knows about one frame.
pub struct Frame<'a> {
    pub observations: &'a [Observation],
    pub layout: &'a FrameLayout,
    pub constellation: &'a Constellation,
    pub code: &'a LdpcCode,
    pub prior: &'a ChannelPrior,
    /// `N x L` mixing matrix (DFT rows).
    pub mixing: &'a ComplexMatrix,
}

impl Frame<'_> {
    fn check(&self) -> Result<()> {
        let n = self.layout.subcarriers();
        let md = self.layout.data_bits();
        if self.layout.bits() != self.constellation.bits() {
            return Err(Error::Dimension("layout and constellation disagree on bits per symbol".into()));
        }
        if self.mixing.rows() != n || self.mixing.cols() != self.prior.len() {
            return Err(Error::Dimension(format!("mixing is {}x{}, expected {n}x{}", self.mixing.rows(), self.mixing.cols(), self.prior.len())));
        }
        if self.observations.is_empty() || self.observations.len() * md != self.code.n() {
            return Err(Error::Dimension(format!(
                "{} symbols of {md} data bits do not fill a length-{} codeword",
                self.observations.len(),
                self.code.n()
            )));
        }
        if self.observations.iter().any(|o| o.y.len() != n) {
            return Err(Error::Dimension(format!("every observation must have {n} subcarriers")));
        }
        Ok(())
    }
}

/// Squared error of `est` against `truth`, normalized by the truth energy
/// summed over all symbols.
fn frame_nmse(est: &[Vec<C64>], truth: &[Vec<C64>]) -> f64 {
    let mut err = 0.0;
    let mut energy = 0.0;
    for (e, t) in est.iter().zip(truth) {
        for (a, b) in e.iter().zip(t) {
            err += (a - b).norm_sqr();
            energy += b.norm_sqr();
        }
    }
    if energy > 0.0 {
        err / energy
    } else {
        f64::NAN
    }
}

/// Channel LLRs for the data bits of one symbol from `(z_hat, mu_z)` per subcarrier.
pub(crate) fn demap_symbol(
    y: &[C64],
    z_hat: &[C64],
    mu_z: &[f64],
    slot_llrs: &[f64],
    layout: &FrameLayout,
    constellation: &Constellation,
    noise_variance: f64,
    out: &mut [f64],
) {
    let m_bits = constellation.bits();
    let mut lik = vec![0.0; constellation.size()];
    let mut ext = vec![0.0; m_bits];
    for i in 0..layout.subcarriers() {
        if layout.is_pilot(i) {
            continue;
        }
        leftward_symbol_likelihood(y[i], z_hat[i], mu_z[i], constellation, noise_variance, &mut lik);
        extrinsic_bit_llrs(constellation, &lik, &slot_llrs[i * m_bits..(i + 1) * m_bits], &mut ext);
        for (m, &e) in ext.iter().enumerate() {
            if let Slot::Data(d) = layout.slot(i, m) {
                out[d] = e;
            }
        }
    }
}

/// Iterative receiver: channel estimation by relaxed BP, soft demapping and
/// LDPC decoding, repeated until the codeword checks, decisions settle, or
/// the budget runs out. `truth` enables per-iteration NMSE.
pub fn turbo_decode(frame: &Frame<'_>, cfg: &TurboConfig, truth: Option<&[Vec<C64>]>) -> Result<TurboOutput> {
    frame.check()?;
    let layout = frame.layout;
    let c = frame.constellation;
    let m_bits = c.bits();
    let n_sub = layout.subcarriers();
    let md = layout.data_bits();
    let input = BernoulliGaussInputChannel::from_prior(frame.prior);
    let mut decoder = SisoDecoder::new(frame.code);

    let mut diag = TurboDiagnostics::default();
    let mut dec_ext = vec![0.0; frame.code.n()];
    let mut channel_llrs = vec![0.0; frame.code.n()];
    let mut taps: Vec<Vec<C64>> = vec![Vec::new(); frame.observations.len()];
    let mut hard_prev: Option<Vec<u8>> = None;
    let mut codeword = vec![0u8; frame.code.n()];

    if cfg.max_turbo_iters == 0 {
        let rows = layout.known_bit_subcarriers();
        let sub_phi = frame.mixing.select_rows(&rows);
        let mut rbp_iters = 0;
        for (t, obs) in frame.observations.iter().enumerate() {
            let slots = layout.slot_llrs(&dec_ext[t * md..(t + 1) * md]);
            let beliefs: Vec<SymbolBelief> = rows.iter().map(|&i| symbol_prior_llr(c, &slots[i * m_bits..(i + 1) * m_bits])).collect();
            let y_sub: Vec<C64> = rows.iter().map(|&i| obs.y[i]).collect();
            let out = MixtureOutputChannel { beliefs, constellation: c, noise_variance: obs.noise_variance };
            let res = rbp_run(&sub_phi, &y_sub, &out, &input, &cfg.rbp)?;
            rbp_iters += res.iterations;
            let mut z_hat = frame.mixing.mul_vec(&res.x_hat);
            let mu_sum: f64 = res.mu_x.iter().sum();
            let mut mu_z = vec![mu_sum; n_sub];
            for (r, &i) in rows.iter().enumerate() {
                z_hat[i] = res.z_hat[r];
                mu_z[i] = res.mu_z[r];
            }
            demap_symbol(&obs.y, &z_hat, &mu_z, &slots, layout, c, obs.noise_variance, &mut channel_llrs[t * md..(t + 1) * md]);
            taps[t] = res.x_hat;
        }
        diag.rbp_iterations.push(rbp_iters);
        if let Some(tr) = truth {
            diag.nmse.push(frame_nmse(&taps, tr));
        }
        let res = decoder.decode(&channel_llrs, cfg.siso_iters)?;
        diag.parity_ok = res.parity_ok;
        codeword = res.hard_bits;
        return Ok(TurboOutput { info_bits: frame.code.extract_info(&codeword), codeword, taps, diagnostics: diag });
    }

    for iter in 0..cfg.max_turbo_iters {
        let mut rbp_iters = 0;
        for (t, obs) in frame.observations.iter().enumerate() {
            let slots = layout.slot_llrs(&dec_ext[t * md..(t + 1) * md]);
            let beliefs: Vec<SymbolBelief> = (0..n_sub).map(|i| symbol_prior_llr(c, &slots[i * m_bits..(i + 1) * m_bits])).collect();
            let out = MixtureOutputChannel { beliefs, constellation: c, noise_variance: obs.noise_variance };
            let res = rbp_run(frame.mixing, &obs.y, &out, &input, &cfg.rbp)?;
            rbp_iters += res.iterations;
            demap_symbol(&obs.y, &res.z_hat, &res.mu_z, &slots, layout, c, obs.noise_variance, &mut channel_llrs[t * md..(t + 1) * md]);
            taps[t] = res.x_hat;
        }
        diag.rbp_iterations.push(rbp_iters);
        if let Some(tr) = truth {
            diag.nmse.push(frame_nmse(&taps, tr));
        }
        let res = decoder.decode(&channel_llrs, cfg.siso_iters)?;
        diag.iterations = iter + 1;
        diag.parity_ok = res.parity_ok;
        let flips = hard_prev.as_ref().map(|h| h.iter().zip(&res.hard_bits).filter(|(a, b)| a != b).count());
        diag.bit_flips.push(flips.unwrap_or(res.hard_bits.len()));
        codeword = res.hard_bits.clone();
        if res.parity_ok {
            break;
        }
        if let Some(f) = flips {
            if (f as f64) < cfg.flip_fraction * codeword.len() as f64 {
                break;
            }
        }
        dec_ext = res.extrinsic;
        hard_prev = Some(res.hard_bits);
    }
    Ok(TurboOutput { info_bits: frame.code.extract_info(&codeword), codeword, taps, diagnostics: diag })
}
