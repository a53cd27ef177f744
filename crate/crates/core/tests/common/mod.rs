//! Randomized invariant checks shared by the property and acceptance targets.
//!
//! Each `case_*` function draws one random instance from `rng` and returns a
//! description of the violation, if any.
#![allow(dead_code, clippy::needless_range_loop)]

use std::path::Path;

use jced::baselines::{estimate_taps, genie_mmse_estimate, lasso_objective, lasso_solve, lmmse_estimate, EstimatorKind, LassoConfig, PilotSystem};
use jced::channel::{
    build_prior, dft_matrix, noise_variance_for_snr_db, observe_with_noise, sample_cgauss, sample_channel, subcarrier_gains, subcarrier_gains_fft,
};
use jced::harness::{run_experiment, to_csv, Experiment, Receiver, SystemConfig};
use jced::jced::{in_moments, out_moments, turbo_decode, BernoulliGaussInputChannel, Frame, MixtureOutputChannel, TurboConfig};
use jced::ldpc::{build_code_k, LdpcCode, SisoDecoder};
use jced::modem::{
    build_constellation, build_layout, extrinsic_bit_beliefs, extrinsic_bit_llrs, known_bit_llr, llr_to_pmf, pmf_to_llr, symbol_prior,
    symbol_prior_llr, Slot, SymbolBelief,
};
use jced::numerics::{cgauss_density, gauss_product, ComplexGaussian, ComplexMatrix};
use jced::oracle::{exact_small_posterior, quad_out_moments, QuadratureGrid};
use jced::rbp::{rbp_init, rbp_iterate, rbp_run, AwgnOutput, GaussianInput, RbpConfig, VariancePath};
use jced::rng::substream;
use jced::C64;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub type CaseResult = Result<(), String>;

/// Tally of one invariant over many random cases.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub cases: usize,
    pub failures: usize,
    pub first_failure: Option<String>,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.failures == 0
    }

    pub fn line(&self) -> String {
        match &self.first_failure {
            None => format!("{}: {}/{} cases hold", self.name, self.cases, self.cases),
            Some(f) => format!("{}: {} of {} cases violate it, first: {f}", self.name, self.failures, self.cases),
        }
    }
}

pub fn run_cases(name: &'static str, cases: usize, seed: u64, f: impl Fn(&mut ChaCha8Rng) -> CaseResult) -> Check {
    let mut failures = 0;
    let mut first_failure = None;
    for c in 0..cases {
        let mut rng = substream(seed, &[0xC4EC, c as u64]);
        if let Err(e) = f(&mut rng) {
            failures += 1;
            first_failure.get_or_insert(format!("case {c}: {e}"));
        }
    }
    Check { name, cases, failures, first_failure }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> CaseResult {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn rand_c(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    C64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn unit_phase(rng: &mut ChaCha8Rng) -> C64 {
    C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn vec_rel(a: &[C64], b: &[C64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum();
    let e: f64 = b.iter().map(|q| q.norm_sqr()).sum();
    (d / e.max(f64::MIN_POSITIVE)).sqrt()
}

// ---- numerics ----

pub fn case_gauss_product(rng: &mut ChaCha8Rng) -> CaseResult {
    let g1 = ComplexGaussian::new(rand_c(rng, 3.0), log_uniform(rng, 1e-3, 10.0)).unwrap();
    let g2 = ComplexGaussian::new(rand_c(rng, 3.0), log_uniform(rng, 1e-3, 10.0)).unwrap();
    let (g, scale) = gauss_product(&g1, &g2).map_err(|e| e.to_string())?;
    let x = g.mean + rand_c(rng, 2.0 * g.variance.sqrt());
    // compared in logs: far-apart means push both sides below the normal range
    let lhs = g1.ln_density(x) + g2.ln_density(x);
    if !scale.is_normal() {
        let true_ln_scale = lhs - g.ln_density(x);
        return ensure(true_ln_scale < f64::MIN_POSITIVE.ln() + 1e-9, || format!("scale {scale:e} but ln scale is {true_ln_scale}"));
    }
    let rhs = scale.ln() + g.ln_density(x);
    ensure((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), || format!("ln {lhs} vs {rhs}"))
}

pub fn case_density_integrates(rng: &mut ChaCha8Rng) -> CaseResult {
    let mean = rand_c(rng, 5.0);
    let var = log_uniform(rng, 1e-4, 1e2);
    let half = 6.0 * (var / 2.0).sqrt();
    let n = 120;
    let h = 2.0 * half / n as f64;
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            let x = mean + C64::new(-half + (a as f64 + 0.5) * h, -half + (b as f64 + 0.5) * h);
            total += cgauss_density(x, mean, var).map_err(|e| e.to_string())? * h * h;
        }
    }
    ensure((total - 1.0).abs() <= 1e-6, || format!("integral {total}"))
}

// ---- channel ----

/// Monte Carlo tap energy for `priors` random priors, `draws` each.
pub fn energy_preservation(priors: usize, draws: usize, seed: u64) -> Check {
    run_cases("channel energy averages to one", priors, seed, |rng| {
        let l = rng.random_range(8..=64);
        let lambda = rng.random_range(0.1..=1.0);
        let prior = build_prior(l, lambda, rng.random_range(1.0..l as f64)).unwrap();
        ensure((prior.expected_energy() - 1.0).abs() <= 1e-12, || format!("expected energy {}", prior.expected_energy()))?;
        let mean = (0..draws).map(|_| sample_channel(&prior, rng).energy()).sum::<f64>() / draws as f64;
        ensure((mean - 1.0).abs() <= 0.03, || format!("L={l} lambda={lambda:.3}: empirical energy {mean:.4}"))
    })
}

pub fn case_gains_linear(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = rng.random_range(2..=128);
    let l = rng.random_range(1..=n);
    let x1: Vec<C64> = (0..l).map(|_| rand_c(rng, 1.0)).collect();
    let x2: Vec<C64> = (0..l).map(|_| rand_c(rng, 1.0)).collect();
    let a = rand_c(rng, 2.0);
    let mix: Vec<C64> = x1.iter().zip(&x2).map(|(p, q)| a * p + q).collect();
    let g = subcarrier_gains(&mix, n).unwrap();
    let g1 = subcarrier_gains(&x1, n).unwrap();
    let g2 = subcarrier_gains(&x2, n).unwrap();
    let want: Vec<C64> = g1.iter().zip(&g2).map(|(p, q)| a * p + q).collect();
    let scale = want.iter().map(|v| v.norm()).fold(1.0, f64::max);
    let err = g.iter().zip(&want).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale;
    ensure(err <= 1e-12, || format!("linearity error {err:e} at n={n}"))?;
    let f = subcarrier_gains_fft(&mix, n).unwrap();
    let ferr = g.iter().zip(&f).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max) / scale;
    ensure(ferr <= 1e-12, || format!("fft disagrees by {ferr:e}"))
}

// ---- modem ----

fn random_pmfs(rng: &mut ChaCha8Rng, m: usize) -> Vec<[f64; 2]> {
    (0..m)
        .map(|_| {
            let p: f64 = rng.random_range(0.01..0.99);
            [p, 1.0 - p]
        })
        .collect()
}

pub fn case_bit_round_trip(rng: &mut ChaCha8Rng) -> CaseResult {
    let m = 2 * rng.random_range(1..=4);
    let c = build_constellation(m).unwrap();
    let pmfs = random_pmfs(rng, m);
    let beta = symbol_prior(&c, &pmfs).probs();
    let uniform_bits = vec![[0.5, 0.5]; m];
    let flat = vec![1.0; c.size()];
    for b in 0..m {
        // marginalizing the symbol prior recovers each bit pmf
        let back = extrinsic_bit_beliefs(&c, &beta, &uniform_bits, b);
        ensure((back[0] - pmfs[b][0]).abs() <= 1e-12 && (back[1] - pmfs[b][1]).abs() <= 1e-12, || format!("bit {b}: {back:?} vs {:?}", pmfs[b]))?;
        // an uninformative likelihood carries no extrinsic information
        let ext = extrinsic_bit_beliefs(&c, &flat, &pmfs, b);
        ensure((ext[0] - 0.5).abs() <= 1e-12, || format!("bit {b}: extrinsic {ext:?} from a flat likelihood"))?;
    }
    Ok(())
}

fn normalized(p: &[f64]) -> bool {
    p.iter().all(|v| *v >= 0.0 && v.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

pub fn case_pmfs_normalized(rng: &mut ChaCha8Rng) -> CaseResult {
    let m = 2 * rng.random_range(1..=4);
    let c = build_constellation(m).unwrap();
    let llrs: Vec<f64> = (0..m)
        .map(|_| match rng.random_range(0..4) {
            0 => 0.0,
            1 => rng.random_range(-1e3..1e3),
            _ => rng.random_range(-8.0..8.0),
        })
        .collect();
    for &l in &llrs {
        let p = llr_to_pmf(l);
        ensure(normalized(&p), || format!("llr {l} -> {p:?}"))?;
        if l.abs() < 20.0 {
            ensure((pmf_to_llr(p) - l).abs() <= 1e-9, || format!("llr {l} does not survive a round trip"))?;
        }
    }
    let belief = symbol_prior_llr(&c, &llrs);
    ensure(normalized(&belief.probs()), || "symbol prior not normalized".to_string())?;
    let ln_lik: Vec<f64> = (0..c.size()).map(|_| rng.random_range(-50.0..0.0)).collect();
    let mut out = vec![0.0; m];
    extrinsic_bit_llrs(&c, &ln_lik, &llrs, &mut out);
    for &o in &out {
        ensure(o.is_finite() && normalized(&llr_to_pmf(o)), || format!("extrinsic llr {o}"))?;
    }
    let w: Vec<f64> = (0..c.size()).map(|_| rng.random_range(-800.0..10.0)).collect();
    ensure(normalized(&SymbolBelief::from_log_weights(&w).probs()), || "log weights not normalized".to_string())
}

// ---- ldpc ----

pub fn case_extrinsic_identity(rng: &mut ChaCha8Rng) -> CaseResult {
    let code = build_code_k(48, 24, rng).map_err(|e| e.to_string())?;
    let prior: Vec<f64> = (0..48).map(|_| rng.random_range(-20.0..20.0)).collect();
    let out = SisoDecoder::new(&code).decode(&prior, rng.random_range(1..30)).map_err(|e| e.to_string())?;
    for i in 0..48 {
        let d = (out.extrinsic[i] + prior[i] - out.posterior[i]).abs();
        ensure(d <= 1e-12 * out.posterior[i].abs().max(1.0), || format!("bit {i}: ext + prior - post = {d:e}"))?;
    }
    Ok(())
}

pub fn case_noiseless_no_flips(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = 2 * rng.random_range(24..=48);
    let code = build_code_k(n, n / 2, rng).map_err(|e| e.to_string())?;
    let info: Vec<u8> = (0..code.k()).map(|_| rng.random_range(0..2u8)).collect();
    let cw = code.encode(&info).map_err(|e| e.to_string())?;
    let llr: Vec<f64> = cw.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 } * rng.random_range(0.5..10.0)).collect();
    let out = SisoDecoder::new(&code).decode(&llr, 25).map_err(|e| e.to_string())?;
    ensure(out.hard_bits == cw && out.parity_ok, || "noiseless codeword was altered".to_string())
}

/// Exact bitwise posterior LLRs by enumerating every codeword.
fn exact_map_llrs(code: &LdpcCode, prior: &[f64]) -> Vec<f64> {
    let k = code.k();
    let n = code.n();
    let mut logs: Vec<(Vec<u8>, f64)> = Vec::with_capacity(1 << k);
    for w in 0..(1u32 << k) {
        let info: Vec<u8> = (0..k).map(|b| ((w >> b) & 1) as u8).collect();
        let cw = code.encode(&info).unwrap();
        let ll: f64 = cw.iter().zip(prior).map(|(&b, &l)| if b == 0 { l / 2.0 } else { -l / 2.0 }).sum();
        logs.push((cw, ll));
    }
    let top = logs.iter().map(|v| v.1).fold(f64::NEG_INFINITY, f64::max);
    (0..n)
        .map(|i| {
            let (mut p0, mut p1) = (0.0, 0.0);
            for (cw, ll) in &logs {
                let w = (ll - top).exp();
                if cw[i] == 0 {
                    p0 += w;
                } else {
                    p1 += w;
                }
            }
            (p0 / p1).ln()
        })
        .collect()
}

pub fn case_tree_matches_map(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = rng.random_range(5..=12);
    let mut checks = Vec::new();
    let mut next = 1;
    while next < n {
        let hub = rng.random_range(0..next);
        let fresh = rng.random_range(1..=2).min(n - next);
        let mut c = vec![hub];
        c.extend(next..next + fresh);
        next += fresh;
        checks.push(c);
    }
    let code = LdpcCode::from_checks(n, checks).map_err(|e| e.to_string())?;
    let prior: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let out = SisoDecoder::new(&code).decode_fixed(&prior, 2 * n).map_err(|e| e.to_string())?;
    let exact = exact_map_llrs(&code, &prior);
    for i in 0..n {
        ensure((out.posterior[i] - exact[i]).abs() <= 1e-9, || format!("bit {i}: {} vs {}", out.posterior[i], exact[i]))?;
    }
    Ok(())
}

/// Fraction of loopy random trials whose hard decisions equal the bitwise MAP decisions.
pub fn loopy_map_agreement(trials: usize, seed: u64) -> (usize, usize) {
    let mut agree = 0;
    for t in 0..trials {
        let mut rng = substream(seed, &[0x100F, t as u64]);
        let n = 12;
        let checks: Vec<Vec<usize>> = (0..6)
            .map(|_| {
                let w = rng.random_range(3..=4);
                let mut all: Vec<usize> = (0..n).collect();
                for i in 0..w {
                    let j = rng.random_range(i..n);
                    all.swap(i, j);
                }
                let mut c = all[..w].to_vec();
                c.sort_unstable();
                c
            })
            .collect();
        let code = LdpcCode::from_checks(n, checks).unwrap();
        let info: Vec<u8> = (0..code.k()).map(|_| rng.random_range(0..2u8)).collect();
        let cw = code.encode(&info).unwrap();
        let sigma2: f64 = 0.6;
        let prior: Vec<f64> = cw
            .iter()
            .map(|&b| {
                let x = if b == 0 { 1.0 } else { -1.0 };
                let y = x + sigma2.sqrt() * rand_distr_normal(&mut rng);
                2.0 * y / sigma2
            })
            .collect();
        let out = SisoDecoder::new(&code).decode(&prior, 50).unwrap();
        let exact = exact_map_llrs(&code, &prior);
        let map_bits: Vec<u8> = exact.iter().map(|&l| u8::from(l < 0.0)).collect();
        if map_bits == out.hard_bits {
            agree += 1;
        }
    }
    (agree, trials)
}

fn rand_distr_normal(rng: &mut ChaCha8Rng) -> f64 {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

// ---- rbp ----

/// Random `rows x cols` unit-modulus system with Gaussian taps.
pub fn gaussian_instance(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> (ComplexMatrix, Vec<C64>, Vec<f64>, Vec<C64>, f64) {
    let phi = dft_matrix(rows, &(0..rows).collect::<Vec<_>>(), cols);
    let s: Vec<C64> = (0..rows).map(|_| unit_phase(rng)).collect();
    let prior: Vec<f64> = (0..cols).map(|_| rng.random_range(0.05..0.3)).collect();
    let x: Vec<C64> = prior.iter().map(|&p| sample_cgauss(rng, p)).collect();
    let v = log_uniform(rng, 1e-3, 0.3);
    let z = phi.mul_vec(&x);
    let y: Vec<C64> = (0..rows).map(|i| s[i] * z[i] + sample_cgauss(rng, v)).collect();
    (phi, s, prior, y, v)
}

/// Closed-form LMMSE via dense algebra.
pub fn lmmse_reference(phi: &ComplexMatrix, s: &[C64], prior: &[f64], v: f64, y: &[C64]) -> Vec<C64> {
    let (n, l) = (phi.rows(), phi.cols());
    let a = DMatrix::from_fn(n, l, |i, j| s[i] * phi.get(i, j));
    let c = DMatrix::from_diagonal(&DVector::from_iterator(l, prior.iter().map(|&p| C64::new(p, 0.0))));
    let g = &a * &c * a.adjoint() + DMatrix::identity(n, n) * C64::new(v, 0.0);
    let x = &c * a.adjoint() * g.try_inverse().expect("invertible") * DVector::from_column_slice(y);
    x.iter().copied().collect()
}

/// Relative error of the converged Gaussian-channel RBP estimate against LMMSE.
pub fn rbp_lmmse_error(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> f64 {
    let (phi, s, prior, y, v) = gaussian_instance(rng, rows, cols);
    let out = AwgnOutput { gains: s.clone(), noise_variance: v };
    let inp = GaussianInput { variances: prior.clone() };
    let cfg = RbpConfig { max_iters: 2000, tol: 1e-14, ..RbpConfig::default() };
    let res = rbp_run(&phi, &y, &out, &inp, &cfg).expect("rbp runs");
    vec_rel(&res.x_hat, &lmmse_reference(&phi, &s, &prior, v, &y))
}

pub fn case_rbp_lmmse(rng: &mut ChaCha8Rng) -> CaseResult {
    let err = rbp_lmmse_error(rng, 16, 8);
    ensure(err <= 1e-3, || format!("relative error {err:.3e}"))
}

pub fn case_rbp_multiply_count(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = rng.random_range(4..=96);
    let l = rng.random_range(1..=n);
    let (phi, s, prior, y, v) = gaussian_instance(rng, n, l);
    let out = AwgnOutput { gains: s, noise_variance: v };
    let inp = GaussianInput { variances: prior };
    let mut st = rbp_init(&inp, n, l);
    rbp_iterate(&mut st, &phi, &y, &out, &inp, &RbpConfig::default()).map_err(|e| e.to_string())?;
    let nl = (n * l) as u64;
    let count = st.last_multiplies;
    ensure(count * 2 >= 5 * nl && count <= 10 * nl, || format!("{count} multiplies for N={n}, L={l}"))
}

pub fn case_rbp_positive_variances(rng: &mut ChaCha8Rng) -> CaseResult {
    let bits = 2 * rng.random_range(1..=3);
    let c = build_constellation(bits).unwrap();
    let big_n = rng.random_range(8..=64);
    let l = rng.random_range(2..=big_n / 2);
    let prior = build_prior(l, rng.random_range(0.1..=1.0), rng.random_range(1.0..=l as f64)).unwrap();
    let phi = dft_matrix(big_n, &(0..big_n).collect::<Vec<_>>(), l);
    let ch = sample_channel(&prior, rng);
    let z = phi.mul_vec(&ch.taps);
    let v = log_uniform(rng, 1e-4, 1.0);
    let beliefs: Vec<SymbolBelief> = (0..big_n)
        .map(|_| {
            let w: Vec<f64> = (0..c.size()).map(|_| log_uniform(rng, 1e-6, 1.0)).collect();
            SymbolBelief::from_weights(&w).unwrap()
        })
        .collect();
    let y: Vec<C64> = (0..big_n).map(|i| c.point(rng.random_range(0..c.size())) * z[i] + sample_cgauss(rng, v)).collect();
    let out = MixtureOutputChannel { beliefs, constellation: &c, noise_variance: v };
    let inp = BernoulliGaussInputChannel::from_prior(&prior);
    let cfg = RbpConfig { damping: rng.random_range(0.3..=1.0), ..RbpConfig::default() };
    let mut st = rbp_init(&inp, big_n, l);
    for it in 0..20 {
        rbp_iterate(&mut st, &phi, &y, &out, &inp, &cfg).map_err(|e| format!("iteration {it}: {e}"))?;
        let all_pos = |v: &[f64]| v.iter().all(|x| *x > 0.0 && x.is_finite());
        ensure(all_pos(&st.mu_x) && all_pos(&st.mu_z) && all_pos(&st.mu_e) && all_pos(&st.mu_u) && all_pos(&st.mu_q), || {
            format!("non-positive variance after iteration {it}")
        })?;
    }
    Ok(())
}

pub fn case_rbp_scalar_matches_general(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = rng.random_range(4..=32);
    let l = rng.random_range(1..=n);
    let (phi, s, prior, y, v) = gaussian_instance(rng, n, l);
    let out = AwgnOutput { gains: s, noise_variance: v };
    let inp = GaussianInput { variances: prior };
    let run = |path| {
        let cfg = RbpConfig { max_iters: 30, tol: 0.0, variance_path: path, ..RbpConfig::default() };
        rbp_run(&phi, &y, &out, &inp, &cfg).unwrap()
    };
    let a = run(VariancePath::Scalar);
    let b = run(VariancePath::General);
    let dx = vec_rel(&a.x_hat, &b.x_hat);
    let dv = a.mu_x.iter().zip(&b.mu_x).map(|(p, q)| rel(*p, *q)).fold(0.0, f64::max);
    ensure(dx <= 1e-10 && dv <= 1e-10, || format!("mean diff {dx:e}, variance diff {dv:e}"))
}

// ---- jced ----

pub fn case_out_variance_bound(rng: &mut ChaCha8Rng) -> CaseResult {
    let c = build_constellation(2 * rng.random_range(1..=3)).unwrap();
    let w: Vec<f64> = (0..c.size()).map(|_| rng.random_range(0.05..1.0)).collect();
    let belief = SymbolBelief::from_weights(&w).unwrap();
    let mu_z = log_uniform(rng, 1e-3, 2.0);
    let mu_v = log_uniform(rng, 1e-3, 1.0);
    let z_hat = sample_cgauss(rng, 1.0);
    let z = z_hat + sample_cgauss(rng, mu_z);
    let y = c.point(rng.random_range(0..c.size())) * z + sample_cgauss(rng, mu_v);
    let m = out_moments(y, z_hat, mu_z, &belief, &c, mu_v);
    ensure(m.variance <= mu_z + mu_v, || format!("E_out {:.4} > mu_z + mu_v = {:.4}", m.variance, mu_z + mu_v))
}

pub fn case_out_matches_quadrature(rng: &mut ChaCha8Rng) -> CaseResult {
    let c = build_constellation(2 * rng.random_range(1..=3)).unwrap();
    let w: Vec<f64> = (0..c.size()).map(|_| log_uniform(rng, 1e-4, 1.0)).collect();
    let belief = SymbolBelief::from_weights(&w).unwrap();
    let mu_z = log_uniform(rng, 1e-3, 2.0);
    let mu_v = log_uniform(rng, 1e-3, 1.0);
    let z_hat = sample_cgauss(rng, 1.0);
    let y = c.point(rng.random_range(0..c.size())) * (z_hat + sample_cgauss(rng, mu_z)) + sample_cgauss(rng, mu_v);
    let got = out_moments(y, z_hat, mu_z, &belief, &c, mu_v);
    let want = quad_out_moments(y, z_hat, mu_z, &belief.probs(), c.points(), mu_v, QuadratureGrid { radius: 8.0, points: 64 });
    let scale = want.mean.norm().max(want.variance.sqrt());
    let err = ((got.mean - want.mean).norm() / scale).max(rel(got.variance, want.variance));
    ensure(err <= 1e-6, || format!("relative error {err:e}"))
}

pub fn case_in_variance_at_zero(rng: &mut ChaCha8Rng) -> CaseResult {
    let lambda = rng.random_range(1e-3..1.0);
    let mu = log_uniform(rng, 1e-4, 10.0);
    let mu_q = log_uniform(rng, 1e-3, 1e3);
    let (_, e) = in_moments(C64::new(0.0, 0.0), mu_q, lambda, mu);
    ensure((0.0..=1.01 * lambda * mu).contains(&e), || format!("E_in {e:e} vs lambda mu {:e}", lambda * mu))
}

/// Small fixed system for the turbo-loop properties.
pub struct SmallSystem {
    pub exp: Experiment,
}

impl SmallSystem {
    pub fn new(training: usize) -> Self {
        let cfg = SystemConfig {
            subcarriers: 17,
            taps: 4,
            bits: 2,
            pilots: 4,
            training,
            eta: 0.5,
            symbols: 2,
            frames: 1,
            sparsity: 0.5,
            ..SystemConfig::default()
        };
        SmallSystem { exp: Experiment::new(&cfg).unwrap() }
    }
}

pub fn case_zero_turbo_reduction(sys: &SmallSystem, rng: &mut ChaCha8Rng) -> CaseResult {
    let exp = &sys.exp;
    let tx = exp.transmit(rng.random_range(0..1_000_000)).map_err(|e| e.to_string())?;
    let nv = noise_variance_for_snr_db(rng.random_range(0.0..30.0));
    let obs: Vec<_> = (0..exp.cfg.symbols).map(|t| observe_with_noise(&tx.symbols[t], &tx.gains[t], &tx.unit_noise[t], nv).unwrap()).collect();
    let frame =
        Frame { observations: &obs, layout: &exp.layout, constellation: &exp.constellation, code: &exp.code, prior: &exp.prior, mixing: &exp.mixing };
    let cfg = TurboConfig { max_turbo_iters: 0, ..TurboConfig::default() };
    let out = turbo_decode(&frame, &cfg, None).map_err(|e| e.to_string())?;
    let rows = exp.layout.known_bit_subcarriers();
    let sub = exp.mixing.select_rows(&rows);
    let input = BernoulliGaussInputChannel::from_prior(&exp.prior);
    let c = &exp.constellation;
    let slots = exp.layout.slot_llrs(&vec![0.0; exp.layout.data_bits()]);
    let m = c.bits();
    for (t, o) in obs.iter().enumerate() {
        let beliefs = rows.iter().map(|&i| symbol_prior_llr(c, &slots[i * m..(i + 1) * m])).collect();
        let y: Vec<C64> = rows.iter().map(|&i| o.y[i]).collect();
        let oc = MixtureOutputChannel { beliefs, constellation: c, noise_variance: o.noise_variance };
        let res = rbp_run(&sub, &y, &oc, &input, &cfg.rbp).map_err(|e| e.to_string())?;
        let d = res.x_hat.iter().zip(&out.taps[t]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        ensure(d <= 1e-12, || format!("symbol {t}: taps differ by {d:e}"))?;
    }
    Ok(())
}

pub fn case_known_bits_pinned(rng: &mut ChaCha8Rng) -> CaseResult {
    let bits = 2 * rng.random_range(1..=4);
    let n = rng.random_range(4..=64);
    let pilots = rng.random_range(0..n / 2);
    let training = rng.random_range(0..=(n - pilots) * bits / 2);
    let layout = build_layout(n, bits, pilots, training, rng).map_err(|e| e.to_string())?;
    let c = build_constellation(bits).unwrap();
    let data: Vec<f64> =
        (0..layout.data_bits()).map(|_| if rng.random_bool(0.2) { rng.random_range(-1e6..1e6) } else { rng.random_range(-40.0..40.0) }).collect();
    let slots = layout.slot_llrs(&data);
    for i in 0..n {
        let mut known = Vec::new();
        for b in 0..bits {
            match layout.slot(i, b) {
                Slot::Pilot(v) | Slot::Training(v) => {
                    ensure(slots[i * bits + b] == known_bit_llr(v), || format!("slot ({i},{b}) changed"))?;
                    known.push((b, v));
                }
                Slot::Data(_) => {}
            }
        }
        let probs = symbol_prior_llr(&c, &slots[i * bits..(i + 1) * bits]).probs();
        let off: f64 = (0..c.size()).filter(|&k| known.iter().any(|&(b, v)| c.bit(k, b) != v)).map(|k| probs[k]).sum();
        ensure(off <= 1e-9, || format!("subcarrier {i}: {off:e} mass on symbols contradicting known bits"))?;
    }
    Ok(())
}

// ---- baselines ----

pub struct GenieSetup {
    pub phi: ComplexMatrix,
    pub pilots: Vec<usize>,
}

impl GenieSetup {
    pub fn new() -> Self {
        let n = 67;
        GenieSetup { phi: dft_matrix(n, &(0..n).collect::<Vec<_>>(), 16), pilots: (0..16).map(|r| r * n / 16).collect() }
    }
}

pub fn case_bsg_not_worse(g: &GenieSetup, rng: &mut ChaCha8Rng) -> CaseResult {
    let n = g.phi.rows();
    let prior = build_prior(16, 0.25, 4.0).unwrap();
    let ch = sample_channel(&prior, rng);
    if ch.support.is_empty() {
        return Ok(());
    }
    let nv = noise_variance_for_snr_db(rng.random_range(5.0..25.0));
    let s: Vec<C64> = (0..n).map(|_| unit_phase(rng)).collect();
    let z = g.phi.mul_vec(&ch.taps);
    let y: Vec<C64> = (0..n).map(|i| s[i] * z[i] + sample_cgauss(rng, nv)).collect();
    let est = |k| estimate_taps(k, &y, &s, &g.phi, &g.pilots, nv, &prior, &ch).unwrap();
    let err = |x: &[C64]| x.iter().zip(&ch.taps).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / ch.energy();
    let (sg, bsg) = (err(&est(EstimatorKind::SupportGenie)), err(&est(EstimatorKind::BitSupportGenie)));
    ensure(bsg <= sg, || format!("BSG NMSE {bsg:.3e} > SG NMSE {sg:.3e}"))
}

pub fn case_lasso_monotone(rng: &mut ChaCha8Rng) -> CaseResult {
    let m = rng.random_range(4..=24);
    let n = rng.random_range(8..=48);
    let a = ComplexMatrix::from_fn(m, n, |_, _| sample_cgauss(rng, 1.0 / m as f64));
    let y: Vec<C64> = (0..m).map(|_| sample_cgauss(rng, 1.0)).collect();
    let scale = a.adjoint_mul_vec(&y).iter().map(|v| v.norm()).fold(0.0, f64::max);
    let tau = scale * log_uniform(rng, 1e-4, 2.0);
    let res = lasso_solve(&a, &y, tau, &LassoConfig::default()).map_err(|e| e.to_string())?;
    let mut prev = lasso_objective(&a, &y, &vec![C64::new(0.0, 0.0); n], tau);
    for (i, &f) in res.history.iter().enumerate() {
        ensure(f <= prev, || format!("objective rose at iteration {i}: {prev:e} -> {f:e}"))?;
        prev = f;
    }
    Ok(())
}

pub fn case_lmmse_is_full_genie(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = 33;
    let l = rng.random_range(2..=16);
    let phi = dft_matrix(n, &(0..n).collect::<Vec<_>>(), l);
    let prior = build_prior(l, 1.0, rng.random_range(1.0..=l as f64)).unwrap();
    let rows: Vec<usize> = (0..rng.random_range(1..=n)).map(|_| rng.random_range(0..n)).collect();
    let s: Vec<C64> = (0..n).map(|_| unit_phase(rng)).collect();
    let y: Vec<C64> = (0..n).map(|_| sample_cgauss(rng, 1.0)).collect();
    let ps = PilotSystem::from_rows(&y, &s, &phi, &rows, log_uniform(rng, 1e-3, 1.0)).unwrap();
    let a = lmmse_estimate(&ps, &prior).map_err(|e| e.to_string())?;
    let b = genie_mmse_estimate(&ps, &(0..l).collect::<Vec<_>>(), &prior).map_err(|e| e.to_string())?;
    let d = vec_rel(&a, &b);
    ensure(d <= 1e-12, || format!("relative difference {d:e}"))
}

// ---- harness ----

pub fn case_bookkeeping(rng: &mut ChaCha8Rng) -> CaseResult {
    let n = rng.random_range(8..=300);
    let bits = 2 * rng.random_range(1..=4);
    let symbols = rng.random_range(1..=6);
    let cfg = SystemConfig {
        subcarriers: n,
        taps: rng.random_range(1..=n),
        bits,
        pilots: rng.random_range(0..n / 2),
        symbols,
        eta: rng.random_range(1..=(n * symbols)) as f64 / (n * symbols) as f64 * 2.0,
        receivers: vec![Receiver::Jced, Receiver::Bsg],
        ..SystemConfig::default()
    };
    if !cfg.problems().is_empty() {
        return Ok(());
    }
    let k = cfg.info_bits().ok_or("valid config without an integral information count")?;
    ensure((k as f64 - cfg.eta * (n * symbols) as f64).abs() < 1e-9, || format!("k={k} for eta={} N={n} T={symbols}", cfg.eta))?;
    ensure(cfg.codeword_len() == symbols * cfg.data_bits(), || "codeword does not fill the frame".to_string())
}

pub fn case_bookkeeping_built(rng: &mut ChaCha8Rng) -> CaseResult {
    let cfg = SystemConfig {
        subcarriers: 31,
        taps: 8,
        bits: 2 * rng.random_range(1..=3),
        pilots: rng.random_range(0..8),
        eta: 0.5 * rng.random_range(1..=3) as f64,
        symbols: 4,
        ..SystemConfig::default()
    };
    // short high-rate codes without 4-cycles rarely exist
    if !cfg.problems().is_empty() || cfg.rate() > 0.8 {
        return Ok(());
    }
    let exp = Experiment::new(&cfg).map_err(|e| e.to_string())?;
    let per_symbol = exp.code.k() as f64 / cfg.symbols as f64;
    ensure((per_symbol - cfg.eta * cfg.subcarriers as f64).abs() < 1e-9, || format!("{per_symbol} info bits per symbol for eta {}", cfg.eta))?;
    ensure(exp.code.n() == cfg.symbols * exp.layout.data_bits(), || "code length mismatch".to_string())
}

pub fn case_reproducible(rng: &mut ChaCha8Rng) -> CaseResult {
    let cfg = SystemConfig {
        subcarriers: 31,
        taps: 8,
        bits: 2,
        pilots: 6,
        eta: 0.5,
        symbols: 2,
        frames: 2,
        seed: rng.random(),
        snr_db: vec![rng.random_range(0.0..30.0)],
        receivers: Receiver::ALL.to_vec(),
        turbo_iters: 2,
        ..SystemConfig::default()
    };
    let a = to_csv(&run_experiment(&cfg).map_err(|e| e.to_string())?);
    let b = to_csv(&run_experiment(&cfg).map_err(|e| e.to_string())?);
    ensure(a == b, || "reruns differ".to_string())
}

// ---- oracle ----

pub fn case_oracle_deterministic(rng: &mut ChaCha8Rng) -> CaseResult {
    let c = build_constellation(2).unwrap();
    let probs = [0.1, 0.2, 0.3, 0.4];
    let (y, zh) = (rand_c(rng, 1.0), rand_c(rng, 1.0));
    let (mz, mv) = (log_uniform(rng, 1e-2, 1.0), log_uniform(rng, 1e-2, 1.0));
    let g = QuadratureGrid { radius: 8.0, points: 64 };
    let a = quad_out_moments(y, zh, mz, &probs, c.points(), mv, g);
    let b = quad_out_moments(y, zh, mz, &probs, c.points(), mv, g);
    ensure(a == b, || "quadrature not deterministic".to_string())?;
    let mix = DMatrix::from_fn(3, 2, |i, j| C64::from_polar(1.0, (i * j) as f64));
    let yv: Vec<C64> = (0..3).map(|_| rand_c(rng, 1.0)).collect();
    let sp = vec![vec![0.25; 4]; 3];
    let e1 = exact_small_posterior(&yv, &mix, c.points(), &sp, &[0.5, 0.5], &[1.0, 0.5], 0.1).unwrap();
    let e2 = exact_small_posterior(&yv, &mix, c.points(), &sp, &[0.5, 0.5], &[1.0, 0.5], 0.1).unwrap();
    ensure(e1.mean == e2.mean && e1.variance == e2.variance, || "enumeration not deterministic".to_string())
}

/// The oracle module may depend only on the error type of this crate.
pub fn oracle_is_independent() -> Check {
    let src = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("src/oracle.rs")).unwrap_or_default();
    let bad: Vec<&str> = src.lines().filter(|l| l.trim_start().starts_with("use crate::") && !l.contains("crate::error")).collect();
    Check {
        name: "oracle shares no code with the estimators",
        cases: 1,
        failures: usize::from(!bad.is_empty() || src.is_empty()),
        first_failure: (!bad.is_empty()).then(|| bad.join(" | ")),
    }
}
