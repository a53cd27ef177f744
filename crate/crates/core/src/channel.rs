//! Sparse Rayleigh block-fading channel and OFDM observations.
//!
//! Taps follow independent Bernoulli-Gaussian priors with an exponential
//! delay-power profile normalized so that the expected channel energy is one.
//! Together with a unit-energy constellation this makes the SNR `1 / noise_variance`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;

use crate::error::{domain, Error, Result};
use crate::numerics::{ComplexMatrix, C64};

/// Per-tap Bernoulli-Gaussian prior.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelPrior {
    sparsity: Vec<f64>,
    tap_variances: Vec<f64>,
    half_power_delay: f64,
}

impl ChannelPrior {
    /// Builds a prior from explicit per-tap activity rates and variances.
    pub fn from_parts(sparsity: Vec<f64>, tap_variances: Vec<f64>, half_power_delay: f64) -> Result<Self> {
        if sparsity.len() != tap_variances.len() || sparsity.is_empty() {
            return Err(Error::Dimension("sparsity and variance vectors must have equal non-zero length".into()));
        }
        if sparsity.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return domain("sparsity rates must lie in [0, 1]");
        }
        if tap_variances.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("tap variances must be finite and non-negative");
        }
        Ok(ChannelPrior { sparsity, tap_variances, half_power_delay })
    }

    pub fn len(&self) -> usize {
        self.sparsity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sparsity.is_empty()
    }

    /// Probability that tap `j` is active.
    pub fn sparsity(&self) -> &[f64] {
        &self.sparsity
    }

    /// Variance of tap `j` given that it is active.
    pub fn tap_variances(&self) -> &[f64] {
        &self.tap_variances
    }

    pub fn half_power_delay(&self) -> f64 {
        self.half_power_delay
    }

    /// Unconditional tap variances `lambda_j mu_j`.
    pub fn prior_variances(&self) -> Vec<f64> {
        self.sparsity.iter().zip(&self.tap_variances).map(|(l, m)| l * m).collect()
    }

    /// Expected number of active taps.
    pub fn expected_support(&self) -> f64 {
        self.sparsity.iter().sum()
    }

    /// Expected channel energy; one for priors made by [`build_prior`].
    pub fn expected_energy(&self) -> f64 {
        self.prior_variances().iter().sum()
    }
}

/// Exponential delay-power profile with uniform sparsity rate.
///
/// `half_power_delay` is measured in taps and may be `f64::INFINITY` for a
/// flat profile.
pub fn build_prior(len: usize, sparsity: f64, half_power_delay: f64) -> Result<ChannelPrior> {
    if len == 0 {
        return domain("channel length must be at least 1");
    }
    if !(sparsity > 0.0 && sparsity <= 1.0) {
        return domain(format!("sparsity rate must lie in (0, 1], got {sparsity}"));
    }
    if !(half_power_delay > 0.0) {
        return domain(format!("half-power delay must be positive, got {half_power_delay}"));
    }
    let profile: Vec<f64> = (0..len).map(|j| (-(j as f64) / half_power_delay).exp2()).collect();
    let norm: f64 = profile.iter().map(|p| sparsity * p).sum();
    let tap_variances = profile.iter().map(|p| p / norm).collect();
    ChannelPrior::from_parts(vec![sparsity; len], tap_variances, half_power_delay)
}

/// One draw of the tap vector.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseChannelRealization {
    pub taps: Vec<C64>,
    /// Indices of the non-zero taps, ascending.
    pub support: Vec<usize>,
}

impl SparseChannelRealization {
    pub fn energy(&self) -> f64 {
        crate::numerics::norm_sqr(&self.taps)
    }
}

/// Draws `CN(0, var)`.
pub fn sample_cgauss<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

pub fn sample_channel<R: Rng + ?Sized>(prior: &ChannelPrior, rng: &mut R) -> SparseChannelRealization {
    let mut taps = vec![C64::new(0.0, 0.0); prior.len()];
    let mut support = Vec::new();
    for (j, tap) in taps.iter_mut().enumerate() {
        // both draws are always consumed so the stream layout is independent of the outcome
        let u: f64 = rng.random();
        let g = sample_cgauss(rng, prior.tap_variances[j]);
        if u < prior.sparsity[j] {
            *tap = g;
            support.push(j);
        }
    }
    SparseChannelRealization { taps, support }
}

/// First `cols` columns of the `n`-point DFT matrix, restricted to `rows`.
pub fn dft_matrix(n: usize, rows: &[usize], cols: usize) -> ComplexMatrix {
    ComplexMatrix::from_fn(rows.len(), cols, |r, j| {
        let i = rows[r];
        // reduce the exponent mod n to keep the phase accurate for large n
        let k = ((i as u128 * j as u128) % n as u128) as f64;
        C64::from_polar(1.0, -2.0 * PI * k / n as f64)
    })
}

/// Subcarrier gains `z_i = sum_j exp(-2 pi sqrt(-1) i j / n) x_j` by direct summation.
pub fn subcarrier_gains(taps: &[C64], n: usize) -> Result<Vec<C64>> {
    if taps.len() > n {
        return domain(format!("channel length {} exceeds subcarrier count {n}", taps.len()));
    }
    let rows: Vec<usize> = (0..n).collect();
    Ok(dft_matrix(n, &rows, taps.len()).mul_vec(taps))
}

/// Same as [`subcarrier_gains`] via a zero-padded FFT.
pub fn subcarrier_gains_fft(taps: &[C64], n: usize) -> Result<Vec<C64>> {
    if taps.len() > n {
        return domain(format!("channel length {} exceeds subcarrier count {n}", taps.len()));
    }
    let mut buf = vec![C64::new(0.0, 0.0); n];
    buf[..taps.len()].copy_from_slice(taps);
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    Ok(buf)
}

/// Received OFDM symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<C64>,
    pub noise_variance: f64,
}

/// `y_i = s_i z_i + v_i` with `v_i ~ CN(0, noise_variance)`.
pub fn observe<R: Rng + ?Sized>(symbols: &[C64], gains: &[C64], noise_variance: f64, rng: &mut R) -> Result<Observation> {
    let noise: Vec<C64> = (0..symbols.len()).map(|_| sample_cgauss(rng, 1.0)).collect();
    observe_with_noise(symbols, gains, &noise, noise_variance)
}

/// Like [`observe`], scaling a pre-drawn unit-variance noise vector.
///
/// Reusing the same unit noise across SNR points gives common random numbers.
pub fn observe_with_noise(symbols: &[C64], gains: &[C64], unit_noise: &[C64], noise_variance: f64) -> Result<Observation> {
    if symbols.len() != gains.len() || symbols.len() != unit_noise.len() {
        return Err(Error::Dimension("symbols, gains and noise must have equal length".into()));
    }
    if !(noise_variance >= 0.0) {
        return domain("noise variance must be non-negative");
    }
    let sd = noise_variance.sqrt();
    let y = symbols.iter().zip(gains).zip(unit_noise).map(|((s, z), w)| s * z + w * sd).collect();
    Ok(Observation { y, noise_variance })
}

/// Noise variance for an SNR given in dB.
pub fn noise_variance_for_snr_db(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}
