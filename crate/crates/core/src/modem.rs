//! Square QAM with per-axis Gray labels, OFDM frame layout, and the
//! sum-product conversions between bit beliefs and symbol beliefs.
//!
//! Bit conventions: a point index `k` *is* its label read MSB first, so bit
//! `m` (0-based) of point `k` is `(k >> (M - 1 - m)) & 1`. The first `M/2`
//! label bits Gray-code the in-phase level and the last `M/2` the quadrature
//! level. Bit 0 (the "MSB") therefore fixes the sign of the real part.
//!
//! Bit beliefs are LLRs `ln(P(0)/P(1))`, saturated at [`LLR_MAX`].

use rand::Rng;

use crate::error::{domain, Error, Result};
use crate::numerics::{ln_1p_exp, log_sum_exp, normalize_log_weights, C64, LLR_MAX};

/// Unit-energy square QAM constellation.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    bits: usize,
    points: Vec<C64>,
}

impl Constellation {
    /// Bits per symbol `M`.
    pub fn bits(&self) -> usize {
        self.bits
    }

    /// Number of points `2^M`.
    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn point(&self, k: usize) -> C64 {
        self.points[k]
    }

    /// Label bit `m` of point `k`.
    #[inline]
    pub fn bit(&self, k: usize, m: usize) -> u8 {
        ((k >> (self.bits - 1 - m)) & 1) as u8
    }

    /// Point index carrying the given label bits.
    pub fn index_of(&self, bits: &[u8]) -> usize {
        debug_assert_eq!(bits.len(), self.bits);
        bits.iter().fold(0usize, |acc, &b| (acc << 1) | b as usize)
    }

    /// Nearest point to `v`.
    pub fn slice(&self, v: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.points.iter().enumerate() {
            let d = (v - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best
    }
}

fn gray_decode(mut g: usize) -> usize {
    let mut b = g;
    while g > 0 {
        g >>= 1;
        b ^= g;
    }
    b
}

/// Square `2^M`-QAM with per-axis Gray mapping, `M` in {2, 4, 6, 8}.
pub fn build_constellation(bits: usize) -> Result<Constellation> {
    if !matches!(bits, 2 | 4 | 6 | 8) {
        return domain(format!("unsupported bits per symbol {bits}; expected 2, 4, 6 or 8"));
    }
    let half = bits / 2;
    let levels = 1usize << half;
    let mask = levels - 1;
    let scale = (3.0 / (2.0 * ((levels * levels) as f64 - 1.0))).sqrt();
    let amp = |g: usize| (2.0 * gray_decode(g) as f64 - (levels as f64 - 1.0)) * scale;
    let points = (0..1usize << bits).map(|k| C64::new(amp(k >> half), amp(k & mask))).collect();
    Ok(Constellation { bits, points })
}

/// Pmf over the constellation points, stored as natural-log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolBelief {
    ln_probs: Vec<f64>,
}

impl SymbolBelief {
    pub fn uniform(size: usize) -> Self {
        SymbolBelief { ln_probs: vec![-(size as f64).ln(); size] }
    }

    /// Indicator on point `k`.
    pub fn certain(size: usize, k: usize) -> Self {
        let mut ln_probs = vec![f64::NEG_INFINITY; size];
        ln_probs[k] = 0.0;
        SymbolBelief { ln_probs }
    }

    /// Normalizes arbitrary non-negative weights.
    pub fn from_weights(w: &[f64]) -> Result<Self> {
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("symbol weights must be finite and non-negative");
        }
        let ln: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        Ok(Self::from_log_weights(&ln))
    }

    /// Normalizes log-weights.
    pub fn from_log_weights(ln_w: &[f64]) -> Self {
        let lse = log_sum_exp(ln_w);
        if !lse.is_finite() {
            return Self::uniform(ln_w.len());
        }
        SymbolBelief { ln_probs: ln_w.iter().map(|l| l - lse).collect() }
    }

    pub fn ln_probs(&self) -> &[f64] {
        &self.ln_probs
    }

    pub fn probs(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.ln_probs.len()];
        normalize_log_weights(&self.ln_probs, &mut p);
        p
    }

    pub fn len(&self) -> usize {
        self.ln_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_probs.is_empty()
    }
}

/// `(ln P(0), ln P(1))` for an LLR.
#[inline]
pub fn llr_to_ln_pmf(llr: f64) -> (f64, f64) {
    (-ln_1p_exp(-llr), -ln_1p_exp(llr))
}

/// LLR of a bit pmf `[P(0), P(1)]`, saturated.
pub fn pmf_to_llr(p: [f64; 2]) -> f64 {
    clamp_llr(p[0].ln() - p[1].ln())
}

/// `[P(0), P(1)]` for an LLR.
pub fn llr_to_pmf(llr: f64) -> [f64; 2] {
    let (a, b) = llr_to_ln_pmf(llr);
    [a.exp(), b.exp()]
}

#[inline]
pub fn clamp_llr(l: f64) -> f64 {
    if l.is_nan() {
        0.0
    } else {
        l.clamp(-LLR_MAX, LLR_MAX)
    }
}

/// LLR pinning a known bit.
#[inline]
pub fn known_bit_llr(bit: u8) -> f64 {
    if bit == 0 {
        LLR_MAX
    } else {
        -LLR_MAX
    }
}

/// Symbol prior implied by independent bit beliefs (LLR form).
pub fn symbol_prior_llr(constellation: &Constellation, bit_llrs: &[f64]) -> SymbolBelief {
    let m_bits = constellation.bits();
    assert_eq!(bit_llrs.len(), m_bits);
    let lp: Vec<(f64, f64)> = bit_llrs.iter().map(|&l| llr_to_ln_pmf(l)).collect();
    let ln_w: Vec<f64> =
        (0..constellation.size()).map(|k| (0..m_bits).map(|m| if constellation.bit(k, m) == 0 { lp[m].0 } else { lp[m].1 }).sum()).collect();
    SymbolBelief::from_log_weights(&ln_w)
}

/// Symbol prior from bit pmfs `[P(0), P(1)]`: `beta_k ∝ prod_m P(bit m = c_m^(k))`.
pub fn symbol_prior(constellation: &Constellation, bit_pmfs: &[[f64; 2]]) -> SymbolBelief {
    assert_eq!(bit_pmfs.len(), constellation.bits());
    let ln_w: Vec<f64> =
        (0..constellation.size()).map(|k| bit_pmfs.iter().enumerate().map(|(m, p)| p[constellation.bit(k, m) as usize].ln()).sum()).collect();
    SymbolBelief::from_log_weights(&ln_w)
}

/// Extrinsic bit LLRs leaving a symbol-mapping node.
///
/// `ln_likelihood[k]` is the (unnormalized) log message arriving from the
/// observation side and `prior_llrs` the bit beliefs arriving from the
/// decoder side. Bit `m` combines the likelihood with the priors of all the
/// *other* bits; this is the sum-product rule with the division by the bit's
/// own message carried out as an exclusion.
pub fn extrinsic_bit_llrs(constellation: &Constellation, ln_likelihood: &[f64], prior_llrs: &[f64], out: &mut [f64]) {
    let m_bits = constellation.bits();
    let size = constellation.size();
    assert_eq!(ln_likelihood.len(), size);
    assert_eq!(prior_llrs.len(), m_bits);
    assert_eq!(out.len(), m_bits);

    let lp: Vec<(f64, f64)> = prior_llrs.iter().map(|&l| llr_to_ln_pmf(clamp_llr(l))).collect();
    let mut acc0 = vec![f64::NEG_INFINITY; m_bits];
    let mut acc1 = vec![f64::NEG_INFINITY; m_bits];
    let mut terms = vec![0.0; m_bits];
    for k in 0..size {
        let base = ln_likelihood[k];
        if base == f64::NEG_INFINITY {
            continue;
        }
        let mut total = base;
        for (m, t) in terms.iter_mut().enumerate() {
            *t = if constellation.bit(k, m) == 0 { lp[m].0 } else { lp[m].1 };
            total += *t;
        }
        for m in 0..m_bits {
            // terms are finite because priors are clamped
            let v = total - terms[m];
            let acc = if constellation.bit(k, m) == 0 { &mut acc0[m] } else { &mut acc1[m] };
            *acc = lse2(*acc, v);
        }
    }
    for m in 0..m_bits {
        out[m] = if acc0[m] == f64::NEG_INFINITY && acc1[m] == f64::NEG_INFINITY { 0.0 } else { clamp_llr(acc0[m] - acc1[m]) };
    }
}

#[inline]
fn lse2(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Pmf form of [`extrinsic_bit_llrs`] for a single bit.
///
/// `likelihood` holds non-negative per-point values (need not be normalized)
/// and `bit_pmfs` the beliefs that formed the symbol prior.
pub fn extrinsic_bit_beliefs(constellation: &Constellation, likelihood: &[f64], bit_pmfs: &[[f64; 2]], m: usize) -> [f64; 2] {
    assert_eq!(likelihood.len(), constellation.size());
    assert_eq!(bit_pmfs.len(), constellation.bits());
    let mut acc = [0.0f64; 2];
    for (k, lik) in likelihood.iter().enumerate() {
        let w: f64 = (0..constellation.bits()).filter(|&mm| mm != m).map(|mm| bit_pmfs[mm][constellation.bit(k, mm) as usize]).product();
        acc[constellation.bit(k, m) as usize] += lik * w;
    }
    let s = acc[0] + acc[1];
    if s > 0.0 && s.is_finite() {
        [acc[0] / s, acc[1] / s]
    } else {
        [0.5, 0.5]
    }
}

/// Role of one `(subcarrier, bit)` slot in an OFDM symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    /// Bit of a pilot subcarrier; the value is known.
    Pilot(u8),
    /// Training bit on a data subcarrier; the value is known.
    Training(u8),
    /// Coded bit; the payload carries the index into the symbol's data bits.
    Data(usize),
}

/// Placement of pilots, training bits and coded bits inside one OFDM symbol.
///
/// The same layout is reused for every OFDM symbol of a codeword.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameLayout {
    subcarriers: usize,
    bits: usize,
    pilot_subcarriers: Vec<usize>,
    pilot_symbols: Vec<usize>,
    training_positions: Vec<(usize, usize)>,
    training_values: Vec<u8>,
    data_positions: Vec<(usize, usize)>,
    slots: Vec<Slot>,
    is_pilot: Vec<bool>,
}

impl FrameLayout {
    pub fn subcarriers(&self) -> usize {
        self.subcarriers
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn pilot_subcarriers(&self) -> &[usize] {
        &self.pilot_subcarriers
    }

    /// Constellation index of each pilot, aligned with [`Self::pilot_subcarriers`].
    pub fn pilot_symbols(&self) -> &[usize] {
        &self.pilot_symbols
    }

    pub fn training_positions(&self) -> &[(usize, usize)] {
        &self.training_positions
    }

    pub fn training_values(&self) -> &[u8] {
        &self.training_values
    }

    /// `(subcarrier, bit)` of each coded bit, in transmission order.
    pub fn data_positions(&self) -> &[(usize, usize)] {
        &self.data_positions
    }

    /// Coded bits per OFDM symbol, `M_d`.
    pub fn data_bits(&self) -> usize {
        self.data_positions.len()
    }

    pub fn is_pilot(&self, i: usize) -> bool {
        self.is_pilot[i]
    }

    pub fn slot(&self, i: usize, m: usize) -> Slot {
        self.slots[i * self.bits + m]
    }

    /// Subcarriers that carry at least one data or training bit.
    pub fn data_subcarriers(&self) -> Vec<usize> {
        (0..self.subcarriers).filter(|&i| !self.is_pilot[i]).collect()
    }

    /// Subcarriers with at least one known bit (pilots and training carriers).
    pub fn known_bit_subcarriers(&self) -> Vec<usize> {
        (0..self.subcarriers).filter(|&i| (0..self.bits).any(|m| !matches!(self.slot(i, m), Slot::Data(_)))).collect()
    }

    /// Constellation index per subcarrier for the given coded bits.
    pub fn map_symbols(&self, constellation: &Constellation, data_bits: &[u8]) -> Result<Vec<usize>> {
        if data_bits.len() != self.data_bits() {
            return Err(Error::Dimension(format!("expected {} data bits, got {}", self.data_bits(), data_bits.len())));
        }
        let mut label = vec![0u8; self.bits];
        Ok((0..self.subcarriers)
            .map(|i| {
                for (m, b) in label.iter_mut().enumerate() {
                    *b = match self.slot(i, m) {
                        Slot::Pilot(v) | Slot::Training(v) => v,
                        Slot::Data(d) => data_bits[d],
                    };
                }
                constellation.index_of(&label)
            })
            .collect())
    }

    /// Full `N x M` LLR array (row-major by subcarrier) with known slots pinned.
    pub fn slot_llrs(&self, data_llrs: &[f64]) -> Vec<f64> {
        assert_eq!(data_llrs.len(), self.data_bits());
        self.slots
            .iter()
            .map(|s| match *s {
                Slot::Pilot(v) | Slot::Training(v) => known_bit_llr(v),
                Slot::Data(d) => clamp_llr(data_llrs[d]),
            })
            .collect()
    }
}

/// Lays out `pilots` uniformly spaced pilot subcarriers (at `floor(r N / pilots)`)
/// and `training` bits on uniformly spaced data subcarriers.
///
/// Training bits go to label bit 0 of each chosen subcarrier; if more than
/// one per data subcarrier is requested the next rounds use bit `M/2`, then
/// bit 1, bit `M/2 + 1`, and so on. Pilot symbols and training values are
/// drawn uniformly from `rng`.
pub fn build_layout<R: Rng + ?Sized>(subcarriers: usize, bits: usize, pilots: usize, training: usize, rng: &mut R) -> Result<FrameLayout> {
    if bits == 0 || subcarriers == 0 {
        return domain("layout needs at least one subcarrier and one bit");
    }
    if pilots > subcarriers {
        return domain(format!("{pilots} pilots exceed {subcarriers} subcarriers"));
    }
    let n_data = subcarriers - pilots;
    if training > n_data * bits {
        return domain(format!("{training} training bits exceed the {} available data slots", n_data * bits));
    }
    if pilots * bits + training >= subcarriers * bits {
        return domain("layout leaves no room for coded bits");
    }

    let pilot_subcarriers: Vec<usize> = (0..pilots).map(|r| r * subcarriers / pilots).collect();
    let mut is_pilot = vec![false; subcarriers];
    for &p in &pilot_subcarriers {
        is_pilot[p] = true;
    }
    let pilot_symbols: Vec<usize> = (0..pilots).map(|_| rng.random_range(0..1usize << bits)).collect();
    let data_carriers: Vec<usize> = (0..subcarriers).filter(|&i| !is_pilot[i]).collect();

    let half = bits / 2;
    let bit_order: Vec<usize> = (0..bits).map(|r| if r % 2 == 0 { r / 2 } else { half + r / 2 }).collect();
    let mut training_positions = Vec::with_capacity(training);
    let mut remaining = training;
    let mut round = 0;
    while remaining > 0 {
        let count = remaining.min(n_data);
        let bit = bit_order[round];
        for r in 0..count {
            training_positions.push((data_carriers[r * n_data / count], bit));
        }
        remaining -= count;
        round += 1;
    }
    training_positions.sort_unstable();
    let training_values: Vec<u8> = (0..training).map(|_| rng.random_range(0..2u8)).collect();

    let mut slots = vec![Slot::Data(0); subcarriers * bits];
    for (r, &i) in pilot_subcarriers.iter().enumerate() {
        for m in 0..bits {
            slots[i * bits + m] = Slot::Pilot(((pilot_symbols[r] >> (bits - 1 - m)) & 1) as u8);
        }
    }
    for (&(i, m), &v) in training_positions.iter().zip(&training_values) {
        slots[i * bits + m] = Slot::Training(v);
    }
    let mut data_positions = Vec::new();
    for i in 0..subcarriers {
        if is_pilot[i] {
            continue;
        }
        for m in 0..bits {
            if !matches!(slots[i * bits + m], Slot::Training(_)) {
                slots[i * bits + m] = Slot::Data(data_positions.len());
                data_positions.push((i, m));
            }
        }
    }

    Ok(FrameLayout { subcarriers, bits, pilot_subcarriers, pilot_symbols, training_positions, training_values, data_positions, slots, is_pilot })
}
