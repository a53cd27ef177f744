//! Irregular LDPC codes: construction, systematic encoding and
//! soft-input/soft-output sum-product decoding.
//!
//! Parity-check matrices mix column weights 2, 3 and 4 (average 3) and are
//! built greedily so the Tanner graph has no length-4 cycles. The encoder is
//! obtained by Gaussian elimination over GF(2); non-pivot columns carry the
//! information bits verbatim.

use std::fmt::Write as _;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::LLR_MAX;

/// Default number of internal decoder iterations.
pub const DEFAULT_SISO_ITERS: usize = 25;

const MAX_BUILD_RETRIES: usize = 50;

/// Binary LDPC code with a systematic encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LdpcCode {
    n: usize,
    /// Variable indices of each check.
    checks: Vec<Vec<usize>>,
    /// Edge ids touching each variable; edge `e` is the `e`-th entry of the
    /// flattened `checks` lists.
    var_edges: Vec<Vec<usize>>,
    edge_var: Vec<usize>,
    check_offsets: Vec<usize>,
    info_positions: Vec<usize>,
    parity_positions: Vec<usize>,
    /// Row `r` gives parity bit `parity_positions[r]` as the XOR of the info
    /// bits selected by the packed mask.
    parity_masks: Vec<Vec<u64>>,
}

impl LdpcCode {
    /// Builds a code from explicit check lists.
    ///
    /// Checks may be linearly dependent; the code dimension is `n - rank(H)`.
    pub fn from_checks(n: usize, checks: Vec<Vec<usize>>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("code length must be positive".into()));
        }
        for c in &checks {
            if c.is_empty() {
                return Err(Error::Domain("empty parity check".into()));
            }
            if c.iter().any(|&v| v >= n) {
                return Err(Error::Domain("check references a variable outside the code".into()));
            }
            let mut s = c.clone();
            s.sort_unstable();
            s.dedup();
            if s.len() != c.len() {
                return Err(Error::Domain("check lists a variable twice".into()));
            }
        }
        let mut var_edges = vec![Vec::new(); n];
        let mut edge_var = Vec::new();
        let mut check_offsets = vec![0];
        for c in &checks {
            for &v in c {
                var_edges[v].push(edge_var.len());
                edge_var.push(v);
            }
            check_offsets.push(edge_var.len());
        }
        let (info_positions, parity_positions, parity_masks) = systematic_encoder(n, &checks);
        Ok(LdpcCode { n, checks, var_edges, edge_var, check_offsets, info_positions, parity_positions, parity_masks })
    }

    /// Codeword length.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Information bits per codeword.
    pub fn k(&self) -> usize {
        self.info_positions.len()
    }

    pub fn rate(&self) -> f64 {
        self.k() as f64 / self.n as f64
    }

    pub fn num_checks(&self) -> usize {
        self.checks.len()
    }

    pub fn checks(&self) -> &[Vec<usize>] {
        &self.checks
    }

    /// Codeword positions that carry the information bits, in order.
    pub fn info_positions(&self) -> &[usize] {
        &self.info_positions
    }

    pub fn column_weights(&self) -> Vec<usize> {
        self.var_edges.iter().map(Vec::len).collect()
    }

    pub fn average_column_weight(&self) -> f64 {
        self.edge_var.len() as f64 / self.n as f64
    }

    /// True when every check is satisfied by `bits`.
    pub fn is_codeword(&self, bits: &[u8]) -> bool {
        bits.len() == self.n && self.checks.iter().all(|c| c.iter().fold(0u8, |a, &v| a ^ bits[v]) == 0)
    }

    /// Number of length-4 cycles (pairs of checks sharing two or more variables).
    pub fn count_four_cycles(&self) -> usize {
        let mut count = 0;
        let mut seen = vec![usize::MAX; self.checks.len()];
        let mut shared = vec![0usize; self.checks.len()];
        for (c, vars) in self.checks.iter().enumerate() {
            for &v in vars {
                for &e in &self.var_edges[v] {
                    let other = self.edge_check(e);
                    if other <= c {
                        continue;
                    }
                    if seen[other] != c {
                        seen[other] = c;
                        shared[other] = 0;
                    }
                    shared[other] += 1;
                    if shared[other] == 2 {
                        count += 1;
                    }
                }
            }
        }
        count
    }

    fn edge_check(&self, e: usize) -> usize {
        self.check_offsets.partition_point(|&o| o <= e) - 1
    }

    /// Systematic encoding of `k` information bits.
    pub fn encode(&self, info: &[u8]) -> Result<Vec<u8>> {
        if info.len() != self.k() {
            return Err(Error::Dimension(format!("expected {} info bits, got {}", self.k(), info.len())));
        }
        let words = self.k().div_ceil(64);
        let mut packed = vec![0u64; words];
        for (i, &b) in info.iter().enumerate() {
            if b & 1 == 1 {
                packed[i / 64] |= 1 << (i % 64);
            }
        }
        let mut cw = vec![0u8; self.n];
        for (&p, &b) in self.info_positions.iter().zip(info) {
            cw[p] = b & 1;
        }
        for (&p, mask) in self.parity_positions.iter().zip(&self.parity_masks) {
            let ones: u32 = mask.iter().zip(&packed).map(|(a, b)| (a & b).count_ones()).sum();
            cw[p] = (ones & 1) as u8;
        }
        Ok(cw)
    }

    /// Information bits read back from a codeword.
    pub fn extract_info(&self, codeword: &[u8]) -> Vec<u8> {
        self.info_positions.iter().map(|&p| codeword[p]).collect()
    }

    /// Text form: first line `n m`, then one `check: var var ...` line per check.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.n, self.checks.len());
        for (r, c) in self.checks.iter().enumerate() {
            let _ = write!(s, "{r}:");
            for v in c {
                let _ = write!(s, " {v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::Config(format!("malformed parity-check text: {msg}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let mut it = header.split_whitespace();
        let n: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("header n"))?;
        let m: usize = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("header m"))?;
        let mut checks = vec![Vec::new(); m];
        for line in lines {
            let (idx, rest) = line.split_once(':').ok_or_else(|| bad("missing ':'"))?;
            let r: usize = idx.trim().parse().map_err(|_| bad("check index"))?;
            if r >= m {
                return Err(bad("check index out of range"));
            }
            checks[r] = rest.split_whitespace().map(|v| v.parse::<usize>().map_err(|_| bad("variable index"))).collect::<Result<_>>()?;
        }
        Self::from_checks(n, checks)
    }
}

/// Reduced row echelon form of H over GF(2), giving the systematic encoder.
fn systematic_encoder(n: usize, checks: &[Vec<usize>]) -> (Vec<usize>, Vec<usize>, Vec<Vec<u64>>) {
    let words = n.div_ceil(64);
    let mut rows: Vec<Vec<u64>> = checks
        .iter()
        .map(|c| {
            let mut r = vec![0u64; words];
            for &v in c {
                r[v / 64] ^= 1 << (v % 64);
            }
            r
        })
        .collect();
    let get = |r: &[u64], c: usize| (r[c / 64] >> (c % 64)) & 1 == 1;

    let mut pivots = Vec::new();
    let mut rank = 0;
    // scanning columns from the right keeps parity bits at the tail when H allows it
    for col in (0..n).rev() {
        if rank == rows.len() {
            break;
        }
        let Some(p) = (rank..rows.len()).find(|&r| get(&rows[r], col)) else {
            continue;
        };
        rows.swap(rank, p);
        let pivot_row = rows[rank].clone();
        for (r, row) in rows.iter_mut().enumerate() {
            if r != rank && get(row, col) {
                for (a, b) in row.iter_mut().zip(&pivot_row) {
                    *a ^= b;
                }
            }
        }
        pivots.push(col);
        rank += 1;
    }
    let mut is_pivot = vec![false; n];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    let info_positions: Vec<usize> = (0..n).filter(|&c| !is_pivot[c]).collect();
    let info_words = info_positions.len().div_ceil(64);
    let masks = (0..rank)
        .map(|r| {
            let mut m = vec![0u64; info_words];
            for (ii, &c) in info_positions.iter().enumerate() {
                if get(&rows[r], c) {
                    m[ii / 64] |= 1 << (ii % 64);
                }
            }
            m
        })
        .collect();
    (info_positions, pivots, masks)
}

/// Column weight profile: quarter weight 2, half weight 3, quarter weight 4.
fn column_weights<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<usize> {
    let n2 = n / 4;
    let n4 = n / 4;
    let mut w: Vec<usize> = (0..n)
        .map(|v| {
            if v < n2 {
                2
            } else if v < n2 + n4 {
                4
            } else {
                3
            }
        })
        .collect();
    w.iter_mut().for_each(|x| *x = (*x).min(m));
    w.shuffle(rng);
    w
}

/// Greedy placement with 4-cycle avoidance. Returns `None` when it gets stuck.
fn place_edges<R: Rng + ?Sized>(n: usize, m: usize, weights: &[usize], rng: &mut R) -> Option<Vec<Vec<usize>>> {
    let mut checks: Vec<Vec<usize>> = vec![Vec::new(); m];
    let mut var_checks: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut blocked = vec![usize::MAX; m];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut candidates = Vec::with_capacity(m);
    for &v in &order {
        for _ in 0..weights[v] {
            // checks reachable in two hops from v would close a 4-cycle
            for &c in &var_checks[v] {
                blocked[c] = v;
                for &u in &checks[c] {
                    for &c2 in &var_checks[u] {
                        blocked[c2] = v;
                    }
                }
            }
            candidates.clear();
            let mut best = usize::MAX;
            for c in 0..m {
                if blocked[c] == v {
                    continue;
                }
                let d = checks[c].len();
                if d < best {
                    best = d;
                    candidates.clear();
                }
                if d == best {
                    candidates.push(c);
                }
            }
            let &c = candidates.choose(rng)?;
            checks[c].push(v);
            var_checks[v].push(c);
        }
    }
    if checks.iter().any(|c| c.is_empty()) {
        return None;
    }
    Some(checks)
}

/// Random irregular LDPC code of length `n` with exactly `k` information bits.
pub fn build_code_k<R: Rng + ?Sized>(n: usize, k: usize, rng: &mut R) -> Result<LdpcCode> {
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("need 0 < k < n, got k={k}, n={n}")));
    }
    let m = n - k;
    for _ in 0..MAX_BUILD_RETRIES {
        let weights = column_weights(n, m, rng);
        let Some(mut checks) = place_edges(n, m, &weights, rng) else {
            continue;
        };
        checks.iter_mut().for_each(|c| c.sort_unstable());
        let code = LdpcCode::from_checks(n, checks)?;
        if code.k() == k {
            return Ok(code);
        }
    }
    Err(Error::Construction(format!("no full-rank 4-cycle-free code with n={n}, k={k} after {MAX_BUILD_RETRIES} attempts")))
}

/// Random irregular LDPC code with `n * rate` information bits (must be integral).
pub fn build_code<R: Rng + ?Sized>(n: usize, rate: f64, rng: &mut R) -> Result<LdpcCode> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Domain(format!("rate must lie in (0, 1), got {rate}")));
    }
    let k = n as f64 * rate;
    if (k - k.round()).abs() > 1e-9 {
        return Err(Error::Domain(format!("n * rate = {k} is not an integer")));
    }
    build_code_k(n, k.round() as usize, rng)
}

/// Result of one SISO decoding call.
#[derive(Debug, Clone, PartialEq)]
pub struct SisoOutput {
    /// `posterior - prior` per coded bit.
    pub extrinsic: Vec<f64>,
    pub posterior: Vec<f64>,
    pub hard_bits: Vec<u8>,
    /// All checks satisfied by `hard_bits` and no bit left undecided.
    pub parity_ok: bool,
    pub iterations: usize,
}

/// Flooding sum-product decoder with the exact tanh check rule.
///
/// Owns message storage, so a decoder can be reused across calls on the
/// same code.
#[derive(Debug, Clone)]
pub struct SisoDecoder<'a> {
    code: &'a LdpcCode,
    v2c: Vec<f64>,
    c2v: Vec<f64>,
    suffix: Vec<f64>,
}

impl<'a> SisoDecoder<'a> {
    pub fn new(code: &'a LdpcCode) -> Self {
        let e = code.edge_var.len();
        SisoDecoder { code, v2c: vec![0.0; e], c2v: vec![0.0; e], suffix: Vec::new() }
    }

    /// Check-node update with the exact tanh rule, evaluated through the
    /// pairwise box-plus form with forward/backward partial combinations.
    fn check_pass(&mut self) {
        let code = self.code;
        for c in 0..code.checks.len() {
            let (lo, hi) = (code.check_offsets[c], code.check_offsets[c + 1]);
            let d = hi - lo;
            let msgs = &self.v2c[lo..hi];
            self.suffix.clear();
            self.suffix.resize(d + 1, f64::INFINITY);
            for t in (0..d).rev() {
                self.suffix[t] = boxplus(self.suffix[t + 1], msgs[t]);
            }
            let mut prefix = f64::INFINITY;
            for t in 0..d {
                self.c2v[lo + t] = boxplus(prefix, self.suffix[t + 1]).clamp(-LLR_MAX, LLR_MAX);
                prefix = boxplus(prefix, msgs[t]);
            }
        }
    }

    fn accumulate(&self, ext: &mut [f64]) {
        for (v, edges) in self.code.var_edges.iter().enumerate() {
            let s: f64 = edges.iter().map(|&e| self.c2v[e]).sum();
            ext[v] = s.clamp(-LLR_MAX, LLR_MAX);
        }
    }

    fn hard_and_check(&self, prior: &[f64], ext: &[f64], hard: &mut [u8]) -> bool {
        let mut decided = true;
        for v in 0..self.code.n {
            let p = prior[v] + ext[v];
            if p == 0.0 {
                decided = false;
            }
            hard[v] = (p < 0.0) as u8;
        }
        decided && self.code.is_codeword(hard)
    }

    /// Decodes with at most `max_iters` flooding iterations.
    ///
    /// If the hard decisions of the priors already form a codeword no
    /// iteration is run; the extrinsic output is then a single check pass
    /// over the priors.
    pub fn decode(&mut self, prior: &[f64], max_iters: usize) -> Result<SisoOutput> {
        self.run(prior, max_iters, true)
    }

    /// Runs exactly `iters` flooding iterations with no parity-based exit,
    /// so the messages can settle to their fixed point.
    pub fn decode_fixed(&mut self, prior: &[f64], iters: usize) -> Result<SisoOutput> {
        self.run(prior, iters, false)
    }

    fn run(&mut self, prior: &[f64], max_iters: usize, early_stop: bool) -> Result<SisoOutput> {
        let code = self.code;
        if prior.len() != code.n {
            return Err(Error::Dimension(format!("expected {} LLRs, got {}", code.n, prior.len())));
        }
        if prior.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numerical("non-finite prior LLR".into()));
        }
        let prior: Vec<f64> = prior.iter().map(|l| l.clamp(-LLR_MAX, LLR_MAX)).collect();
        let mut ext = vec![0.0; code.n];
        let mut hard = vec![0u8; code.n];
        for (e, &v) in code.edge_var.iter().enumerate() {
            self.v2c[e] = prior[v];
        }

        let mut iterations = 0;
        let mut ok = self.hard_and_check(&prior, &ext, &mut hard);
        if ok && early_stop {
            self.check_pass();
            self.accumulate(&mut ext);
        } else {
            while iterations < max_iters {
                self.check_pass();
                self.accumulate(&mut ext);
                iterations += 1;
                ok = self.hard_and_check(&prior, &ext, &mut hard);
                if ok && early_stop {
                    break;
                }
                for (v, edges) in code.var_edges.iter().enumerate() {
                    let total = prior[v] + edges.iter().map(|&e| self.c2v[e]).sum::<f64>();
                    for &e in edges {
                        self.v2c[e] = (total - self.c2v[e]).clamp(-LLR_MAX, LLR_MAX);
                    }
                }
            }
        }
        let posterior = prior.iter().zip(&ext).map(|(p, e)| p + e).collect();
        Ok(SisoOutput { extrinsic: ext, posterior, hard_bits: hard, parity_ok: ok, iterations })
    }
}

/// `2 atanh(tanh(a/2) tanh(b/2))`; `+inf` is the identity element.
#[inline]
fn boxplus(a: f64, b: f64) -> f64 {
    if a == f64::INFINITY {
        return b;
    }
    if b == f64::INFINITY {
        return a;
    }
    let sign = if (a < 0.0) != (b < 0.0) { -1.0 } else { 1.0 };
    sign * a.abs().min(b.abs()) + (-(a + b).abs()).exp().ln_1p() - (-(a - b).abs()).exp().ln_1p()
}

/// One-shot convenience wrapper around [`SisoDecoder`].
pub fn siso_decode(code: &LdpcCode, prior: &[f64], max_iters: usize) -> Result<SisoOutput> {
    SisoDecoder::new(code).decode(prior, max_iters)
}
