//! Experiment configuration and Monte Carlo execution.
//!
//! A configuration is a flat `key = value` text file. Lines starting with `#`
//! are comments. Keys:
//!
//! | key | meaning | default |
//! |---|---|---|
//! | `subcarriers` | N | 257 |
//! | `taps` | L | 64 |
//! | `bits` | bits per QAM symbol | 6 |
//! | `pilots` | pilot subcarriers | 32 |
//! | `training` | training bits per OFDM symbol | 0 |
//! | `training_symbols` | if set, training = bits x this | unset |
//! | `eta` | information bits per channel use | 3 |
//! | `symbols` | OFDM symbols per codeword | 3 |
//! | `frames` | codewords per SNR point | 50 |
//! | `sparsity` | tap activity probability | 0.25 |
//! | `half_power_delay` | delay profile half-power point, taps | taps / 4 |
//! | `snr_db` | comma-separated list, `inf` allowed | 20 |
//! | `receivers` | comma list of jced, ccs, lmmse, sg, bsg | jced |
//! | `turbo_iters` | turbo iterations (0: known-bit estimate only) | 8 |
//! | `rbp_iters` | RBP iterations per turbo iteration | 50 |
//! | `siso_iters` | decoder iterations per call | 25 |
//! | `damping` | RBP damping on tap means and variances | 0.5 |
//! | `seed` | master seed | 1 |
//! | `output` | CSV path | metrics.csv |
//! | `ladder` | outage sweep points, `bits:eta,...` | empty |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{dced_decode, EstimatorKind};
use crate::channel::{
    build_prior, dft_matrix, noise_variance_for_snr_db, observe_with_noise, sample_cgauss, sample_channel, subcarrier_gains_fft, ChannelPrior,
    Observation, SparseChannelRealization,
};
use crate::error::{Error, Result};
use crate::jced::{turbo_decode, Frame, TurboConfig, TURBO_DAMPING};
use crate::ldpc::{build_code_k, LdpcCode, DEFAULT_SISO_ITERS};
use crate::modem::{build_constellation, build_layout, Constellation, FrameLayout};
use crate::numerics::{ComplexMatrix, C64};
use crate::rbp::RbpConfig;
use crate::rng::{purpose, substream};

/// Version tag written in the first CSV line.
pub const CSV_VERSION: &str = "# jced-metrics v1";
pub const CSV_HEADER: &str = "receiver,snr_db,seed,frame,eta,ber,parity_fail,nmse";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Receiver {
    Jced,
    Ccs,
    Lmmse,
    Sg,
    Bsg,
}

impl Receiver {
    pub const ALL: [Receiver; 5] = [Receiver::Jced, Receiver::Ccs, Receiver::Lmmse, Receiver::Sg, Receiver::Bsg];

    pub fn name(self) -> &'static str {
        match self {
            Receiver::Jced => "jced",
            Receiver::Ccs => "ccs",
            Receiver::Lmmse => "lmmse",
            Receiver::Sg => "sg",
            Receiver::Bsg => "bsg",
        }
    }

    fn estimator(self) -> Option<EstimatorKind> {
        match self {
            Receiver::Jced => None,
            Receiver::Ccs => Some(EstimatorKind::Ccs),
            Receiver::Lmmse => Some(EstimatorKind::Lmmse),
            Receiver::Sg => Some(EstimatorKind::SupportGenie),
            Receiver::Bsg => Some(EstimatorKind::BitSupportGenie),
        }
    }

    fn needs_pilots(self) -> bool {
        matches!(self, Receiver::Ccs | Receiver::Lmmse | Receiver::Sg)
    }
}

impl FromStr for Receiver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Receiver::ALL.into_iter().find(|r| r.name() == s.trim()).ok_or_else(|| Error::Config(format!("unknown receiver '{s}'")))
    }
}

/// One operating point of the outage sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub bits: usize,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub subcarriers: usize,
    pub taps: usize,
    pub bits: usize,
    pub pilots: usize,
    pub training: usize,
    /// When set, training bits are `bits * training_symbols`.
    pub training_symbols: Option<usize>,
    pub eta: f64,
    pub symbols: usize,
    pub frames: usize,
    pub sparsity: f64,
    pub half_power_delay: Option<f64>,
    pub snr_db: Vec<f64>,
    pub receivers: Vec<Receiver>,
    pub turbo_iters: usize,
    pub rbp_iters: usize,
    pub siso_iters: usize,
    pub damping: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub ladder: Vec<OperatingPoint>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            subcarriers: 257,
            taps: 64,
            bits: 6,
            pilots: 32,
            training: 0,
            training_symbols: None,
            eta: 3.0,
            symbols: 3,
            frames: 50,
            sparsity: 0.25,
            half_power_delay: None,
            snr_db: vec![20.0],
            receivers: vec![Receiver::Jced],
            turbo_iters: 8,
            rbp_iters: 50,
            siso_iters: DEFAULT_SISO_ITERS,
            damping: TURBO_DAMPING,
            seed: 1,
            output: PathBuf::from("metrics.csv"),
            ladder: Vec::new(),
        }
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse '{s}'"))))
        .collect()
}

fn parse_one<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse::<T>().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

impl SystemConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        match key {
            "subcarriers" => self.subcarriers = parse_one(key, value)?,
            "taps" => self.taps = parse_one(key, value)?,
            "bits" => self.bits = parse_one(key, value)?,
            "pilots" => self.pilots = parse_one(key, value)?,
            "training" => self.training = parse_one(key, value)?,
            "training_symbols" => self.training_symbols = Some(parse_one(key, value)?),
            "eta" => self.eta = parse_one(key, value)?,
            "symbols" => self.symbols = parse_one(key, value)?,
            "frames" => self.frames = parse_one(key, value)?,
            "sparsity" => self.sparsity = parse_one(key, value)?,
            "half_power_delay" => self.half_power_delay = Some(parse_one(key, value)?),
            "snr_db" => self.snr_db = parse_list(key, value)?,
            "receivers" | "receiver" => self.receivers = parse_list(key, value)?,
            "turbo_iters" => self.turbo_iters = parse_one(key, value)?,
            "rbp_iters" => self.rbp_iters = parse_one(key, value)?,
            "siso_iters" => self.siso_iters = parse_one(key, value)?,
            "damping" => self.damping = parse_one(key, value)?,
            "seed" => self.seed = parse_one(key, value)?,
            "output" => self.output = PathBuf::from(value.trim()),
            "ladder" => {
                self.ladder = value
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|p| {
                        let (b, e) = p.split_once(':').ok_or_else(|| Error::Config(format!("ladder: expected bits:eta, got '{p}'")))?;
                        Ok(OperatingPoint { bits: parse_one("ladder", b)?, eta: parse_one("ladder", e)? })
                    })
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Parses the flat text format on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = SystemConfig::default();
        let mut problems = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.split_once('=') {
                Some((k, v)) => {
                    if let Err(e) = cfg.set(k, v) {
                        problems.push(format!("line {}: {e}", no + 1));
                    }
                }
                None => problems.push(format!("line {}: expected key = value", no + 1)),
            }
        }
        if problems.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn training_bits(&self) -> usize {
        self.training_symbols.map_or(self.training, |t| t * self.bits)
    }

    pub fn half_power_delay(&self) -> f64 {
        self.half_power_delay.unwrap_or(self.taps as f64 / 4.0)
    }

    /// Coded bits per OFDM symbol.
    pub fn data_bits(&self) -> usize {
        (self.subcarriers.saturating_sub(self.pilots) * self.bits).saturating_sub(self.training_bits())
    }

    pub fn codeword_len(&self) -> usize {
        self.symbols * self.data_bits()
    }

    /// Information bits per codeword, `eta * N * symbols`, if integral.
    pub fn info_bits(&self) -> Option<usize> {
        let k = self.eta * (self.subcarriers * self.symbols) as f64;
        let r = k.round();
        ((k - r).abs() <= 1e-6 && r >= 1.0).then_some(r as usize)
    }

    pub fn rate(&self) -> f64 {
        self.eta * self.subcarriers as f64 / self.data_bits() as f64
    }

    /// Every problem with the configuration, empty when it is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        if self.subcarriers == 0 || self.taps == 0 {
            p.push("subcarriers and taps must be positive".to_string());
        }
        if self.taps > self.subcarriers {
            p.push(format!("taps ({}) exceed subcarriers ({})", self.taps, self.subcarriers));
        }
        if !(2..=8).contains(&self.bits) || !self.bits.is_multiple_of(2) {
            p.push(format!("bits must be 2, 4, 6 or 8, got {}", self.bits));
        }
        if self.pilots > self.subcarriers {
            p.push("more pilots than subcarriers".to_string());
        }
        if self.training_bits() > self.subcarriers.saturating_sub(self.pilots) * self.bits {
            p.push("training bits exceed the data slots".to_string());
        }
        if self.symbols == 0 || self.frames == 0 {
            p.push("symbols and frames must be positive".to_string());
        }
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            p.push(format!("sparsity must lie in (0, 1], got {}", self.sparsity));
        }
        if self.half_power_delay().is_nan() || self.half_power_delay() <= 0.0 {
            p.push("half_power_delay must be positive".to_string());
        }
        if self.snr_db.is_empty() || self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            p.push("snr_db must list at least one SNR (dB, inf allowed)".to_string());
        }
        if self.receivers.is_empty() {
            p.push("no receiver selected".to_string());
        }
        if self.pilots == 0 && self.receivers.iter().any(|r| r.needs_pilots()) {
            p.push("pilot-based receivers need pilots > 0".to_string());
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            p.push(format!("damping must lie in (0, 1], got {}", self.damping));
        }
        if self.siso_iters == 0 || self.rbp_iters == 0 {
            p.push("siso_iters and rbp_iters must be positive".to_string());
        }
        match self.info_bits() {
            None => {
                p.push(format!("eta * subcarriers * symbols = {} is not a positive integer", self.eta * (self.subcarriers * self.symbols) as f64))
            }
            Some(k) if k >= self.codeword_len() => {
                p.push(format!("{k} information bits do not fit a codeword of {} coded bits", self.codeword_len()))
            }
            _ => {}
        }
        for op in &self.ladder {
            let mut c = self.clone();
            c.bits = op.bits;
            c.eta = op.eta;
            c.ladder.clear();
            for q in c.problems() {
                p.push(format!("ladder point {}:{}: {q}", op.bits, op.eta));
            }
        }
        p
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.problems();
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p.join("; ")))
        }
    }

    fn turbo_config(&self) -> TurboConfig {
        TurboConfig {
            max_turbo_iters: self.turbo_iters,
            siso_iters: self.siso_iters,
            rbp: RbpConfig { max_iters: self.rbp_iters, damping: self.damping, ..RbpConfig::default() },
            ..TurboConfig::default()
        }
    }
}

/// `|est - truth|^2 / |truth|^2`, or `None` for a zero truth.
pub fn nmse(est: &[C64], truth: &[C64]) -> Option<f64> {
    let e: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    (e > 0.0).then(|| est.iter().zip(truth).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>() / e)
}

/// Per-frame result of one receiver at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub receiver: Receiver,
    pub snr_db: f64,
    pub seed: u64,
    pub frame: usize,
    pub eta: f64,
    pub ber: f64,
    pub parity_fail: bool,
    /// Tap NMSE after each channel estimate (one entry for decoupled receivers).
    pub nmse: Vec<f64>,
    /// Not written to the CSV, so reruns compare byte for byte.
    pub runtime: Duration,
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let nmse: Vec<String> = self.nmse.iter().map(|v| format!("{v:.6e}")).collect();
        format!(
            "{},{},{},{},{},{:.6e},{},{}",
            self.receiver.name(),
            self.snr_db,
            self.seed,
            self.frame,
            self.eta,
            self.ber,
            u8::from(self.parity_fail),
            nmse.join(";")
        )
    }

    /// NMSE after turbo iteration `iter` (1-based), or the last one available.
    pub fn nmse_at(&self, iter: usize) -> Option<f64> {
        self.nmse.get(iter.saturating_sub(1)).or(self.nmse.last()).copied()
    }
}

pub fn to_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{CSV_VERSION}");
    let _ = writeln!(s, "{CSV_HEADER}");
    for r in rows {
        let _ = writeln!(s, "{}", r.csv_line());
    }
    s
}

/// Fixed per-configuration objects shared by all frames.
pub struct Experiment {
    pub cfg: SystemConfig,
    pub constellation: Constellation,
    pub layout: FrameLayout,
    pub code: LdpcCode,
    pub prior: ChannelPrior,
    pub mixing: ComplexMatrix,
}

/// One transmitted codeword with its channels and unit-variance noise.
pub struct Transmission {
    pub info: Vec<u8>,
    pub symbols: Vec<Vec<C64>>,
    pub channels: Vec<SparseChannelRealization>,
    pub gains: Vec<Vec<C64>>,
    pub unit_noise: Vec<Vec<C64>>,
}

impl Experiment {
    pub fn new(cfg: &SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let constellation = build_constellation(cfg.bits)?;
        let layout = build_layout(cfg.subcarriers, cfg.bits, cfg.pilots, cfg.training_bits(), &mut substream(cfg.seed, &[purpose::LAYOUT]))?;
        let k = cfg.info_bits().expect("validated");
        let code = build_code_k(cfg.codeword_len(), k, &mut substream(cfg.seed, &[purpose::CODE, cfg.bits as u64, k as u64]))?;
        let prior = build_prior(cfg.taps, cfg.sparsity, cfg.half_power_delay())?;
        let rows: Vec<usize> = (0..cfg.subcarriers).collect();
        let mixing = dft_matrix(cfg.subcarriers, &rows, cfg.taps);
        Ok(Experiment { cfg: cfg.clone(), constellation, layout, code, prior, mixing })
    }

    /// Draws frame `frame`: the same for every SNR point and receiver.
    pub fn transmit(&self, frame: usize) -> Result<Transmission> {
        let cfg = &self.cfg;
        let f = frame as u64;
        let mut rng = substream(cfg.seed, &[purpose::INFO_BITS, f]);
        let info: Vec<u8> = (0..self.code.k()).map(|_| rng.random_range(0..2u8)).collect();
        let coded = self.code.encode(&info)?;
        let md = self.layout.data_bits();
        let mut out = Transmission { info, symbols: Vec::new(), channels: Vec::new(), gains: Vec::new(), unit_noise: Vec::new() };
        for t in 0..cfg.symbols {
            let idx = self.layout.map_symbols(&self.constellation, &coded[t * md..(t + 1) * md])?;
            out.symbols.push(idx.iter().map(|&i| self.constellation.point(i)).collect());
            let ch = sample_channel(&self.prior, &mut substream(cfg.seed, &[purpose::CHANNEL, f, t as u64]));
            out.gains.push(subcarrier_gains_fft(&ch.taps, cfg.subcarriers)?);
            out.channels.push(ch);
            let mut nrng = substream(cfg.seed, &[purpose::NOISE, f, t as u64]);
            out.unit_noise.push((0..cfg.subcarriers).map(|_| sample_cgauss(&mut nrng, 1.0)).collect());
        }
        Ok(out)
    }

    /// Runs `receiver` on frame `tx` at `snr_db`.
    pub fn receive(&self, receiver: Receiver, tx: &Transmission, snr_db: f64, frame: usize) -> Result<MetricsRow> {
        let start = Instant::now();
        let nv = noise_variance_for_snr_db(snr_db);
        let observations: Vec<Observation> =
            (0..self.cfg.symbols).map(|t| observe_with_noise(&tx.symbols[t], &tx.gains[t], &tx.unit_noise[t], nv)).collect::<Result<_>>()?;
        let fr = Frame {
            observations: &observations,
            layout: &self.layout,
            constellation: &self.constellation,
            code: &self.code,
            prior: &self.prior,
            mixing: &self.mixing,
        };
        let truth: Vec<Vec<C64>> = tx.channels.iter().map(|c| c.taps.clone()).collect();
        let (info, parity_ok, nmse) = match receiver.estimator() {
            None => {
                let out = turbo_decode(&fr, &self.cfg.turbo_config(), Some(&truth))?;
                (out.info_bits, out.diagnostics.parity_ok, out.diagnostics.nmse)
            }
            Some(kind) => {
                let out = dced_decode(kind, &fr, &tx.symbols, &tx.channels, self.cfg.siso_iters)?;
                (out.info_bits, out.parity_ok, vec![out.nmse])
            }
        };
        let errors = info.iter().zip(&tx.info).filter(|(a, b)| a != b).count();
        Ok(MetricsRow {
            receiver,
            snr_db,
            seed: self.cfg.seed,
            frame,
            eta: self.cfg.eta,
            ber: errors as f64 / tx.info.len() as f64,
            parity_fail: !parity_ok,
            nmse,
            runtime: start.elapsed(),
        })
    }

    /// All rows for one frame, ordered by SNR then receiver.
    pub fn run_frame(&self, frame: usize) -> Result<Vec<MetricsRow>> {
        let tx = self.transmit(frame)?;
        let mut rows = Vec::with_capacity(self.cfg.snr_db.len() * self.cfg.receivers.len());
        for &snr in &self.cfg.snr_db {
            for &r in &self.cfg.receivers {
                rows.push(self.receive(r, &tx, snr, frame)?);
            }
        }
        Ok(rows)
    }

    /// Every frame, in parallel, merged in (SNR, receiver, frame) order.
    pub fn run(&self) -> Result<Vec<MetricsRow>> {
        let per_frame: Vec<Vec<MetricsRow>> = (0..self.cfg.frames).into_par_iter().map(|f| self.run_frame(f)).collect::<Result<_>>()?;
        let mut rows: Vec<MetricsRow> = per_frame.into_iter().flatten().collect();
        let snr_rank = |s: f64| self.cfg.snr_db.iter().position(|&v| v == s).unwrap_or(usize::MAX);
        let rx_rank = |r: Receiver| self.cfg.receivers.iter().position(|&v| v == r).unwrap_or(usize::MAX);
        rows.sort_by_key(|r| (snr_rank(r.snr_db), rx_rank(r.receiver), r.frame));
        Ok(rows)
    }
}

/// Runs the configured experiment and returns its rows. Writes nothing.
pub fn run_experiment(cfg: &SystemConfig) -> Result<Vec<MetricsRow>> {
    let exp = Experiment::new(cfg)?;
    log::info!("code n={} k={} rate={:.4}", exp.code.n(), exp.code.k(), exp.code.rate());
    exp.run()
}

/// Runs the experiment and writes its CSV to `cfg.output`.
pub fn run_and_write(cfg: &SystemConfig) -> Result<Vec<MetricsRow>> {
    let rows = run_experiment(cfg)?;
    std::fs::write(&cfg.output, to_csv(&rows))?;
    Ok(rows)
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { 0.5 * (values[n / 2 - 1] + values[n / 2]) })
}

/// Aggregate over the frames of one receiver at one SNR.
#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub receiver: Receiver,
    pub snr_db: f64,
    pub frames: usize,
    pub median_ber: f64,
    /// Bit errors over all frames divided by all transmitted information bits.
    pub pooled_ber: f64,
    pub fer: f64,
    /// Median NMSE in dB after the given turbo iteration.
    pub median_nmse_db: f64,
}

pub fn summarize(rows: &[MetricsRow], receiver: Receiver, snr_db: f64, nmse_iter: usize) -> Option<Summary> {
    let sel: Vec<&MetricsRow> = rows.iter().filter(|r| r.receiver == receiver && r.snr_db == snr_db).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    let mut bers: Vec<f64> = sel.iter().map(|r| r.ber).collect();
    let mut nm: Vec<f64> = sel.iter().filter_map(|r| r.nmse_at(nmse_iter)).map(|v| 10.0 * v.log10()).collect();
    Some(Summary {
        receiver,
        snr_db,
        frames: sel.len(),
        median_ber: median(&mut bers).unwrap_or(f64::NAN),
        pooled_ber: sel.iter().map(|r| r.ber).sum::<f64>() / n,
        fer: sel.iter().filter(|r| r.parity_fail).count() as f64 / n,
        median_nmse_db: median(&mut nm).unwrap_or(f64::NAN),
    })
}

/// Whether `receiver` meets `target_ber` (pooled over all frames) at `snr_db`.
///
/// Frames run in chunks; the check stops as soon as the accumulated bit errors
/// already exceed what the target allows, which cannot change the verdict.
pub fn meets_target(exp: &Experiment, receiver: Receiver, snr_db: f64, target_ber: f64) -> Result<bool> {
    let frames = exp.cfg.frames;
    let k = exp.code.k() as f64;
    let allowed = target_ber * k * frames as f64;
    let chunk = rayon::current_num_threads().max(1);
    let mut errors = 0.0;
    let mut next = 0;
    while next < frames {
        let end = (next + chunk).min(frames);
        let bers: Vec<f64> =
            (next..end).into_par_iter().map(|f| exp.receive(receiver, &exp.transmit(f)?, snr_db, f).map(|r| r.ber)).collect::<Result<_>>()?;
        errors += bers.iter().map(|b| b * k).sum::<f64>();
        if errors > allowed {
            return Ok(false);
        }
        next = end;
    }
    Ok(true)
}

/// Largest ladder `eta` meeting `target_ber` at each SNR, for the first configured receiver.
///
/// Returns `(snr_db, eta)` pairs; `eta = 0` when no point meets the target.
/// Points are tried from the largest `eta` down and the first success is kept.
pub fn outage_rate_sweep(cfg: &SystemConfig, target_ber: f64) -> Result<Vec<(f64, f64)>> {
    cfg.validate()?;
    if cfg.ladder.is_empty() {
        return Err(Error::Config("outage sweep needs a ladder".into()));
    }
    let receiver = cfg.receivers[0];
    let mut ladder = cfg.ladder.clone();
    ladder.sort_by(|a, b| b.eta.total_cmp(&a.eta).then(a.bits.cmp(&b.bits)));
    let exps: Vec<Experiment> = ladder
        .iter()
        .map(|op| {
            let mut c = cfg.clone();
            c.bits = op.bits;
            c.eta = op.eta;
            c.receivers = vec![receiver];
            c.ladder.clear();
            Experiment::new(&c)
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cfg.snr_db.len());
    for &snr in &cfg.snr_db {
        let mut best = 0.0;
        for exp in &exps {
            if meets_target(exp, receiver, snr, target_ber)? {
                best = exp.cfg.eta;
                break;
            }
        }
        log::info!("sweep {} at {snr} dB: eta {best}", receiver.name());
        out.push((snr, best));
    }
    Ok(out)
}

/// Least-squares slope of `eta` against `log2(SNR)`.
///
/// Points with `eta = 0` are censored (no ladder rate met the target) and
/// are left out of the fit.
pub fn prelog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.0.is_finite() && p.1 > 0.0).map(|&(s, e)| (s / 10.0 * 10f64.log2(), e)).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Summary table: one line per (receiver, SNR).
pub fn summary_table(cfg: &SystemConfig, rows: &[MetricsRow]) -> BTreeMap<(usize, usize), Summary> {
    let mut out = BTreeMap::new();
    for (s, &snr) in cfg.snr_db.iter().enumerate() {
        for (r, &rx) in cfg.receivers.iter().enumerate() {
            if let Some(v) = summarize(rows, rx, snr, 2) {
                out.insert((s, r), v);
            }
        }
    }
    out
}

/// Outcome of one oracle comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct SelftestReport {
    pub name: &'static str,
    pub cases: usize,
    /// Worst relative error over all cases.
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// Relative tolerance for the moment functions against quadrature.
pub const MOMENT_TOLERANCE: f64 = 1e-6;

/// Mean error relative to the larger of the mean magnitude and the posterior
/// standard deviation; variance error relative to the variance.
fn moment_rel_err(mean: C64, var: f64, reference: &crate::oracle::QuadMoments) -> f64 {
    let scale = reference.mean.norm().max(reference.variance.sqrt());
    let dm = (mean - reference.mean).norm() / scale;
    let dv = (var - reference.variance).abs() / reference.variance;
    dm.max(dv)
}

fn log_uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// `cases` random draws of the measurement-side moments over 4-, 16- and 64-QAM.
pub fn selftest_out_moments(cases: usize, seed: u64) -> Result<SelftestReport> {
    use crate::jced::out_moments;
    use crate::modem::SymbolBelief;
    use crate::oracle::{quad_out_moments, QuadratureGrid};
    let consts = [build_constellation(2)?, build_constellation(4)?, build_constellation(6)?];
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = substream(seed, &[purpose::TEST, 1, case as u64]);
        let c = &consts[case % 3];
        let peaked = rng.random_bool(0.5);
        let w: Vec<f64> = (0..c.size()).map(|_| if peaked { log_uniform(&mut rng, 1e-6, 1.0) } else { rng.random_range(0.05..1.0) }).collect();
        let belief = SymbolBelief::from_weights(&w)?;
        let probs = belief.probs();
        let mu_z = log_uniform(&mut rng, 1e-3, 2.0);
        let mu_v = log_uniform(&mut rng, 1e-3, 1.0);
        let z_hat = sample_cgauss(&mut rng, 1.0);
        let z = z_hat + sample_cgauss(&mut rng, mu_z);
        let k = rng.random_range(0..c.size());
        let y = c.point(k) * z + sample_cgauss(&mut rng, mu_v);
        let got = out_moments(y, z_hat, mu_z, &belief, c, mu_v);
        let want = quad_out_moments(y, z_hat, mu_z, &probs, c.points(), mu_v, QuadratureGrid::default());
        worst = worst.max(moment_rel_err(got.mean, got.variance, &want));
    }
    Ok(SelftestReport { name: "out_moments vs quadrature", cases, max_rel_err: worst, tolerance: MOMENT_TOLERANCE })
}

/// `cases` random draws of the tap-side moments under a spike-and-slab prior.
pub fn selftest_in_moments(cases: usize, seed: u64) -> Result<SelftestReport> {
    use crate::jced::in_moments;
    use crate::oracle::{quad_in_moments, QuadratureGrid};
    let mut worst = 0.0f64;
    for case in 0..cases {
        let mut rng = substream(seed, &[purpose::TEST, 2, case as u64]);
        let sparsity = rng.random_range(0.01..0.99);
        let variance = log_uniform(&mut rng, 1e-3, 1.0);
        let mu_q = log_uniform(&mut rng, 1e-4, 1.0);
        let x = if rng.random_bool(sparsity) { sample_cgauss(&mut rng, variance) } else { C64::new(0.0, 0.0) };
        let q_hat = x + sample_cgauss(&mut rng, mu_q);
        let (mean, var) = in_moments(q_hat, mu_q, sparsity, variance);
        let want = quad_in_moments(q_hat, mu_q, sparsity, variance, QuadratureGrid::default());
        worst = worst.max(moment_rel_err(mean, var, &want));
    }
    Ok(SelftestReport { name: "in_moments vs quadrature", cases, max_rel_err: worst, tolerance: MOMENT_TOLERANCE })
}
