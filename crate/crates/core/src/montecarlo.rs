//! Trial-based simulation of symbol and frame error rates for both
//! receivers under AWGN and one same-SF interferer.
//!
//! Trial `i` of a run draws only from `trial_stream(seed, i)`, and trials
//! are processed in fixed-size chunks whose error counts are summed as
//! integers, so results do not depend on the number of worker threads.
//!
//! Both receivers are evaluated on the same received samples, which makes
//! coherent/non-coherent comparisons use common random numbers.

use std::io::Write;
use std::str::FromStr;
use std::sync::Mutex;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{fer_collision, InterferenceMethod, QuadratureSpec};
use crate::chirp::{argmax_magnitude, argmax_projection, cis_turns, noise_component_std, symbol_into, Dechirper, LoraParams};
use crate::error::{Error, Result};
use crate::interference::{db_to_amplitude, oversampled_interferer_into, symbol_cfo_turns};
use crate::rng::trial_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Receiver {
    Coherent,
    Noncoherent,
}

impl Receiver {
    pub const BOTH: [Receiver; 2] = [Receiver::Coherent, Receiver::Noncoherent];

    pub fn as_str(&self) -> &'static str {
        match self {
            Receiver::Coherent => "coherent",
            Receiver::Noncoherent => "noncoherent",
        }
    }

    fn index(&self) -> usize {
        match self {
            Receiver::Coherent => 0,
            Receiver::Noncoherent => 1,
        }
    }
}

impl FromStr for Receiver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coherent" => Ok(Receiver::Coherent),
            "noncoherent" | "non-coherent" => Ok(Receiver::Noncoherent),
            other => Err(Error::domain(format!("unknown receiver '{other}'"))),
        }
    }
}

/// Default oversampling used to realize fractional time offsets.
pub const DEFAULT_OVERSAMPLING: usize = 32;

/// Trials per scheduling chunk; early stopping is checked only between
/// chunks so that it is deterministic.
const CHUNK: u64 = 2048;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialConfig {
    pub params: LoraParams,
    pub snr_db: f64,
    /// Interferer power; `-inf` for AWGN only.
    pub p_i_db: f64,
    /// Interferer CFO in bins.
    pub lambda_cfo: f64,
    pub receiver: Receiver,
    /// Symbols per frame (collision interval).
    pub frame_len: u32,
    /// Variance of the per-symbol phase-tracking error (rad²).
    pub sigma_tr2: f64,
    pub n_trials: u64,
    pub seed: u64,
    /// Oversampling factor of the interferer construction.
    pub oversampling: usize,
    /// Stop after the chunk in which this many errors were reached.
    pub min_errors: Option<u64>,
}

impl TrialConfig {
    pub fn new(params: LoraParams) -> Self {
        Self {
            params,
            snr_db: 0.0,
            p_i_db: f64::NEG_INFINITY,
            lambda_cfo: 0.0,
            receiver: Receiver::Coherent,
            frame_len: 1,
            sigma_tr2: 0.0,
            n_trials: 10_000,
            seed: 1,
            oversampling: DEFAULT_OVERSAMPLING,
            min_errors: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.oversampling() != 1 {
            return Err(Error::domain("simulation runs at fs = B"));
        }
        if !self.snr_db.is_finite() {
            return Err(Error::domain(format!("snr_db must be finite, got {}", self.snr_db)));
        }
        if self.p_i_db.is_nan() || self.p_i_db == f64::INFINITY {
            return Err(Error::domain(format!("invalid interferer power {}", self.p_i_db)));
        }
        if !self.lambda_cfo.is_finite() {
            return Err(Error::domain("lambda_cfo must be finite"));
        }
        if self.n_trials == 0 {
            return Err(Error::domain("n_trials must be at least 1"));
        }
        if self.frame_len == 0 {
            return Err(Error::domain("frame length must be at least 1"));
        }
        if !(self.sigma_tr2 >= 0.0 && self.sigma_tr2.is_finite()) {
            return Err(Error::domain(format!("sigma_tr2 must be >= 0, got {}", self.sigma_tr2)));
        }
        if self.oversampling == 0 {
            return Err(Error::domain("oversampling must be at least 1"));
        }
        Ok(())
    }
}

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

/// Wilson score interval at 95%.
pub fn wilson_interval(errors: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0).min(p), (centre + half).min(1.0).max(p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorRateEstimate {
    pub errors: u64,
    pub trials: u64,
    pub rate: f64,
    pub ci95: (f64, f64),
    pub seed: u64,
}

impl ErrorRateEstimate {
    pub fn from_counts(errors: u64, trials: u64, seed: u64) -> Self {
        Self {
            errors,
            trials,
            rate: if trials == 0 { 0.0 } else { errors as f64 / trials as f64 },
            ci95: wilson_interval(errors, trials),
            seed,
        }
    }
}

/// Estimates for both receivers from the same trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedEstimate {
    pub coherent: ErrorRateEstimate,
    pub noncoherent: ErrorRateEstimate,
}

impl PairedEstimate {
    pub fn get(&self, r: Receiver) -> &ErrorRateEstimate {
        match r {
            Receiver::Coherent => &self.coherent,
            Receiver::Noncoherent => &self.noncoherent,
        }
    }
}

/// Chunk-level progress of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgressEvent {
    pub trials_done: u64,
    pub n_trials: u64,
    pub receiver: Receiver,
    pub errors: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub trait ProgressSink: Sync {
    fn report(&self, event: &ProgressEvent);
}

/// Discards progress.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&self, _: &ProgressEvent) {}
}

/// Writes one JSON object per line.
pub struct JsonLinesProgress<W: Write + Send> {
    out: Mutex<W>,
}

impl<W: Write + Send> JsonLinesProgress<W> {
    pub fn new(out: W) -> Self {
        Self { out: Mutex::new(out) }
    }

    pub fn into_inner(self) -> W {
        self.out.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

impl<W: Write + Send> ProgressSink for JsonLinesProgress<W> {
    fn report(&self, event: &ProgressEvent) {
        let mut out = self.out.lock().unwrap_or_else(|e| e.into_inner());
        if let Ok(line) = serde_json::to_string(event) {
            // progress is best-effort
            let _ = writeln!(out, "{line}");
            let _ = out.flush();
        }
    }
}

struct Scratch {
    dechirper: Dechirper,
    desired: Vec<Complex64>,
    interferer: Vec<Complex64>,
    y: Vec<Complex64>,
    symbols: Vec<usize>,
}

impl Scratch {
    fn new(p: &LoraParams, frame_len: u32) -> Self {
        let n = p.n();
        Self {
            dechirper: Dechirper::new(p),
            desired: vec![Complex64::default(); n],
            interferer: vec![Complex64::default(); n],
            y: vec![Complex64::default(); n],
            symbols: Vec::with_capacity(frame_len as usize + 1),
        }
    }
}

/// One frame; returns whether each receiver made at least one error.
fn run_trial(cfg: &TrialConfig, index: u64, sc: &mut Scratch) -> [bool; 2] {
    let p = &cfg.params;
    let n = p.n();
    let mut rng = trial_stream(cfg.seed, index);
    let phi: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let omega: f64 = rng.random::<f64>() * std::f64::consts::TAU;
    let tau: f64 = rng.random::<f64>() * n as f64;
    sc.symbols.clear();
    for _ in 0..=cfg.frame_len {
        sc.symbols.push(rng.random_range(0..n));
    }

    let amp = db_to_amplitude(cfg.p_i_db);
    let h = Complex64::from_polar(1.0, phi);
    let h_i = Complex64::from_polar(amp, phi + omega);
    let noise_std = noise_component_std(cfg.snr_db);
    let tr_std = cfg.sigma_tr2.sqrt();
    let mut failed = [false; 2];

    for m in 1..=cfg.frame_len {
        let s = rng.random_range(0..n);
        symbol_into(s, n, &mut sc.desired);
        for (y, x) in sc.y.iter_mut().zip(&sc.desired) {
            *y = h * x;
        }
        if amp > 0.0 {
            let (s1, s2) = (sc.symbols[m as usize - 1], sc.symbols[m as usize]);
            oversampled_interferer_into(s1, s2, tau, cfg.oversampling, n, &mut sc.interferer);
            let base = symbol_cfo_turns(cfg.lambda_cfo, m);
            for (k, (y, x)) in sc.y.iter_mut().zip(&sc.interferer).enumerate() {
                *y += h_i * cis_turns(base + k as f64 * cfg.lambda_cfo / n as f64) * x;
            }
        }
        for y in sc.y.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *y += Complex64::new(noise_std * re, noise_std * im);
        }
        let e_tr: f64 = rng.sample::<f64, _>(StandardNormal) * tr_std;
        sc.dechirper
            .process_in_place(&mut sc.y)
            .expect("scratch buffer has length N");
        if argmax_projection(&sc.y, phi + e_tr) != s {
            failed[0] = true;
        }
        if argmax_magnitude(&sc.y) != s {
            failed[1] = true;
        }
    }
    failed
}

fn run(cfg: &TrialConfig, sink: &dyn ProgressSink) -> Result<PairedEstimate> {
    cfg.validate()?;
    let mut errors = [0u64; 2];
    let mut done = 0u64;
    while done < cfg.n_trials {
        let end = (done + CHUNK).min(cfg.n_trials);
        let chunk = (done..end)
            .into_par_iter()
            .map_init(
                || Scratch::new(&cfg.params, cfg.frame_len),
                |sc, i| run_trial(cfg, i, sc),
            )
            .map(|f| [f[0] as u64, f[1] as u64])
            .reduce(|| [0, 0], |a, b| [a[0] + b[0], a[1] + b[1]]);
        errors[0] += chunk[0];
        errors[1] += chunk[1];
        done = end;
        let sel = errors[cfg.receiver.index()];
        let (lo, hi) = wilson_interval(sel, done);
        sink.report(&ProgressEvent {
            trials_done: done,
            n_trials: cfg.n_trials,
            receiver: cfg.receiver,
            errors: sel,
            rate: sel as f64 / done as f64,
            ci_low: lo,
            ci_high: hi,
        });
        if cfg.min_errors.is_some_and(|m| sel >= m) {
            break;
        }
    }
    Ok(PairedEstimate {
        coherent: ErrorRateEstimate::from_counts(errors[0], done, cfg.seed),
        noncoherent: ErrorRateEstimate::from_counts(errors[1], done, cfg.seed),
    })
}

fn symbol_config(cfg: &TrialConfig) -> TrialConfig {
    TrialConfig {
        frame_len: 1,
        sigma_tr2: 0.0,
        ..*cfg
    }
}

/// Symbol error rate of `cfg.receiver` with perfect phase knowledge.
pub fn simulate_symbols(cfg: &TrialConfig) -> Result<ErrorRateEstimate> {
    Ok(*simulate_symbols_paired(cfg, &NoProgress)?.get(cfg.receiver))
}

pub fn simulate_symbols_paired(cfg: &TrialConfig, sink: &dyn ProgressSink) -> Result<PairedEstimate> {
    run(&symbol_config(cfg), sink)
}

/// Frame error rate of `cfg.receiver` over `frame_len` colliding symbols.
pub fn simulate_frames(cfg: &TrialConfig) -> Result<ErrorRateEstimate> {
    Ok(*simulate_frames_paired(cfg, &NoProgress)?.get(cfg.receiver))
}

pub fn simulate_frames_paired(cfg: &TrialConfig, sink: &dyn ProgressSink) -> Result<PairedEstimate> {
    run(cfg, sink)
}

/// Source of FER values for [`required_snr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FerEvaluator {
    MonteCarlo,
    Analytic {
        quad: QuadratureSpec,
        method: InterferenceMethod,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RequiredSnr {
    Found {
        snr_db: f64,
        /// FER at `snr_db`.
        fer: f64,
        evaluations: u32,
    },
    /// The FER stays above target across the bracket.
    Unreachable { floor: f64 },
}

fn fer_at(template: &TrialConfig, snr_db: f64, evaluator: &FerEvaluator) -> Result<(f64, (f64, f64))> {
    match evaluator {
        FerEvaluator::MonteCarlo => {
            let e = simulate_frames(&TrialConfig { snr_db, ..*template })?;
            Ok((e.rate, e.ci95))
        }
        FerEvaluator::Analytic { quad, method } => {
            let v = fer_collision(
                template.frame_len,
                &template.params,
                snr_db,
                template.p_i_db,
                template.lambda_cfo,
                quad,
                *method,
            )?;
            Ok((v, (v, v)))
        }
    }
}

/// Bracket width at which the bisection stops.
const SNR_RESOLUTION_DB: f64 = 0.1;

/// SNR at which the FER of `template.receiver` drops to `target_fer`
/// with interference at `sir_db`. The FER must be nonincreasing in SNR
/// over `bracket`.
pub fn required_snr(
    target_fer: f64,
    sir_db: f64,
    template: &TrialConfig,
    bracket: (f64, f64),
    evaluator: &FerEvaluator,
) -> Result<RequiredSnr> {
    if !(target_fer > 0.0 && target_fer < 1.0) {
        return Err(Error::domain(format!("target FER {target_fer} outside (0, 1)")));
    }
    let (mut lo, mut hi) = bracket;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!("invalid SNR bracket ({lo}, {hi})")));
    }
    let template = TrialConfig {
        p_i_db: -sir_db,
        ..*template
    };
    template.validate()?;
    if matches!(evaluator, FerEvaluator::Analytic { .. })
        && (template.receiver != Receiver::Coherent || template.sigma_tr2 != 0.0)
    {
        return Err(Error::domain(
            "analytic FER covers the coherent receiver with perfect phase only",
        ));
    }

    let mut evaluations = 2;
    let (f_hi, _) = fer_at(&template, hi, evaluator)?;
    if f_hi > target_fer {
        return Ok(RequiredSnr::Unreachable { floor: f_hi });
    }
    let (f_lo, _) = fer_at(&template, lo, evaluator)?;
    if f_lo <= target_fer {
        return Err(Error::domain(format!(
            "FER {f_lo} at the lower bracket end {lo} dB is already below target {target_fer}"
        )));
    }
    let mut best = (hi, f_hi);
    while hi - lo > SNR_RESOLUTION_DB {
        let mid = 0.5 * (lo + hi);
        let (f, (ci_lo, ci_hi)) = fer_at(&template, mid, evaluator)?;
        evaluations += 1;
        best = (mid, f);
        if ci_lo >= 0.95 * target_fer && ci_hi <= 1.05 * target_fer {
            break;
        }
        if f > target_fer {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RequiredSnr::Found {
        snr_db: best.0,
        fer: best.1,
        evaluations,
    })
}
