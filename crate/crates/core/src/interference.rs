//! Same-SF interferer: waveform, received interference pattern, and the
//! closed-form real-axis projection of every pattern bin.
//!
//! The interferer seen during one desired symbol is the tail of symbol
//! `s_i1` followed by the head of symbol `s_i2`, which starts `tau` chips
//! after the desired symbol. Each of the two pieces splits again at its
//! frequency fold, giving four contiguous segments. After dechirping, every
//! segment is a pure tone over its support, so its DFT is a Dirichlet
//! kernel times a phase term.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::chirp::{cis_turns, chirp_turns, generate_symbol, BasebandFrame, Dechirper, LoraParams};
use crate::error::{Error, Result};

/// One collision realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterfererConfig {
    /// Interfering symbol overlapping the start of the desired symbol.
    pub s_i1: usize,
    /// Interfering symbol starting `tau` chips into the desired symbol.
    pub s_i2: usize,
    /// Time offset in chips, `[0, N)`.
    pub tau: f64,
    /// Carrier frequency offset expressed in bins, `Δf_c · N / f_s`.
    pub tau_cfo: f64,
    /// 1-based index of the symbol within the interfering packet.
    pub m: u32,
    /// Received interferer power in dB (`-inf` disables the interferer).
    pub p_i_db: f64,
    /// Interferer phase relative to the desired user after de-rotation.
    pub omega: f64,
}

impl InterfererConfig {
    pub fn new(s_i1: usize, s_i2: usize, tau: f64, tau_cfo: f64) -> Self {
        Self {
            s_i1,
            s_i2,
            tau,
            tau_cfo,
            m: 1,
            p_i_db: 0.0,
            omega: 0.0,
        }
    }

    pub fn with_power_db(mut self, p_i_db: f64) -> Self {
        self.p_i_db = p_i_db;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_symbol_index(mut self, m: u32) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self, p: &LoraParams) -> Result<()> {
        let n = p.n();
        if self.s_i1 >= n || self.s_i2 >= n {
            return Err(Error::domain(format!(
                "interfering symbols ({}, {}) outside 0..{n}",
                self.s_i1, self.s_i2
            )));
        }
        if !(self.tau >= 0.0 && self.tau < n as f64) {
            return Err(Error::domain(format!("tau = {} outside [0, {n})", self.tau)));
        }
        if !self.tau_cfo.is_finite() || !self.omega.is_finite() {
            return Err(Error::domain("tau_cfo and omega must be finite"));
        }
        if self.m == 0 {
            return Err(Error::domain("symbol index m is 1-based"));
        }
        if self.p_i_db.is_nan() || self.p_i_db == f64::INFINITY {
            return Err(Error::domain(format!("invalid interferer power {}", self.p_i_db)));
        }
        Ok(())
    }

    /// `L = ⌊τ⌋`.
    pub fn integer_offset(&self) -> i64 {
        self.tau.floor() as i64
    }

    /// `λ = τ - ⌊τ⌋`.
    pub fn fractional_offset(&self) -> f64 {
        self.tau - self.tau.floor()
    }

    /// `L_cfo = ⌊τ_cfo⌋`.
    pub fn cfo_integer(&self) -> i64 {
        self.tau_cfo.floor() as i64
    }

    /// `λ_cfo = τ_cfo - ⌊τ_cfo⌋`.
    pub fn cfo_fraction(&self) -> f64 {
        self.tau_cfo - self.tau_cfo.floor()
    }

    /// `|h_I| = sqrt(P_I)`.
    pub fn amplitude(&self) -> f64 {
        db_to_amplitude(self.p_i_db)
    }

    /// `|h_I| e^{jω}`.
    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(self.amplitude(), self.omega)
    }
}

pub(crate) fn db_to_amplitude(db: f64) -> f64 {
    if db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(db / 20.0)
    }
}

/// Dechirped interferer DFT, `R_k` (or `V_k` once de-rotated).
#[derive(Debug, Clone, PartialEq)]
pub struct InterferencePattern {
    pub bins: Vec<Complex64>,
}

impl InterferencePattern {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.norm()).collect()
    }

    pub fn projections(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.re).collect()
    }
}

fn require_critical(p: &LoraParams) -> Result<()> {
    if p.oversampling() != 1 {
        return Err(Error::domain("interference model is defined at fs = B"));
    }
    Ok(())
}

/// `x_I[n]` for symbols `(s1, s2)` with `s2` starting at chip time
/// `tau = c - mu` (`c = ⌈tau⌉`, `0 <= mu < 1`).
fn interferer_samples(s1: usize, s2: usize, c: i64, mu: f64, n: usize, out: &mut [Complex64]) {
    let ni = n as i64;
    let (s1, s2) = (s1 as i64, s2 as i64);
    for (idx, v) in out.iter_mut().enumerate() {
        let idx = idx as i64;
        let turns = if idx < c {
            chirp_turns(idx + ni - c, mu, s1, ni)
        } else {
            chirp_turns(idx - c, mu, s2, ni)
        };
        *v = cis_turns(turns);
    }
}

fn split_offset(tau: f64) -> (i64, f64) {
    let c = tau.ceil();
    (c as i64, c - tau)
}

/// The four-branch interferer waveform over one desired symbol
/// (unit magnitude, no CFO, no channel).
pub fn interferer_waveform(cfg: &InterfererConfig, p: &LoraParams) -> Result<BasebandFrame> {
    require_critical(p)?;
    cfg.validate(p)?;
    let n = p.n();
    let (c, mu) = split_offset(cfg.tau);
    let mut samples = vec![Complex64::default(); n];
    interferer_samples(cfg.s_i1, cfg.s_i2, c, mu, n, &mut samples);
    Ok(BasebandFrame {
        samples,
        sample_rate_ratio: 1.0,
    })
}

/// Interferer built the way a sample-level simulator does it: both symbols
/// are generated `os` times oversampled, concatenated, shifted by
/// `round(os·tau)` samples and decimated back to `N` samples.
pub fn oversampled_interferer(cfg: &InterfererConfig, p: &LoraParams, os: usize) -> Result<BasebandFrame> {
    require_critical(p)?;
    cfg.validate(p)?;
    if os == 0 {
        return Err(Error::domain("oversampling factor must be positive"));
    }
    let n = p.n();
    let po = LoraParams::with_bandwidth_ratio(p.sf(), 1.0 / os as f64)?;
    let train = BasebandFrame::concat(&[generate_symbol(cfg.s_i1, &po)?, generate_symbol(cfg.s_i2, &po)?])?;
    let shift = (os as f64 * cfg.tau).round() as usize;
    let start = n * os - shift;
    let samples = (0..n).map(|k| train.samples[start + k * os]).collect();
    Ok(BasebandFrame {
        samples,
        sample_rate_ratio: 1.0,
    })
}

/// Allocation-free equivalent of [`oversampled_interferer`]: evaluates only
/// the samples that survive decimation.
pub(crate) fn oversampled_interferer_into(s1: usize, s2: usize, tau: f64, os: usize, n: usize, out: &mut [Complex64]) {
    let (ni, osi) = (n as i64, os as i64);
    let shift = (os as f64 * tau).round() as i64;
    let (s1, s2) = (s1 as i64, s2 as i64);
    for (k, v) in out.iter_mut().enumerate() {
        let idx = ni * osi - shift + k as i64 * osi;
        let (local, sym) = if idx < ni * osi { (idx, s1) } else { (idx - ni * osi, s2) };
        let whole = local / osi;
        let frac = (local % osi) as f64 / os as f64;
        *v = cis_turns(chirp_turns(whole, frac, sym, ni));
    }
}

/// `c_I[n] = e^{j2π(n + (m-1)N) τ_cfo / N}`.
pub fn cfo_phasor(cfg: &InterfererConfig, p: &LoraParams) -> BasebandFrame {
    let n = p.n();
    let base = symbol_cfo_turns(cfg.tau_cfo, cfg.m);
    let samples = (0..n)
        .map(|k| cis_turns(base + k as f64 * cfg.tau_cfo / n as f64))
        .collect();
    BasebandFrame {
        samples,
        sample_rate_ratio: p.oversampling() as f64,
    }
}

/// Phase advance `(m-1)·τ_cfo` (turns) accumulated before symbol `m`.
pub(crate) fn symbol_cfo_turns(tau_cfo: f64, m: u32) -> f64 {
    ((m as f64 - 1.0) * tau_cfo).rem_euclid(1.0)
}

/// `DFT(|h_I| e^{jω} c_I ⊙ x_I ⊙ x_ref*)`.
pub fn received_pattern(cfg: &InterfererConfig, p: &LoraParams) -> Result<InterferencePattern> {
    let x = interferer_waveform(cfg, p)?;
    let c = cfo_phasor(cfg, p);
    let g = cfg.gain();
    let mut y: Vec<Complex64> = x.samples.iter().zip(&c.samples).map(|(a, b)| g * a * b).collect();
    Dechirper::new(p).process_in_place(&mut y)?;
    Ok(InterferencePattern { bins: y })
}

/// Pattern of an arbitrary interferer waveform, scaled like
/// [`received_pattern`].
pub fn pattern_of_waveform(x_i: &BasebandFrame, cfg: &InterfererConfig, p: &LoraParams) -> Result<InterferencePattern> {
    let c = cfo_phasor(cfg, p);
    let g = cfg.gain();
    let mut y: Vec<Complex64> = x_i.samples.iter().zip(&c.samples).map(|(a, b)| g * a * b).collect();
    Dechirper::new(p).process_in_place(&mut y)?;
    Ok(InterferencePattern { bins: y })
}

/// Amplitude `A_{k,j}` and phase `θ_{k,j}` of one segment's contribution to
/// bin `k`: the segment adds `|h_I| A e^{jθ}` to `V_k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionTerm {
    pub amplitude: f64,
    /// Radians in `[0, 2π)`.
    pub phase: f64,
}

/// Threshold on `|sin(πδ/N)|` below which the Dirichlet ratio is replaced
/// by its limit.
const SINGULAR_EPS: f64 = 1e-12;

/// Per-offset constants of the closed form. Everything that depends only on
/// `(tau, tau_cfo, m)` is computed once; segment sums are then cheap for
/// any `(symbol, bin)` pair.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ClosedForm {
    n: i64,
    /// `⌈τ⌉`
    c: i64,
    /// `⌈τ⌉ - τ`
    mu: f64,
    /// `τ_cfo + mu`, so that `δ = (s - k - c) + g`
    g: f64,
    /// `(m-1)·τ_cfo` in turns
    cfo_turns: f64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    /// first sample index
    a: i64,
    len: i64,
    /// constant phase in turns
    base: f64,
}

impl ClosedForm {
    pub(crate) fn new(tau: f64, tau_cfo: f64, m: u32, n: usize) -> Self {
        let (c, mu) = split_offset(tau);
        Self {
            n: n as i64,
            c,
            mu,
            g: tau_cfo + mu,
            cfo_turns: symbol_cfo_turns(tau_cfo, m),
        }
    }

    fn frac_turns(num: i64, den: i64) -> f64 {
        num.rem_euclid(den) as f64 / den as f64
    }

    /// Segments 1 and 2: tail of `s1` before and after its fold.
    fn first_segments(&self, s1: i64) -> [Segment; 2] {
        let (n, c, mu) = (self.n, self.c, self.mu);
        let cp = n - c;
        // U = N - τ = cp + mu; constant U²/2N + U(s1/N - 1/2)
        let base = Self::frac_turns(cp * cp, 2 * n)
            + cp as f64 * mu / n as f64
            + mu * mu / (2 * n) as f64
            + Self::frac_turns(cp * s1, n)
            + mu * s1 as f64 / n as f64
            - cp.rem_euclid(2) as f64 / 2.0
            - mu / 2.0;
        let split = (c - s1).max(0);
        [
            Segment { a: 0, len: split, base },
            Segment {
                a: split,
                len: c - split,
                base: base - mu,
            },
        ]
    }

    /// Segments 3 and 4: head of `s2` before and after its fold.
    fn second_segments(&self, s2: i64) -> [Segment; 2] {
        let (n, c, mu) = (self.n, self.c, self.mu);
        // T = c - mu; constant T²/2N - T s2/N + T/2
        let base = Self::frac_turns(c * c, 2 * n) - c as f64 * mu / n as f64 + mu * mu / (2 * n) as f64
            - Self::frac_turns(c * s2, n)
            + mu * s2 as f64 / n as f64
            + c.rem_euclid(2) as f64 / 2.0
            - mu / 2.0;
        let end = (n - s2 + c).min(n);
        [
            Segment {
                a: c,
                len: end - c,
                base,
            },
            Segment {
                a: end,
                len: n - end,
                base: base - mu,
            },
        ]
    }

    /// Dirichlet amplitude and phase (turns) of one segment at bin `k`.
    fn term(&self, seg: Segment, sym: i64, k: i64) -> (f64, f64) {
        if seg.len <= 0 {
            return (0.0, 0.0);
        }
        let n = self.n;
        let two_n = 2 * n;
        // δ = I + g with I ∈ [0, 2N); the ratio only depends on d = δ - rN
        let i = (sym - k - self.c).rem_euclid(two_n);
        let r = ((i as f64 + self.g) / n as f64).round() as i64;
        let d = (i - r * n) as f64 + self.g;
        let den = (PI * d / n as f64).sin();
        let ratio = if den.abs() < SINGULAR_EPS {
            seg.len as f64
        } else {
            (PI * d * seg.len as f64 / n as f64).sin() / den
        };
        let amplitude = if (r * (seg.len - 1)).rem_euclid(2) == 0 { ratio } else { -ratio };
        // δ (a + b) / 2N with b = a + len - 1
        let span = 2 * seg.a + seg.len - 1;
        let phase = Self::frac_turns(i * span, two_n) + self.g * span as f64 / two_n as f64 + seg.base + self.cfo_turns;
        (amplitude, phase)
    }

    fn accumulate(&self, segs: [Segment; 2], sym: i64, k: i64) -> Complex64 {
        segs.iter()
            .map(|&seg| {
                let (a, t) = self.term(seg, sym, k);
                if a == 0.0 {
                    Complex64::default()
                } else {
                    a * cis_turns(t)
                }
            })
            .sum()
    }

    /// Contribution of the `s1` tail to bin `k` (unit amplitude, ω = 0).
    pub(crate) fn first_part(&self, s1: usize, k: usize) -> Complex64 {
        let s1 = s1 as i64;
        self.accumulate(self.first_segments(s1), s1, k as i64)
    }

    /// Contribution of the `s2` head to bin `k` (unit amplitude, ω = 0).
    pub(crate) fn second_part(&self, s2: usize, k: usize) -> Complex64 {
        let s2 = s2 as i64;
        self.accumulate(self.second_segments(s2), s2, k as i64)
    }

    fn terms(&self, s1: usize, s2: usize, k: usize, omega: f64) -> [ProjectionTerm; 4] {
        let (s1, s2, k) = (s1 as i64, s2 as i64, k as i64);
        let f = self.first_segments(s1);
        let s = self.second_segments(s2);
        let mk = |(a, t): (f64, f64)| ProjectionTerm {
            amplitude: a,
            phase: (TAU * t + omega).rem_euclid(TAU),
        };
        [
            mk(self.term(f[0], s1, k)),
            mk(self.term(f[1], s1, k)),
            mk(self.term(s[0], s2, k)),
            mk(self.term(s[1], s2, k)),
        ]
    }
}

/// The four `(A_{k,j}, θ_{k,j})` pairs for bin `k`, ordered as the
/// segments of the interferer: `s_i1` before fold, `s_i1` after fold,
/// `s_i2` before fold, `s_i2` after fold. `ω` is folded into the phases.
pub fn projection_terms(k: usize, cfg: &InterfererConfig, p: &LoraParams) -> Result<[ProjectionTerm; 4]> {
    require_critical(p)?;
    cfg.validate(p)?;
    if k >= p.n() {
        return Err(Error::domain(format!("bin {k} outside 0..{}", p.n())));
    }
    let cf = ClosedForm::new(cfg.tau, cfg.tau_cfo, cfg.m, p.n());
    Ok(cf.terms(cfg.s_i1, cfg.s_i2, k, cfg.omega))
}

/// `V_k` from the closed form (complex, including `|h_I| e^{jω}`).
pub fn pattern_bin_closed_form(k: usize, cfg: &InterfererConfig, p: &LoraParams) -> Result<Complex64> {
    let terms = projection_terms(k, cfg, p)?;
    let amp = cfg.amplitude();
    Ok(terms
        .iter()
        .map(|t| Complex64::from_polar(amp * t.amplitude, t.phase))
        .sum())
}

/// `Re(V_k) = |h_I| Σ_j A_{k,j} cos θ_{k,j}`.
pub fn projection_closed_form(k: usize, cfg: &InterfererConfig, p: &LoraParams) -> Result<f64> {
    let terms = projection_terms(k, cfg, p)?;
    Ok(cfg.amplitude() * terms.iter().map(|t| t.amplitude * t.phase.cos()).sum::<f64>())
}

/// Dechirped pattern split by interfering symbol for a fixed offset:
/// `V_k(s1, s2) = first[s1][k] + second[s2][k]` at unit amplitude and
/// `ω = 0`. Rows exist only for the listed symbols and are addressed by
/// their position in that list. Filled from the closed form.
pub(crate) struct PatternTables {
    n: usize,
    first: Vec<Complex64>,
    second: Vec<Complex64>,
}

impl PatternTables {
    pub(crate) fn new(tau: f64, tau_cfo: f64, m: u32, n: usize, symbols: &[usize]) -> Self {
        let cf = ClosedForm::new(tau, tau_cfo, m, n);
        let mut first = Vec::with_capacity(symbols.len() * n);
        let mut second = Vec::with_capacity(symbols.len() * n);
        for &s in symbols {
            first.extend((0..n).map(|k| cf.first_part(s, k)));
            second.extend((0..n).map(|k| cf.second_part(s, k)));
        }
        Self { n, first, second }
    }

    #[inline]
    pub(crate) fn bin(&self, row1: usize, row2: usize, k: usize) -> Complex64 {
        self.first[row1 * self.n + k] + self.second[row2 * self.n + k]
    }

    pub(crate) fn pattern_into(&self, row1: usize, row2: usize, out: &mut [Complex64]) {
        let f = &self.first[row1 * self.n..(row1 + 1) * self.n];
        let s = &self.second[row2 * self.n..(row2 + 1) * self.n];
        for ((o, a), b) in out.iter_mut().zip(f).zip(s) {
            *o = a + b;
        }
    }
}

/// The two `K`-bin windows around the interference cluster centres.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RelevantBins {
    pub d1: Vec<usize>,
    pub d2: Vec<usize>,
}

impl RelevantBins {
    /// `D1 ∪ D2`, sorted, without duplicates.
    pub fn union(&self) -> Vec<usize> {
        let mut u: Vec<usize> = self.d1.iter().chain(&self.d2).copied().collect();
        u.sort_unstable();
        u.dedup();
        u
    }

    pub fn contains(&self, k: usize) -> bool {
        self.d1.contains(&k) || self.d2.contains(&k)
    }
}

pub(crate) fn check_cluster_width(k_width: usize, n: usize) -> Result<()> {
    if k_width % 2 == 0 || k_width == 0 || k_width >= n {
        return Err(Error::domain(format!(
            "cluster width K = {k_width} must be odd and in 1..{n}"
        )));
    }
    Ok(())
}

/// Cluster centre offset `N - ⌊τ - τ_cfo⌉`, rounding half away from zero.
pub(crate) fn cluster_shift(tau: f64, tau_cfo: f64, n: usize) -> i64 {
    n as i64 - (tau - tau_cfo).round() as i64
}

pub(crate) fn window(center: i64, k_width: usize, n: usize) -> impl Iterator<Item = usize> {
    let half = (k_width as i64 - 1) / 2;
    (-half..=half).map(move |d| (center + d).rem_euclid(n as i64) as usize)
}

/// `D1` and `D2`: `K` consecutive bins (mod `N`) centred on
/// `[N - ⌊τ - τ_cfo⌉ + s_i{1,2}]_N`.
pub fn relevant_bins(cfg: &InterfererConfig, k_width: usize, p: &LoraParams) -> Result<RelevantBins> {
    let n = p.n();
    check_cluster_width(k_width, n)?;
    cfg.validate(p)?;
    let shift = cluster_shift(cfg.tau, cfg.tau_cfo, n);
    Ok(RelevantBins {
        d1: window(shift + cfg.s_i1 as i64, k_width, n).collect(),
        d2: window(shift + cfg.s_i2 as i64, k_width, n).collect(),
    })
}
