//! LoRa modulation and the dechirp + DFT receiver front end.
//!
//! Symbols use the phase-continuous form: every symbol starts with phase 0
//! and the instantaneous frequency folds from `+B/2` to `-B/2` at chip
//! `N - s`. At `fs = B` the fold is invisible on the sample grid and the
//! single-branch expression is used; oversampled symbols evaluate both
//! branches explicitly.
//!
//! Phases are accumulated in turns with the integer parts reduced exactly,
//! so samples stay unit-magnitude and bit-reproducible at every SF.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const MIN_SF: u8 = 7;
pub const MAX_SF: u8 = 12;

/// Spreading factor and sampling configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoraParams {
    sf: u8,
    n: usize,
    bandwidth_ratio: f64,
}

impl LoraParams {
    /// Critically sampled parameters (`fs = B`).
    pub fn new(sf: u8) -> Result<Self> {
        Self::with_bandwidth_ratio(sf, 1.0)
    }

    /// `bandwidth_ratio` is `B / fs`. Its inverse must be an integer
    /// oversampling factor.
    pub fn with_bandwidth_ratio(sf: u8, bandwidth_ratio: f64) -> Result<Self> {
        if !(MIN_SF..=MAX_SF).contains(&sf) {
            return Err(Error::domain(format!(
                "spreading factor {sf} outside {MIN_SF}..={MAX_SF}"
            )));
        }
        if !(bandwidth_ratio > 0.0 && bandwidth_ratio <= 1.0) {
            return Err(Error::domain(format!(
                "bandwidth ratio {bandwidth_ratio} outside (0, 1]"
            )));
        }
        let os = 1.0 / bandwidth_ratio;
        if (os - os.round()).abs() > 1e-9 {
            return Err(Error::domain(format!(
                "fs/B = {os} is not an integer oversampling factor"
            )));
        }
        Ok(Self {
            sf,
            n: 1usize << sf,
            bandwidth_ratio,
        })
    }

    pub fn sf(&self) -> u8 {
        self.sf
    }

    /// Chips per symbol, `2^SF`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth_ratio(&self) -> f64 {
        self.bandwidth_ratio
    }

    /// `fs / B` as an integer.
    pub fn oversampling(&self) -> usize {
        (1.0 / self.bandwidth_ratio).round() as usize
    }

    pub fn samples_per_symbol(&self) -> usize {
        self.n * self.oversampling()
    }

    /// The same SF sampled at `fs = B`.
    pub fn critically_sampled(&self) -> Self {
        Self {
            sf: self.sf,
            n: self.n,
            bandwidth_ratio: 1.0,
        }
    }
}

/// Complex baseband samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandFrame {
    pub samples: Vec<Complex64>,
    /// `fs / B`.
    pub sample_rate_ratio: f64,
}

impl BasebandFrame {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenate frames sampled at the same rate.
    pub fn concat(frames: &[BasebandFrame]) -> Result<Self> {
        let ratio = frames.first().map_or(1.0, |f| f.sample_rate_ratio);
        if frames.iter().any(|f| f.sample_rate_ratio != ratio) {
            return Err(Error::domain("cannot concatenate frames with different rates"));
        }
        Ok(Self {
            samples: frames.iter().flat_map(|f| f.samples.iter().copied()).collect(),
            sample_rate_ratio: ratio,
        })
    }
}

/// `N` DFT bins of one dechirped symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

/// Desired-user channel `h = e^{jφ}` plus the operating SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelState {
    phase: f64,
    pub snr_db: f64,
}

impl ChannelState {
    pub fn new(phase: f64, snr_db: f64) -> Self {
        Self {
            phase: wrap_phase(phase),
            snr_db,
        }
    }

    /// φ in `[0, 2π)`.
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// `|h|` is fixed to one.
    pub fn magnitude(&self) -> f64 {
        1.0
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.phase)
    }

    /// `h·x + z`.
    pub fn apply<R: Rng + ?Sized>(&self, frame: &BasebandFrame, rng: &mut R) -> Result<BasebandFrame> {
        let h = self.gain();
        let rotated = BasebandFrame {
            samples: frame.samples.iter().map(|x| h * x).collect(),
            sample_rate_ratio: frame.sample_rate_ratio,
        };
        apply_awgn(&rotated, self.snr_db, rng)
    }
}

/// Wrap an angle into `[0, 2π)`.
pub fn wrap_phase(phase: f64) -> f64 {
    let w = phase.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

#[inline]
pub(crate) fn cis_turns(turns: f64) -> Complex64 {
    let (s, c) = (TAU * turns).sin_cos();
    Complex64::new(c, s)
}

/// Phase (in turns, reduced to `[0, 1)`) of symbol `s` at chip time
/// `t = whole + frac`, `0 <= frac < 1`, including the frequency fold.
pub(crate) fn chirp_turns(whole: i64, frac: f64, s: i64, n: i64) -> f64 {
    let two_n = 2 * n;
    // t^2 / 2N
    let quad = (whole * whole).rem_euclid(two_n) as f64 / two_n as f64
        + (whole as f64) * frac / n as f64
        + frac * frac / two_n as f64;
    // (s/N - 1/2) t
    let lin = (s * whole).rem_euclid(n) as f64 / n as f64 - whole.rem_euclid(2) as f64 / 2.0
        + frac * (s as f64 / n as f64 - 0.5);
    // past the fold the -3/2 branch adds -t; the integer part drops out
    let fold = if whole >= n - s { -frac } else { 0.0 };
    (quad + lin + fold).rem_euclid(1.0)
}

/// One LoRa symbol `s` with phase continuity (first sample is `1 + 0j`).
pub fn generate_symbol(s: usize, p: &LoraParams) -> Result<BasebandFrame> {
    let n = p.n();
    if s >= n {
        return Err(Error::domain(format!("symbol {s} outside 0..{n}")));
    }
    let os = p.oversampling();
    let (ni, si) = (n as i64, s as i64);
    let samples = if os == 1 {
        let mut v = vec![Complex64::default(); n];
        symbol_into(s, n, &mut v);
        v
    } else {
        (0..(n * os) as i64)
            .map(|idx| {
                let whole = idx / os as i64;
                let frac = (idx % os as i64) as f64 / os as f64;
                cis_turns(chirp_turns(whole, frac, si, ni))
            })
            .collect()
    };
    Ok(BasebandFrame {
        samples,
        sample_rate_ratio: os as f64,
    })
}

/// Critically sampled symbol `s` written into `out` (length `n`).
pub(crate) fn symbol_into(s: usize, n: usize, out: &mut [Complex64]) {
    let (ni, si) = (n as i64, s as i64);
    for (k, v) in out.iter_mut().enumerate() {
        let k = k as i64;
        let turns = (k * k + 2 * si * k - ni * k).rem_euclid(2 * ni) as f64 / (2 * ni) as f64;
        *v = cis_turns(turns);
    }
}

/// Dechirping reference, the upchirp for symbol 0.
pub fn generate_reference(p: &LoraParams) -> BasebandFrame {
    generate_symbol(0, p).expect("symbol 0 is always in range")
}

/// Reusable dechirp + FFT stage. Holds the FFT plan, the conjugated
/// reference and scratch space so the Monte Carlo loop does not allocate.
pub struct Dechirper {
    n: usize,
    reference_conj: Vec<Complex64>,
    fft: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
}

impl Dechirper {
    pub fn new(p: &LoraParams) -> Self {
        let p = p.critically_sampled();
        let n = p.n();
        let reference_conj = generate_reference(&p).samples.iter().map(|x| x.conj()).collect();
        let fft = FftPlanner::new().plan_fft_forward(n);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            n,
            reference_conj,
            fft,
            scratch,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Dechirp `y` and transform it in place into the unnormalized DFT.
    pub fn process_in_place(&mut self, y: &mut [Complex64]) -> Result<()> {
        if y.len() != self.n {
            return Err(Error::domain(format!(
                "symbol slice has {} samples, expected {}",
                y.len(),
                self.n
            )));
        }
        for (v, r) in y.iter_mut().zip(&self.reference_conj) {
            *v *= r;
        }
        self.fft.process_with_scratch(y, &mut self.scratch);
        Ok(())
    }

    pub fn spectrum(&mut self, y: &[Complex64]) -> Result<Spectrum> {
        let mut bins = y.to_vec();
        self.process_in_place(&mut bins)?;
        Ok(Spectrum { bins })
    }
}

/// `DFT(y ⊙ x_ref*)` for one `N`-sample symbol slice.
pub fn dechirp_dft(y: &[Complex64], p: &LoraParams) -> Result<Spectrum> {
    Dechirper::new(p).spectrum(y)
}

/// Index of the largest-magnitude bin; ties go to the lowest index.
pub fn argmax_magnitude(bins: &[Complex64]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, b) in bins.iter().enumerate() {
        let v = b.norm_sqr();
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}

/// Index of the largest `Re(Y_k e^{-jφ})`; ties go to the lowest index.
pub fn argmax_projection(bins: &[Complex64], phi_hat: f64) -> usize {
    let (s, c) = phi_hat.sin_cos();
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (k, b) in bins.iter().enumerate() {
        let v = b.re * c + b.im * s;
        if v > best_val {
            best_val = v;
            best = k;
        }
    }
    best
}

pub fn detect_noncoherent(sp: &Spectrum) -> usize {
    argmax_magnitude(&sp.bins)
}

pub fn detect_coherent(sp: &Spectrum, phi_hat: f64) -> usize {
    argmax_projection(&sp.bins, phi_hat)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseEstimate {
    /// Radians in `[0, 2π)`; zero when `degenerate`.
    pub phase: f64,
    /// The bin-0 sum vanished, so the estimate carries no information.
    pub degenerate: bool,
}

/// Channel phase from the bin-0 values of the first `n_pr` dechirped
/// preamble upchirps.
pub fn estimate_phase(preamble_spectra: &[Spectrum], n_pr: usize) -> Result<PhaseEstimate> {
    if n_pr == 0 || n_pr > preamble_spectra.len() {
        return Err(Error::domain(format!(
            "n_pr = {n_pr} with {} preamble spectra",
            preamble_spectra.len()
        )));
    }
    let mut sum = Complex64::default();
    let mut scale = 0.0;
    for sp in &preamble_spectra[..n_pr] {
        let y0 = *sp
            .bins
            .first()
            .ok_or_else(|| Error::domain("empty preamble spectrum"))?;
        sum += y0;
        scale += y0.norm();
    }
    if sum.norm() <= f64::EPSILON * scale || sum.norm() == 0.0 {
        return Ok(PhaseEstimate {
            phase: 0.0,
            degenerate: true,
        });
    }
    Ok(PhaseEstimate {
        phase: wrap_phase(sum.arg()),
        degenerate: false,
    })
}

/// Per-component standard deviation of circular noise with total variance
/// `10^(-snr_db/10)`.
pub fn noise_component_std(snr_db: f64) -> f64 {
    (0.5 * 10f64.powf(-snr_db / 10.0)).sqrt()
}

/// Add circular complex Gaussian noise in place.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [Complex64], snr_db: f64, rng: &mut R) -> Result<()> {
    if !snr_db.is_finite() {
        return Err(Error::domain(format!("snr_db must be finite, got {snr_db}")));
    }
    let std = noise_component_std(snr_db);
    for v in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *v += Complex64::new(std * re, std * im);
    }
    Ok(())
}

/// `y + z` with `z ~ CN(0, 10^(-snr_db/10))` per sample.
pub fn apply_awgn<R: Rng + ?Sized>(y: &BasebandFrame, snr_db: f64, rng: &mut R) -> Result<BasebandFrame> {
    let mut out = y.clone();
    add_awgn(&mut out.samples, snr_db, rng)?;
    Ok(out)
}
