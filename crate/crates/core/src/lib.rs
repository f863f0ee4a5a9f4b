//! Coherent and non-coherent LoRa detection under same-spreading-factor
//! interference: waveform generation, closed-form interference patterns,
//! analytic SER/FER evaluators, Monte Carlo simulation and experiment sweeps.

pub mod analytic;
pub mod chirp;
pub mod error;
pub mod experiments;
pub mod interference;
pub mod montecarlo;
pub mod rng;

pub use chirp::{BasebandFrame, ChannelState, Dechirper, LoraParams, PhaseEstimate, Spectrum};
pub use error::{Error, Result};
pub use interference::{InterferencePattern, InterfererConfig, RelevantBins};
