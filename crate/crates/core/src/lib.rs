//! Software-defined ultrasound processing core.
//!
//! Turns raw per-channel transducer data into B-mode images through the
//! classic receive chain: delay-and-sum beamforming, envelope detection by
//! IQ demodulation, log compression, and 2D/3D scan conversion. A point
//! scatterer synthesizer stands in for probe hardware so the whole chain can
//! run without an ultrasound front end, and a metrics module measures
//! point-spread functions and per-stage timing statistics.
//!
//! All operations are pure functions over immutable frame types. With the
//! default `parallel` feature the hot kernels fan out over scanlines (or
//! output pixels) via rayon; disabling the feature yields a dependency-free
//! sequential build. Both paths produce bit-identical results, and every
//! parallel entry point has an always-available `*_seq` twin used by the
//! benchmark suite for comparison.

pub mod beamform;
pub mod compress;
pub mod envelope;
pub mod fileio;
pub mod frame;
pub mod geometry;
pub mod metrics;
pub mod scanconvert;
pub mod synth;

mod exec;
mod window;

pub use frame::{BModeImage, EnvelopeFrame, RawChannelFrame, RfFrame};
pub use geometry::{ArrayKind, ScanlineLayout, TransducerGeometry};
pub use window::WindowKind;

use thiserror::Error;

/// Error type shared by the processing kernels.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its valid domain.
    #[error("parameter out of domain: {0}")]
    Parameter(String),
    /// Inputs are internally inconsistent (dimension or layout mismatch).
    #[error("structural mismatch: {0}")]
    Structure(String),
    /// An operation would exceed a configured resource budget.
    #[error("resource limit exceeded: {what} requires {required} bytes, budget is {budget} bytes")]
    Resource {
        what: &'static str,
        required: u64,
        budget: u64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
