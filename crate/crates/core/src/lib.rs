//! Maximum voiced frequency (MVF) estimation from amplitude and phase spectra.
//!
//! The estimator windows each voiced frame over four pitch periods, picks
//! harmonic candidates up to Nyquist, measures three harmonicity features per
//! candidate (AS, IHPC, ICPC) and places the harmonic/noise boundary with a
//! maximum-likelihood rule over per-hypothesis Gaussian models. The crate also
//! contains a semi-synthetic corpus generator with known MVF, a model trainer
//! and an ROC/AUC scoring harness.

pub mod cli;
pub mod decision;
pub mod error;
pub mod eval;
pub mod features;
pub mod harmonics;
pub mod pipeline;
pub mod signal_io;
pub mod smoothing;
pub mod spectral;
pub mod synth;

pub use error::{Error, Result};
