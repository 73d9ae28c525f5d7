//! Rotational Raman spectroscopy of dense hydrogens.
//!
//! Forward model: free-rotor levels split by an axial crystal field, populated
//! under nuclear-spin statistics, observed through ΔJ = 0 ("zero roton") and
//! ΔJ = 2 (S₀) Raman lines. Inverse side: constrained multi-peak fits of
//! measured spectra and pressure/temperature calibration of the field strength.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod angular;
pub mod calibrate;
pub mod config;
pub mod crystalfield;
pub mod error;
pub mod fitkit;
pub mod io;
pub mod lineshape;
pub mod population;
pub mod raman;
pub mod rotor;
pub mod scenario;
pub mod units;

pub use error::{Error, Result};
