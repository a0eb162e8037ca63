//! Quantized open baker's maps and their Walsh toy models.
//!
//! The crate builds the quantum propagators of open baker's maps on the
//! torus, computes their resonance spectra and counts them in annular
//! sectors, and evaluates coherent-transport quantities (conductance, shot
//! noise, Fano factor) for the Walsh-quantized 4-baker cavity.
//!
//! Modules follow the data flow: [`transforms`] provides Fourier/Walsh
//! matrices and the digit codec, [`classical`] the underlying phase-space
//! dynamics, [`quantize`] the quantum maps, [`spectral`] eigenvalues and
//! counting, [`transport`] the scattering quantities, and [`cli`] the batch
//! front end.

pub mod classical;
pub mod cli;
pub mod error;
pub mod format;
pub mod matrix;
pub mod quantize;
pub mod spectral;
pub mod transforms;
pub mod transport;

pub use error::{Error, Result};
pub use matrix::{ComplexMatrix, C64};
