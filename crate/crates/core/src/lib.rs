//! Simulation and calibration of the echoed cross-resonance (CR) gate between
//! two fixed-frequency transmons.
//!
//! The crate is organised bottom-up:
//!
//! - [`quantum`]: dense operators, Pauli decomposition, matrix exponential,
//!   fidelities and reduced Bloch vectors.
//! - [`device`]: the two-transmon Hamiltonian and rotating-wave drive terms.
//! - [`pulse`]: flat-top and DRAG envelopes, CR and echoed-CR schedules.
//! - [`propagation`]: unitary and Lindblad time evolution.
//! - [`effective`]: least-action block diagonalization and effective CR rates.
//! - [`tomography`]: conditional Rabi datasets, Bloch-generator fits, CR
//!   coefficients and the R-vector.
//! - [`calibration`]: phase sweep, cancellation sweep and ZX90 tune-up.
//! - [`benchmarking`]: two-qubit Clifford group, RB and interleaved RB.
//!
//! Frequencies are in GHz, rates in MHz (cyclic), times in ns. Operators hold
//! angular frequencies in rad/ns.

// `!(x >= 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmarking;
pub mod calibration;
pub mod device;
pub mod effective;
mod error;
pub mod fit;
pub mod propagation;
pub mod pulse;
pub mod quantum;
pub mod tomography;
pub mod units;

pub use error::{Error, Result};

/// Version tag written into every JSON artifact produced by the crate.
pub const SCHEMA_VERSION: u32 = 1;
