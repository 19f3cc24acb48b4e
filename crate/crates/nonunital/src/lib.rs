//! Simulation and analysis of quantum circuits interleaved with arbitrary,
//! possibly non-unital, single-qubit noise.
//!
//! The crate is organised bottom-up:
//!
//! * [`pauli`]: bit-packed Pauli strings and two-qubit Clifford tableaux.
//! * [`channels`]: Kraus, Pauli-transfer-matrix and normal-form descriptions
//!   of single-qubit channels together with their contraction constants.
//! * [`circuit`]: coupling graphs, gate sampling and the noisy circuit model.
//! * [`dense_sim`]: exact density-matrix and Pauli-vector simulators used as
//!   ground truth.
//! * [`lightcone`]: Heisenberg back-propagation inside the light cone with a
//!   spectral early-break certificate.
//! * [`moments`]: Monte-Carlo statistics, the exact second-moment recursion
//!   and closed-form bound calculators.
//! * [`cli`]: experiment configuration, runners and CSV output.

pub mod channels;
pub mod circuit;
pub mod cli;
pub mod dense_sim;
pub mod error;
pub mod lightcone;
pub mod moments;
pub mod pauli;
pub mod rng;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
