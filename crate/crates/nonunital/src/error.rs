//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors raised by the simulation and analysis routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Two operands disagree on their qubit count.
    #[error("qubit count mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    /// A Pauli string could not be parsed.
    #[error("invalid Pauli string {0:?}")]
    InvalidPauli(String),

    /// A Kraus family fails the completeness relation.
    #[error("Kraus operators are not trace preserving (deviation {0:.3e})")]
    NotTracePreserving(f64),

    /// A Pauli transfer matrix does not describe a trace-preserving map.
    #[error("invalid Pauli transfer matrix: {0}")]
    InvalidPtm(String),

    /// An operation needs a strictly contractive channel but received a unitary one.
    #[error("channel is unitary (c = {0}); no finite truncation depth exists")]
    UnitaryChannel(f64),

    /// A parameter is outside its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The dense simulator was asked to hold more qubits than its cap allows.
    #[error("{n} qubits exceed the dense simulator cap of {cap}")]
    OracleCap { n: usize, cap: usize },

    /// A propagated observable outgrew the configured support cap.
    #[error("light-cone support of {needed} qubits exceeds the cap of {cap}")]
    SupportCap { needed: usize, cap: usize },

    /// The exact second-moment recursion outgrew its state-space cap.
    #[error("second-moment state space of {needed} supports exceeds the cap of {cap}")]
    StateSpaceCap { needed: usize, cap: usize },

    /// A configuration file or flag combination was rejected.
    #[error("configuration error: {0}")]
    Config(String),

    /// Reading input or writing results failed.
    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// True for errors caused by a resource cap rather than by invalid input.
    pub fn is_resource_cap(&self) -> bool {
        matches!(
            self,
            Error::OracleCap { .. } | Error::SupportCap { .. } | Error::StateSpaceCap { .. }
        )
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
