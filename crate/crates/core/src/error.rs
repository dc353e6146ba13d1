use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the routing core.
///
/// Variants that concern a specific record carry its id so callers can point
/// at the offending input.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    QualityOutOfRange { value: f64 },
    GainOutOfRange { value: f64 },
    InvalidDirection(String),
    InvalidRecord { id: String, reason: String },
    DuplicateId(String),
    /// A labeled operation hit a record without the required quality score.
    IncompleteLabels { id: String },
    /// Decisions and records do not cover the same ids.
    Alignment(String),
    /// A scorer needs a signal the record does not carry.
    MissingSignal { id: String, signal: &'static str },
    DimensionMismatch { expected: usize, found: usize },
    LengthMismatch { left: usize, right: usize },
    InvalidParameter { name: &'static str, value: f64 },
    EmptyInput(&'static str),
    InvalidFrequency { token: String, value: f64 },
    DuplicateToken(String),
    DegenerateSplit { train: usize, heldout: usize },
    /// The normal equations are singular and no ridge penalty was given.
    RegularizationRequired,
    /// The system is not positive definite even with the ridge penalty.
    NotPositiveDefinite,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::QualityOutOfRange { value } => {
                write!(f, "quality score {value} outside [0, 100]")
            }
            Error::GainOutOfRange { value } => write!(f, "gain {value} outside [-100, 100]"),
            Error::InvalidDirection(tag) => write!(
                f,
                "invalid direction {tag:?}: expected <src>-<tgt> with two distinct lowercase language codes"
            ),
            Error::InvalidRecord { id, reason } => write!(f, "record {id:?}: {reason}"),
            Error::DuplicateId(id) => write!(f, "duplicate record id {id:?}"),
            Error::IncompleteLabels { id } => {
                write!(f, "record {id:?} is missing a quality label")
            }
            Error::Alignment(msg) => write!(f, "decisions do not align with records: {msg}"),
            Error::MissingSignal { id, signal } => {
                write!(f, "record {id:?} has no {signal} signal")
            }
            Error::DimensionMismatch { expected, found } => {
                write!(f, "feature dimension mismatch: expected {expected}, found {found}")
            }
            Error::LengthMismatch { left, right } => {
                write!(f, "length mismatch: {left} vs {right}")
            }
            Error::InvalidParameter { name, value } => write!(f, "invalid {name}: {value}"),
            Error::EmptyInput(what) => write!(f, "empty input: {what}"),
            Error::InvalidFrequency { token, value } => {
                write!(f, "token {token:?} has frequency {value} outside (0, 1]")
            }
            Error::DuplicateToken(token) => write!(f, "duplicate token {token:?}"),
            Error::DegenerateSplit { train, heldout } => write!(
                f,
                "degenerate split: {train} train / {heldout} held-out records"
            ),
            Error::RegularizationRequired => {
                f.write_str("normal equations are singular; use lambda > 0")
            }
            Error::NotPositiveDefinite => f.write_str("normal equations are not positive definite"),
        }
    }
}

impl core::error::Error for Error {}
