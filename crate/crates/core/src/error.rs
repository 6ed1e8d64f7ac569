use thiserror::Error;

use crate::data::Modality;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the toolkit can report. Variant names are surfaced verbatim
/// by the CLI, so keep them stable.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("ZeroVector: row {0} has (near-)zero norm")]
    ZeroVector(usize),
    #[error("ParseError: line {line}: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("DimMismatch: expected dimension {expected}, found {found}")]
    DimMismatch { expected: usize, found: usize },
    #[error("NoClusters: DBSCAN found no clusters")]
    NoClusters,
    #[error("NoClusters: epoch {epoch}, modality {modality:?}")]
    NoClustersAt { epoch: usize, modality: Modality },
    #[error("EmptyCluster: cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("SlotOutOfRange: slot {slot} not in [0, {len})")]
    SlotOutOfRange { slot: usize, len: usize },
    #[error("MissingLabel: {0}")]
    MissingLabel(&'static str),
    #[error("EmptyBatch")]
    EmptyBatch,
    #[error("ScaleMismatch: banks hold {0} and {1} prototypes")]
    ScaleMismatch(usize, usize),
    #[error("EmptyMatch: matching matrix has no true entries")]
    EmptyMatch,
    #[error("MissingIds: {0} set carries no ground-truth identities")]
    MissingIds(&'static str),
    #[error("NoPositivePairs: no identity appears in both sets")]
    NoPositivePairs,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("Io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    /// Bare variant name, used as the first token of CLI error output.
    pub fn name(&self) -> &'static str {
        match self {
            Error::ZeroVector(_) => "ZeroVector",
            Error::ParseError { .. } => "ParseError",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::NoClusters | Error::NoClustersAt { .. } => "NoClusters",
            Error::EmptyCluster(_) => "EmptyCluster",
            Error::SlotOutOfRange { .. } => "SlotOutOfRange",
            Error::MissingLabel(_) => "MissingLabel",
            Error::EmptyBatch => "EmptyBatch",
            Error::ScaleMismatch(..) => "ScaleMismatch",
            Error::EmptyMatch => "EmptyMatch",
            Error::MissingIds(_) => "MissingIds",
            Error::NoPositivePairs => "NoPositivePairs",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "Io",
        }
    }
}
