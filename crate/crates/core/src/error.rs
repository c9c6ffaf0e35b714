use std::path::PathBuf;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::smiles::SmilesError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Smiles(#[from] SmilesError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("atom {atom} has degree {degree}, outside the weight bank")]
    DegreeOverflow { atom: usize, degree: usize },
    #[error("embedding corpus needs at least 2 molecules, got {0}")]
    CorpusTooSmall(usize),
    #[error("loss became non-finite")]
    NonFiniteLoss,
    #[error("particle update became non-finite")]
    NonFiniteUpdate,
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no prediction records")]
    EmptyRecords,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("unlabeled pool exhausted")]
    PoolExhausted,
    #[error("no molecules match family {0}")]
    EmptyFamily(String),
    #[error("file not found: {0}")]
    FileNotFound(PathBuf),
    #[error("missing column {0}")]
    MissingColumn(String),
    #[error("no valid rows in dataset")]
    NoValidRows,
    #[error("invalid split fractions: {0}")]
    FractionInvalid(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Smiles(_) => "SmilesError",
            Error::Autodiff(_) => "AutodiffError",
            Error::DegreeOverflow { .. } => "DegreeOverflow",
            Error::CorpusTooSmall(_) => "CorpusTooSmall",
            Error::NonFiniteLoss => "NonFiniteLoss",
            Error::NonFiniteUpdate => "NonFiniteUpdate",
            Error::EmptyBatch => "EmptyBatch",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::EmptyRecords => "EmptyRecords",
            Error::LengthMismatch(..) => "LengthMismatch",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::PoolExhausted => "PoolExhausted",
            Error::EmptyFamily(_) => "EmptyFamily",
            Error::FileNotFound(_) => "FileNotFound",
            Error::MissingColumn(_) => "MissingColumn",
            Error::NoValidRows => "NoValidRows",
            Error::FractionInvalid(_) => "FractionInvalid",
            Error::Format(_) => "Format",
            Error::Io(_) => "Io",
            Error::Csv(_) => "Csv",
            Error::Json(_) => "Json",
        }
    }
}
