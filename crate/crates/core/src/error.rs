use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero-norm embedding")]
    ZeroNorm,

    #[error("embedding has a non-finite component")]
    NonFinite,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    #[error("subtitle parse error in cue block {block}: {reason}")]
    Srt { block: usize, reason: String },

    #[error("RTTM parse error on line {line}: {reason}")]
    Rttm { line: usize, reason: String },

    #[error("annotation parse error: {0}")]
    Annotation(String),

    #[error("feature file error on line {line}: {reason}")]
    Features { line: usize, reason: String },

    #[error("turn-score file error on line {line}: {reason}")]
    TurnScores { line: usize, reason: String },

    #[error("invalid program: {0}")]
    Program(String),

    #[error("line {line_id} has no {what}")]
    MissingLine { line_id: usize, what: &'static str },

    #[error("missing turn decision for pair ({0}, {1})")]
    MissingDecision(usize, usize),

    #[error("segment boundaries differ between reference and hypothesis: {0}")]
    BoundaryMismatch(String),

    #[error("eigendecomposition did not converge")]
    NoConvergence,

    #[error(
        "could not sample {n} prototypes in dimension {dim} with pairwise cosine <= {max_cos}"
    )]
    InfeasibleSynth { n: usize, dim: usize, max_cos: f64 },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Stream(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
