use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// What went wrong on a specific line of an input file.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseErrorKind {
    #[error("dimension mismatch: expected {expected} values, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value `{0}`")]
    NonFinite(String),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("zero vector for `{0}`")]
    ZeroVector(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
    #[error("unknown gender `{0}`")]
    UnknownGender(String),
    #[error("invalid number `{0}`")]
    InvalidNumber(String),
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("malformed line: {0}")]
    Malformed(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {kind}")]
    Parse { line: usize, kind: ParseErrorKind },
    #[error("empty table: {0}")]
    EmptyTable(&'static str),
    #[error("missing {what} for utterance `{id}`")]
    Missing { what: &'static str, id: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("degenerate cohort: standard deviation {sigma:e} below {epsilon:e}")]
    DegenerateCohort { sigma: f64, epsilon: f64 },
    #[error("empty cohort")]
    EmptyCohort,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least one target and one nontarget trial (got {targets} targets, {nontargets} nontargets)")]
    SingleClass { targets: usize, nontargets: usize },
    #[error("trial {index} has no target/nontarget label")]
    UnlabelledTrial { index: usize },
    #[error("calibration did not converge after {iterations} iterations (gradient inf-norm {grad_norm:e})")]
    NonConvergence { iterations: usize, grad_norm: f64 },
    #[error("missing feature `{0}`")]
    MissingFeature(String),
    #[error("duplicate feature `{0}`")]
    DuplicateFeature(String),
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("recipe mismatch: model expects [{expected}], got [{found}]")]
    RecipeMismatch { expected: String, found: String },
    #[error("impossible quota for {stratum}: requested {requested}, achievable {achievable}")]
    ImpossibleQuota {
        stratum: String,
        requested: usize,
        achievable: usize,
    },
    #[error(
        "trial {index} does not match score file entry: expected `{expected}`, found `{found}`"
    )]
    KeyMismatch {
        index: usize,
        expected: String,
        found: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, kind: ParseErrorKind) -> Self {
        Error::Parse { line, kind }
    }

    pub(crate) fn missing(what: &'static str, id: impl Into<String>) -> Self {
        Error::Missing {
            what,
            id: id.into(),
        }
    }
}
