use thiserror::Error;

use crate::model::ItemId;

/// A `DecodeRequest` that breaks one of its structural invariants.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RequestError {
    #[error("empty candidates")]
    EmptyCandidates,
    #[error("empty item id")]
    EmptyItemId,
    #[error("empty logit vector for candidate {0}")]
    EmptyLogits(ItemId),
    #[error("inconsistent logit dimension: candidate {id} has dim {found}, expected {expected}")]
    InconsistentDimension { id: ItemId, expected: usize, found: usize },
    #[error("duplicate item id {0}")]
    DuplicateId(ItemId),
    #[error("zero-norm logit vector for candidate {0}")]
    ZeroNorm(ItemId),
    #[error("non-finite logit entry for candidate {0}")]
    NonFiniteLogit(ItemId),
    #[error("invalid probability {prob} for candidate {id}: must be finite and in (0, 1]")]
    InvalidProb { id: ItemId, prob: f64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field} out of {range}: got {value}")]
    OutOfRange {
        field: &'static str,
        range: &'static str,
        value: String,
    },
    #[error("invalid value for {field}: {value:?}")]
    InvalidValue { field: String, value: String },
    #[error("unknown config key(s): {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimilarityError {
    #[error("logit dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm logit vector")]
    ZeroNorm,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synth spec: {0}")]
    InvalidSpec(String),
    #[error(
        "catalog constraints unsatisfiable after {attempts} attempts \
         (intra-group target {target}, inter-group cap {cap}, dim {dim}, groups {groups})"
    )]
    Unsatisfiable {
        attempts: usize,
        target: f64,
        cap: f64,
        dim: usize,
        groups: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Request(#[from] RequestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("temperature must be finite and > 0, got {0}")]
    InvalidTemperature(f64),
    #[error("request {0} is missing ground_truth")]
    MissingGroundTruth(String),
    #[error("item {0} has no token code in the codebook")]
    MissingTokenCode(ItemId),
    #[error("invalid strategy: {0}")]
    Strategy(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    /// True when the error reflects a bug in the engine rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(self, Error::Internal(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
