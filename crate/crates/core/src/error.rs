use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("need at least 5 tail samples to fit a generalized Pareto distribution, got {0}")]
    TooFewTailSamples(usize),
    #[error("exceedance at position {0} is not strictly positive")]
    NonPositiveExceedance(usize),
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("no sample values exceed the tail cutoff")]
    DegenerateTail,
    #[error("importance weights for observation {0} are degenerate")]
    DegenerateWeights(usize),
    #[error("too few observations: {0}")]
    TooFewObservations(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty vector")]
    EmptyVector,
    #[error("need at least {need} models, got {got}")]
    TooFewModels { need: usize, got: usize },
    #[error("sigma must be strictly positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("standard error must be strictly positive, got {0}")]
    NonPositiveSe(f64),
    #[error("non-finite value in {0}")]
    NonFiniteInput(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("no candidate predictors left (requested size {requested}, only {available} predictors)")]
    EmptyCandidateSet { requested: usize, available: usize },
    #[error("search path did not retain per-step candidate differences")]
    MissingCandidateDiffs,
    #[error("search path has {got} steps but the rule needs the full path of {need}")]
    IncompletePath { need: usize, got: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("invalid blocking: {0}")]
    InvalidBlocking(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot read input {path}: {source}")]
    UnreadableInput {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
