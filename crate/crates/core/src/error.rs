use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("adjacency matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("network needs at least 2 actors, got {0}")]
    TooSmall(usize),
    #[error("adjacency diagonal entry {0} is nonzero")]
    NonzeroDiagonal(usize),
    #[error("network declared undirected but A[{i},{j}] != A[{j},{i}]")]
    AsymmetricUndirected { i: usize, j: usize },
    #[error("actor {0} has no ties")]
    IsolatedActor(usize),
    #[error("network has no edges")]
    NoEdges,
    #[error("power iteration did not converge in {0} iterations")]
    NoConvergence(usize),
    #[error("column {0} has zero variance")]
    ZeroVariance(usize),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("design matrix {0} is not of full column rank")]
    RankDeficient(String),
    #[error("column {0} of W_x is proportional to the intercept")]
    ProportionalToIntercept(usize),
    #[error("invalid prior hyperparameter: {0}")]
    InvalidPrior(String),
    #[error("variant {0} is not supported here")]
    UnsupportedVariant(String),
    #[error("influence matrix (I - R_eps A) is numerically singular")]
    SingularInfluence,
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("non-finite iterate at iteration {0}")]
    NonFiniteIterate(usize),
    #[error("linear solve failed in step {0}")]
    RankDeficientStep(u8),
    #[error("covariance matrix is degenerate")]
    DegenerateCovariance,
    #[error("optimization failed: {0}")]
    OptimFailed(String),
    #[error("{rejected} of {proposed} proposals were inadmissible")]
    ExcessiveRejection { rejected: usize, proposed: usize },
    #[error("at least {needed} draws are required, got {got}")]
    InsufficientDraws { needed: usize, got: usize },

    #[error("ego set is empty")]
    EmptyEgoSet,
    #[error("invalid ego set: {0}")]
    InvalidEgo(String),
    #[error("covariates missing for alter {0}")]
    MissingAlterCovariates(usize),

    #[error("study aborted: {failed} of {total} replicates failed")]
    StudyAborted { failed: usize, total: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
