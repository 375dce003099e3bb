use thiserror::Error;

/// Errors produced across the simulator.
#[derive(Debug, Error)]
pub enum DansfError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("failed to generate a connected graph after {attempts} attempts")]
    GenerationFailure { attempts: usize },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("transfer recorded on unknown edge ({from}, {to})")]
    AccountingError { from: usize, to: usize },

    #[error("node id {node} out of range 1..={num_nodes}")]
    NodeOutOfRange { node: usize, num_nodes: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,

    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),

    #[error("constraint matrix is rank deficient")]
    RankDeficientConstraint,

    #[error("iteration {iteration} aborted at node {node}: {reason}")]
    IterationAbort {
        iteration: usize,
        node: usize,
        reason: String,
    },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, DansfError>;
