use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("network must have at least one source, one target and one edge")]
    EmptyNetwork,
    #[error("duplicate edge ({source_id}, {target_id})")]
    DuplicateEdge {
        source_id: String,
        target_id: String,
    },
    #[error("edge ({source_id}, {target_id}) references an unknown node")]
    DanglingEdge {
        source_id: String,
        target_id: String,
    },
    #[error("duplicate node id {0}")]
    DuplicateNode(String),
    #[error("capacity of source {source_id} must be strictly positive, got {value}")]
    NonpositiveCapacity { source_id: String, value: f64 },
    #[error("node {0} has no incident edge")]
    IsolatedNode(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("belief at target {node} is not a probability vector: ({minor}, {major})")]
    InvalidBelief { node: usize, minor: f64, major: f64 },
    #[error("regularization weight must be positive for the exponential update; use the unregularized solver")]
    ZeroLambda,
    #[error("perturbation {value} at target {node} is below the floor {floor}")]
    PerturbationBelowFloor { node: usize, value: f64, floor: f64 },
    #[error("belief update denominator vanished at target {0}")]
    DegenerateDenominator(usize),
    #[error("stage {stage} did not reach an equilibrium")]
    StageNotConverged { stage: usize },
    #[error("corrupt message log: {0}")]
    CorruptLog(String),
}
