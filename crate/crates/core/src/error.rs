use thiserror::Error;

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{what} references unknown bus {bus}")]
    DanglingBus { what: String, bus: i64 },
    #[error("invalid case: {0}")]
    Invariant(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Case(#[from] CaseError),
}

#[derive(Debug, Error)]
pub enum BindingError {
    #[error("binding status requires an optimal solution, solver status was {0}")]
    NotOptimal(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum KktError {
    #[error("KKT matrix is singular (condition estimate {condition_estimate:e})")]
    Singular { condition_estimate: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("sweep has {points} points, above the cap of {cap}")]
    CapExceeded { points: usize, cap: usize },
    #[error("every sweep point was infeasible")]
    AllInfeasible,
    #[error("no varying outputs: every constraint has a constant binding status")]
    NoVaryingOutputs,
    #[error("training diverged at epoch {epoch} (loss is not finite)")]
    Divergence { epoch: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Error)]
pub enum RiskError {
    #[error("alpha must lie in (0, 1), got {0}")]
    AlphaOutOfRange(f64),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("length mismatch: {0} distributions, {1} alphas")]
    LengthMismatch(usize, usize),
    #[error("bound {index}: d_min {d_min} exceeds d_max {d_max}")]
    InvalidBounds { index: usize, d_min: f64, d_max: f64 },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}
