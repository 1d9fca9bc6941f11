use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("degree error: {0}")]
    Degree(String),
    #[error("metric is not positive-definite: {0}")]
    Metric(String),
    #[error("3-form is not positive at point {point}: smallest eigenvalue {min_eig:e}")]
    NotPositive { point: usize, min_eig: f64 },
    #[error("type decomposition failed: least-squares residual {residual:e} at point {point}")]
    Decomposition { point: usize, residual: f64 },
    #[error("operation requires a constant (flat) metric field")]
    FlatOnly,
    #[error("operation requires a closed 3-form: |d phi| = {0:e}")]
    Closedness(f64),
    #[error("scaling by {0} does not preserve the fixed orientation")]
    Orientation(f64),
    #[error("scale function undefined: 1 + 2/3 rho t = {0} < 0")]
    Singularity(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("grid mismatch: {0}")]
    Grid(String),
    #[error("field file: {0}")]
    FieldIo(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
