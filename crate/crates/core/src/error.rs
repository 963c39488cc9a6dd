use nalgebra::DMatrix;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {gap:e})")]
    NotSymmetric { row: usize, col: usize, gap: f64 },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A moment (modular or matrix) is not finite for the given parameters.
    #[error("{what} does not exist: requires {condition}")]
    MomentDoesNotExist { what: String, condition: String },

    #[error("degenerate distribution: n = {n} must be at least p = {p}")]
    Degenerate { n: usize, p: usize },

    #[error("memory budget exceeded: {required} bytes required, budget is {budget} bytes")]
    BudgetExceeded { required: u128, budget: u64 },

    #[error("no convergence after {iterations} iterations (relative residual {residual:e})")]
    Convergence {
        iterations: usize,
        residual: f64,
        last: Box<DMatrix<f64>>,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numerically singular draw (condition number {condition:e})")]
    SingularDraw { condition: f64 },

    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    #[error("record {record} is not a valid SPD matrix: {source}")]
    InvalidRecord {
        record: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn moment(what: impl Into<String>, condition: impl Into<String>) -> Self {
        Error::MomentDoesNotExist {
            what: what.into(),
            condition: condition.into(),
        }
    }
}
