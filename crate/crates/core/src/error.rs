use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("matrix is not positive definite: {0}")]
    NotPositive(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("label out of range: {0}")]
    OutOfRange(String),
    #[error("invalid device graph: {0}")]
    InvalidGraph(String),
    #[error("schedule does not match device model: {0}")]
    ScheduleMismatch(String),
    #[error("shot count {0} is not representable")]
    ShotOverflow(u64),
    #[error("missing circuits for {target}: {detail}")]
    MissingCircuits { target: String, detail: String },
    #[error("observable is degenerate; compatible observables are not restricted to the diagonal")]
    DegenerateObservable,
    #[error("problem {problem} failed: {source}")]
    Problem {
        problem: String,
        #[source]
        source: Box<Error>,
    },
    #[error("optimizer did not converge: {0}")]
    NotConverged(String),
    #[error("malformed data: {0}")]
    Malformed(String),
}

impl Error {
    pub fn in_problem(self, problem: impl Into<String>) -> Error {
        Error::Problem { problem: problem.into(), source: Box::new(self) }
    }
}
