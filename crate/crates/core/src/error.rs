use thiserror::Error;

/// Failure while evaluating a model or its derivatives.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("exponent argument {arg} out of range (|arg| > {limit})")]
    Overflow { arg: f64, limit: f64 },
    #[error("non-finite model value {value} at observation {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("evaluation failed at observation {index}: {source}")]
    AtObservation {
        index: usize,
        #[source]
        source: Box<EvalError>,
    },
}

impl EvalError {
    /// Attach the observation index to an evaluation failure.
    pub fn at(self, index: usize) -> Self {
        match self {
            EvalError::NonFinite { value, .. } => EvalError::NonFinite { index, value },
            e @ EvalError::AtObservation { .. } => e,
            e => EvalError::AtObservation {
                index,
                source: Box::new(e),
            },
        }
    }

    /// Observation index, when known.
    pub fn index(&self) -> Option<usize> {
        match self {
            EvalError::NonFinite { index, .. } | EvalError::AtObservation { index, .. } => {
                Some(*index)
            }
            EvalError::Overflow { .. } => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown model '{0}'")]
    UnknownModel(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("linear system is not positive definite")]
    NotPositiveDefinite,
    #[error("predicted decrease {0} is not positive")]
    DegenerateModel(f64),
    #[error("tolerance undefined: similarity matrix has no finite off-diagonal entries")]
    UndefinedTolerance,
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
