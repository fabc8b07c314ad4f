use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-finite {quantity} at r = {r:?}, p = {p:?}")]
    NonFinite {
        quantity: &'static str,
        r: Vec<f64>,
        p: Vec<f64>,
    },

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: String,
        got: String,
    },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error(
        "{what} did not converge after {iterations} iterations (residual {residual:.3e}); try a smaller step size"
    )]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("step {step}: {source}")]
    Step { step: usize, source: Box<Error> },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                step,
                source: Box::new(e),
            },
        }
    }

    /// The innermost error, with any step context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Step { source, .. } => source.root(),
            e => e,
        }
    }
}
