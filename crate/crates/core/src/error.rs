use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the solver, trainer and data generators.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value at iteration {iteration}")]
    NonFinite { iteration: usize },

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        /// Last coefficient vector that was entirely finite.
        last_finite: Vec<f64>,
    },

    #[error("degenerate dynamic range")]
    DegenerateRange,

    #[error("degenerate signal: all {retries} draws gave H·x = 0")]
    DegenerateSignal { retries: usize },

    #[error("singular system: {0}")]
    Singular(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("example {index}: {source}")]
    Example {
        index: usize,
        #[source]
        source: alloc::boxed::Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn at_example(self, index: usize) -> Self {
        Error::Example {
            index,
            source: alloc::boxed::Box::new(self),
        }
    }

    /// Strips [`Error::Example`] wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Example { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
