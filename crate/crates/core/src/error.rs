use thiserror::Error;

#[derive(Debug, Error)]
pub enum MdnError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("singular triangular factor: diagonal entry {index} is {value:e}")]
    Singular { index: usize, value: f64 },

    #[error("invalid mixture parameters: {0}")]
    InvalidParams(String),

    #[error("non-finite activation in layer {layer}")]
    NonFiniteActivation { layer: usize },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("gradient tape already consumed")]
    TapeConsumed,

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl MdnError {
    pub(crate) fn shape(context: &'static str, expected: usize, got: usize) -> Self {
        MdnError::Shape {
            context,
            expected,
            got,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        MdnError::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            MdnError::Singular { .. }
                | MdnError::NonFiniteActivation { .. }
                | MdnError::NonFiniteGradient { .. }
                | MdnError::Diverged { .. }
        )
    }
}

pub type Result<T, E = MdnError> = std::result::Result<T, E>;
