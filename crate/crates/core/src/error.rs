use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NvError {
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid subsystem selector: {0}")]
    Selector(String),
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("coherence not reachable by local pulses: {0}")]
    Unreachable(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl NvError {
    /// Stable machine-readable name of the error kind.
    pub fn code(&self) -> &'static str {
        match self {
            NvError::NotHermitian(_) => "not_hermitian",
            NvError::NonFinite => "non_finite",
            NvError::Dimension(_) => "dimension",
            NvError::Selector(_) => "selector",
            NvError::Syntax { .. } => "syntax",
            NvError::InvalidArgument(_) => "invalid_argument",
            NvError::Fit(_) => "fit_failed",
            NvError::Unreachable(_) => "unreachable",
            NvError::InvalidState(_) => "invalid_state",
            NvError::Config(_) => "config_invalid",
            NvError::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, NvError>;
