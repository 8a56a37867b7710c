use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polynomial order {0}: must be at least 1")]
    InvalidOrder(usize),
    #[error("degenerate interpolation nodes: nodes {0} and {1} coincide")]
    DegenerateNodes(usize, usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid geometry in element {element}: {detail}")]
    InvalidGeometry { element: usize, detail: String },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("connectivity error: {0}")]
    Connectivity(String),
    #[error("configuration error: {0}")]
    Configuration(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("solution diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },
    #[error("invalid state: {0}")]
    State(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
