use std::fmt;

/// Failure of a CLI command, mapped to a process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad command line or configuration file; `line` is 0 when the
    /// problem is not tied to a line.
    Config { line: usize, message: String },
    Core(chdg::Error),
    /// `ch check` found failing invariants.
    CheckFailed(usize),
    Io(std::io::Error),
}

impl CliError {
    pub fn config(line: usize, message: impl Into<String>) -> Self {
        CliError::Config { line, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::config(0, message)
    }

    pub fn exit_code(&self) -> i32 {
        use chdg::Error as E;
        match self {
            CliError::Config { .. } => 2,
            CliError::Core(E::Divergence { .. } | E::NumericalBreakdown(_)) => 3,
            CliError::Core(
                E::InvalidOrder(_)
                | E::InvalidArgument(_)
                | E::InvalidGeometry { .. }
                | E::Parse { .. }
                | E::Connectivity(_)
                | E::Configuration(_)
                | E::DegenerateNodes(..),
            ) => 2,
            CliError::CheckFailed(_) => 4,
            CliError::Core(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { line: 0, message } => write!(f, "configuration error: {message}"),
            CliError::Config { line, message } => write!(f, "configuration error at line {line}: {message}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::CheckFailed(n) => write!(f, "{n} check(s) failed"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<chdg::Error> for CliError {
    fn from(e: chdg::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}
