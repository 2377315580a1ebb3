use std::fmt;

/// CLI failure, mapped to an exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad files, flags or model input: exit code 2.
    Input(String),
    /// A computation failed: exit code 3.
    Numerical(String),
    /// The reader of standard output went away.
    BrokenPipe,
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::BrokenPipe => 0,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) => write!(f, "input error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
            CliError::BrokenPipe => f.write_str("output closed"),
        }
    }
}

impl From<mbf_core::Error> for CliError {
    fn from(e: mbf_core::Error) -> Self {
        if e.is_input_error() {
            CliError::Input(e.to_string())
        } else {
            CliError::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            return CliError::BrokenPipe;
        }
        CliError::Input(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
