use std::fmt;

/// Every way a command can fail, mapped onto the documented exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Bad arguments or configuration (exit 2).
    Usage(String),
    /// Unreadable, malformed or inconsistent input data (exit 3).
    Data(String),
    Core(ltx_core::Error),
}

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use ltx_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e {
                E::Config(_) => EXIT_USAGE,
                E::Numeric(_) | E::Tensor(_) => EXIT_NUMERIC,
                E::Input(_) | E::Io { .. } | E::Corrupt(_) | E::Version(_) | E::Mismatch(_) => EXIT_DATA,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ltx_core::Error> for CliError {
    fn from(e: ltx_core::Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
