use thiserror::Error;

/// Exit codes.
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICS: i32 = 3;
pub const EXIT_ACCEPTANCE: i32 = 4;
pub const EXIT_IO: i32 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] phasemeas::Error),
    #[error("acceptance check failed: {0}")]
    Acceptance(String),
    #[error("{op}: {source}")]
    Io {
        op: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Core(e) if e.is_numerical() => EXIT_NUMERICS,
            CliError::Core(_) => EXIT_CONFIG,
            CliError::Acceptance(_) => EXIT_ACCEPTANCE,
            CliError::Io { .. } => EXIT_IO,
        }
    }

    pub fn io(op: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let op = op.into();
        move |source| CliError::Io { op, source }
    }
}
