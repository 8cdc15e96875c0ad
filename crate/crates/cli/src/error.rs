use thiserror::Error;

/// CLI failures, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration or input data (exit 2).
    #[error("{0}")]
    Config(String),
    /// Numerical failure or a tolerance violation (exit 1).
    #[error("{0}")]
    Numeric(String),
    /// Writing outputs failed (exit 1).
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Numeric(_) | Self::Io { .. } => 1,
        }
    }

    pub fn numeric(e: impl std::fmt::Display) -> Self {
        Self::Numeric(e.to_string())
    }

    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| Self::Io { context, source }
    }
}
