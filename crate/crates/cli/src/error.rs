use odmlab_core::OdmError;

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DEGRADED: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, malformed input files, or parameters outside the family's domain.
    #[error("{0}")]
    Usage(String),
    /// The command ran but the numerical outcome is not trustworthy.
    #[error("{0}")]
    Degraded(String),
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
            CliError::Usage(_) | CliError::Io { .. } => EXIT_USAGE,
            CliError::Degraded(_) => EXIT_DEGRADED,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<OdmError> for CliError {
    fn from(e: OdmError) -> Self {
        match e {
            OdmError::Explosion { .. } | OdmError::GradientUndefined(_) | OdmError::FitFailed(_) => {
                CliError::Degraded(e.to_string())
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
