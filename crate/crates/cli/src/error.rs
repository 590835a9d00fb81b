use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
    #[error(transparent)]
    Core(levy_refract::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// Wraps a core error, addressing bare parameter names by config block.
    pub fn from_core(block: &str, e: levy_refract::Error) -> Self {
        match e {
            levy_refract::Error::InvalidParameter { field, reason } => {
                let field = if field.contains('.') { field } else { format!("{block}.{field}") };
                CliError::Validation { field, reason }
            }
            other => CliError::Core(other),
        }
    }

    pub fn field(&self) -> Option<&str> {
        match self {
            CliError::Validation { field, .. } => Some(field),
            _ => None,
        }
    }
}

impl From<levy_refract::Error> for CliError {
    fn from(e: levy_refract::Error) -> Self {
        CliError::from_core("task", e)
    }
}
