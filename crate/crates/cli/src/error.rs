use energy_prior::Error as CoreError;

/// Failures carrying their process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{0}")]
    Io(String),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_DIVERGENCE: i32 = 2;
pub const EXIT_IO: i32 = 3;

/// Exit code for the first classifiable error in the chain; validation otherwise.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Validation(_) => EXIT_VALIDATION,
                CliError::Divergence(_) => EXIT_DIVERGENCE,
                CliError::Io(_) => EXIT_IO,
            };
        }
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::Divergence { .. } | CoreError::NonFinite(_) => EXIT_DIVERGENCE,
                CoreError::Io(_) | CoreError::Checkpoint(_) => EXIT_IO,
                _ => EXIT_VALIDATION,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}
