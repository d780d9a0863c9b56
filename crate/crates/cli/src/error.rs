use std::path::PathBuf;
use std::process::ExitCode;

use thiserror::Error;

/// Exit statuses, also listed in `--help`.
pub mod code {
    pub const OK: u8 = 0;
    pub const OTHER: u8 = 1;
    pub const USAGE: u8 = 2;
    pub const IO: u8 = 3;
    pub const FORMAT: u8 = 4;
    pub const INTEGRITY: u8 = 5;
    pub const TEACHER: u8 = 6;
    pub const INVALID: u8 = 7;
}

pub const EXIT_CODE_HELP: &str = "\
Exit status:
  0  success
  1  any other failure
  2  usage error (unknown key, missing required setting)
  3  missing or unreadable input, unwritable output
  4  malformed input file (JSONL, TSV, checkpoint, config)
  5  integrity error (inconsistent inputs, missing latent relevance)
  6  teacher failure (endpoint status, transport, unparseable reply)
  7  invalid argument value";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Lib(#[from] idistill::Error),

    #[error("usage: {0}")]
    Usage(String),

    #[error("invalid value for {key}: {message}")]
    Value { key: String, message: String },

    #[error("{path}: missing input")]
    MissingInput { path: PathBuf },

    #[error("{path}:{line}: {message}")]
    Config {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("sweep aborted: {0}")]
    Sweep(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn category(&self) -> &'static str {
        match self.code() {
            code::USAGE => "usage",
            code::IO => "io",
            code::FORMAT => "format",
            code::INTEGRITY => "integrity",
            code::TEACHER => "teacher",
            code::INVALID => "invalid argument",
            code::OTHER => "error",
            _ => "unknown",
        }
    }

    pub fn code(&self) -> u8 {
        use idistill::Error as E;
        match self {
            CliError::Usage(_) => code::USAGE,
            CliError::Value { .. } => code::INVALID,
            CliError::MissingInput { .. } | CliError::Io { .. } => code::IO,
            CliError::Config { .. } => code::FORMAT,
            CliError::Sweep(_) => code::OTHER,
            CliError::Lib(e) => match e {
                E::InvalidArgument(_) | E::EmptyInput(_) => code::INVALID,
                E::Parse { .. }
                | E::Format(_)
                | E::VersionMismatch { .. }
                | E::Truncated(_)
                | E::DimensionMismatch { .. }
                | E::Checksum { .. }
                | E::Json(_) => code::FORMAT,
                E::Integrity(_) => code::INTEGRITY,
                E::Unparseable(_) | E::Transport { .. } | E::Endpoint { .. } => code::TEACHER,
                E::Io { .. } => code::IO,
            },
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code())
    }
}

pub type CliResult<T> = Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn library_errors_map_to_distinct_codes() {
        let cases = [
            (idistill::Error::Integrity("x".into()), code::INTEGRITY),
            (idistill::Error::Format("x".into()), code::FORMAT),
            (idistill::Error::Unparseable("x".into()), code::TEACHER),
            (idistill::Error::InvalidArgument("x".into()), code::INVALID),
        ];
        for (e, want) in cases {
            assert_eq!(CliError::from(e).code(), want);
        }
        assert_eq!(CliError::Usage("x".into()).code(), code::USAGE);
        assert_eq!(CliError::MissingInput { path: "a".into() }.code(), code::IO);
        assert_ne!(code::OK, code::OTHER);
    }
}
