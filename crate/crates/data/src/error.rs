use std::fmt;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug)]
pub enum DataError {
    Io(std::io::Error),
    /// A dataset line failed to parse, with its 1-based line number.
    BadRecord { line: usize, message: String },
    /// The mock backend has no completion for this prompt hash and no
    /// default entry.
    MockMiss { key: String },
    /// HTTP backend failure after exhausting retries.
    Backend { message: String },
    InvalidFraction { value: f64 },
    /// Too few records (or documents, in by-doc mode) to split.
    TooFewRecords { n: usize },
}

impl fmt::Display for DataError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Io(e) => write!(f, "io error: {e}"),
            Self::BadRecord { line, message } => {
                write!(f, "bad dataset record on line {line}: {message}")
            }
            Self::MockMiss { key } => {
                write!(f, "mock backend has no completion for prompt key {key} and no default")
            }
            Self::Backend { message } => write!(f, "completion backend failed: {message}"),
            Self::InvalidFraction { value } => {
                write!(f, "train fraction must be in (0, 1), got {value}")
            }
            Self::TooFewRecords { n } => write!(f, "cannot split {n} records"),
        }
    }
}

impl std::error::Error for DataError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Self::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for DataError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}
