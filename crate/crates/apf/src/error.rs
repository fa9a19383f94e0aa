use std::fmt;

/// Failure of a command, classified by exit code.
#[derive(Debug)]
pub enum AppError {
    /// Bad flags or configuration (exit 1).
    Config(String),
    /// Unreadable or malformed data (exit 2).
    Data(String),
    /// A violated internal invariant (exit 3).
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> u8 {
        match self {
            AppError::Config(_) => 1,
            AppError::Data(_) => 2,
            AppError::Internal(_) => 3,
        }
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Config(m) => write!(f, "configuration error: {m}"),
            AppError::Data(m) => write!(f, "data error: {m}"),
            AppError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl std::error::Error for AppError {}

impl From<apf_core::Error> for AppError {
    fn from(e: apf_core::Error) -> Self {
        use apf_core::Error::*;
        match e {
            Config(_) | InvalidArgument(_) => AppError::Config(e.to_string()),
            InvalidInput(_) | Range(_) => AppError::Data(e.to_string()),
            Shape { .. } | Internal(_) => AppError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

macro_rules! data_errors {
    ($($t:ty),*) => {$(
        impl From<$t> for AppError {
            fn from(e: $t) -> Self {
                AppError::Data(e.to_string())
            }
        }
    )*};
}

data_errors!(
    crate::io::checkpoint::CheckpointError,
    crate::io::point_binary::PointBinaryError,
    crate::io::off::ParseError,
    crate::io::manifest::ManifestError,
    serde_json::Error
);

pub type AppResult<T> = Result<T, AppError>;
