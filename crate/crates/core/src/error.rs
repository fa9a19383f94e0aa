use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the pipeline kernels and models.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Input data violates a type invariant (non-finite coordinate, empty cloud, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// A call argument is out of its admissible range.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Operand shapes do not conform for the named operation.
    #[error("shape error in {kind}: {lhs:?} vs {rhs:?}")]
    Shape {
        kind: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A model or run configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A quantized coordinate does not fit the requested bit width.
    #[error("range error: {0}")]
    Range(String),
    /// An internal invariant was violated.
    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

macro_rules! bail {
    ($variant:ident, $($arg:tt)*) => {
        return Err($crate::error::Error::$variant(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
