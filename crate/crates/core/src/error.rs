use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty evaluation set: {0}")]
    EmptyEvaluation(String),
    #[error("invalid crop: {0}")]
    InvalidCrop(String),
}

/// `format!`-style constructor for [`Error::InvalidShape`].
#[macro_export]
#[doc(hidden)]
macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::Error::InvalidShape(alloc::format!($($arg)*))
    };
}
