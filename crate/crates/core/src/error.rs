use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("invalid label: {0}")]
    Label(String),
    #[error("infeasible configuration: {0}")]
    Config(String),
    #[error("class {0} has no training windows")]
    ClassAbsent(&'static str),
    #[error("backward called before forward")]
    NoForward,
    #[error("loss diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
}

/// `Err(Error::Shape(format!(..)))` shorthand.
macro_rules! shape_err {
    ($($t:tt)*) => { $crate::Error::Shape(alloc::format!($($t)*)) };
}
pub(crate) use shape_err;
