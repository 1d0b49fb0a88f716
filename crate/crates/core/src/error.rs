use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    /// A value, query bound, or parameter lies outside its domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// Vector or matrix dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),
    /// The requested dense structure exceeds the configured memory gate.
    #[error("capacity error: {0}")]
    Capacity(String),
    /// An optimization problem has no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! domain_err {
    ($($arg:tt)*) => { $crate::error::Error::Domain(format!($($arg)*)) };
}
macro_rules! shape_err {
    ($($arg:tt)*) => { $crate::error::Error::Shape(format!($($arg)*)) };
}
pub(crate) use domain_err;
pub(crate) use shape_err;
