use thiserror::Error;

/// Errors raised by the simulation and diagnostics layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("field value at node {node} is not on the unit sphere (|u| - 1 = {deviation:e})")]
    NotOnSphere { node: usize, deviation: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("partition point {0} does not lie on the step grid")]
    MisalignedPartition(usize),

    #[error("time step {dt:e} violates the stability bound; admissible dt <= {max_dt:e}")]
    Cfl { dt: f64, max_dt: f64 },

    #[error("anisotropy violates the smallness condition: G = {g_bar:e} >= threshold {threshold:e}")]
    Smallness { g_bar: f64, threshold: f64 },

    #[error("numerical blow-up at step {step} (t = {time:e}); reduce dt")]
    BlowUp { step: usize, time: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
