use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty sample")]
    EmptySample,

    #[error("particle reached window edge at site {site}, t = {time}")]
    WindowBoundaryContact { site: u32, time: f64 },

    #[error("state blow-up: {size} elements exceeds cap {cap}")]
    StateBlowUp { size: usize, cap: usize },

    #[error("enumeration cap exceeded: {visited} nodes, cap {cap}")]
    EnumerationCapExceeded { visited: u64, cap: u64 },

    #[error("series divergent: requires 2*lambda < 1, got lambda = {lambda}")]
    SeriesDivergent { lambda: f64 },

    #[error("fit needs at least {needed} usable points, got {got}")]
    DegenerateFit { needed: usize, got: usize },

    #[error("malformed event table: {0}")]
    FormatError(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
