use thiserror::Error;

/// Errors raised by the model, barrier, controller and simulation layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Front-wheel angle reached the `tan` singularity guard band.
    #[error("steering angle {gamma} rad is within the guard band of ±π/2")]
    SteeringSingularity { gamma: f64 },

    /// A barrier argument was not strictly positive.
    #[error("constraint violated: {what} (value {value})")]
    ConstraintViolated { what: String, value: f64 },

    /// Barrier gradient too small to define a heading.
    #[error("barrier gradient vanished (norm {norm})")]
    ZeroGradient { norm: f64 },

    /// The closed-form steering law hit a near-zero denominator.
    #[error("steering denominator {denominator} below threshold")]
    DegenerateDenominator { denominator: f64 },

    /// Speed matching against a neighbour whose bearing is perpendicular to our motion.
    #[error("speed matching degenerate against agent {neighbor}")]
    MatchingDegenerate { neighbor: u32 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn violated(what: impl Into<String>, value: f64) -> Self {
        Error::ConstraintViolated {
            what: what.into(),
            value,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
