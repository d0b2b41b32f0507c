use thiserror::Error;

/// Everything that can go wrong while configuring or running a simulation.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("pairing scale must be nonzero")]
    ZeroScale,

    #[error("user index {index} out of range for K = {num_users}")]
    UserIndex { index: usize, num_users: usize },

    #[error("degenerate draw: {0}")]
    Degenerate(Degeneracy),

    #[error("noise covariance is singular; use the noiseless exactness path")]
    SingularCovariance,

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient episodes: need at least {required}, got {got}")]
    InsufficientEpisodes { required: usize, got: usize },

    #[error("i/o failure: {0}")]
    Io(String),
}

/// Measure-zero channel draws that make a decoder step ill-posed. The
/// harness resamples the episode and counts the event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Degeneracy {
    /// A channel coefficient used as a divisor fell below the floor.
    SmallCoefficient { magnitude: f64 },
    /// The output-feedback difference system is near-singular.
    IllConditioned { condition_number: f64 },
}

impl std::fmt::Display for Degeneracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Degeneracy::SmallCoefficient { magnitude } => {
                write!(f, "channel coefficient magnitude {magnitude:e} below floor")
            }
            Degeneracy::IllConditioned { condition_number } => {
                write!(f, "difference system condition number {condition_number:e}")
            }
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
