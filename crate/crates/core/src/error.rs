use thiserror::Error;

/// Errors produced by the model, the capacity engines and the CLI plumbing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("phase of the zero sample is undefined")]
    UndefinedPhase,
    #[error("noise standard deviation is zero; the phase density is degenerate")]
    DegenerateNoise,
    #[error("{0} does not support dithered constellations")]
    DitheredUnsupported(&'static str),
    #[error("quadrature did not converge on [{lo}, {hi}] (error estimate {estimate:e})")]
    Quadrature { lo: f64, hi: f64, estimate: f64 },
    #[error("integer overflow while computing {0}")]
    Overflow(String),
    #[error("at least {min} Monte Carlo trials are required, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
