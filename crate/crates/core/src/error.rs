use thiserror::Error;

/// Error type shared across the crate.
///
/// Variants are grouped by the process exit code they map to:
/// configuration problems exit with 1, numerical failures with 2 and
/// violated acceptance checks with 3.
#[derive(Debug, Error)]
pub enum Error {
    #[error("config error: {0}")]
    Config(String),

    #[error("dimension mismatch for `{arg}`: expected {expected}, got {got}")]
    DimensionMismatch {
        arg: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("divergence at step {step}: |x| = {norm:.3e}")]
    Divergence { step: usize, norm: f64 },

    #[error("target unbounded - C_gamma assumption violated at t = {t:.4}")]
    TargetUnbounded { t: f64 },

    #[error("exponential stability assumption violated on this path: fitted beta = {beta:.3e}")]
    StabilityViolated { beta: f64 },

    #[error("noise family too heavy-tailed: no stable exponent on the calibration grid")]
    HeavyTailedNoise,

    #[error("no admissible concentration constant: bound family does not dominate the empirical tail")]
    ConcentrationCalibration,

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("acceptance violation: {0}")]
    Acceptance(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 config, 2 numerical, 3 acceptance.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::Acceptance(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
