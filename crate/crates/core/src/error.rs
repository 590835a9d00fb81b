use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },
    #[error("negative jump law of component {component} has no finite mean")]
    InfiniteNegativeMean { component: usize },
    #[error("quadrature on [{a}, {b}] did not converge (error estimate {err:e})")]
    QuadratureFailure { a: f64, b: f64, err: f64 },
    #[error("exact path sampling needs sigma = 0 (got sigma = {sigma})")]
    ExactModeUnavailable { sigma: f64 },
    #[error("exact engine needs a bounded-variation finite-activity model (sigma = {sigma})")]
    UnsupportedModel { sigma: f64 },
    #[error("barrier must be non-negative (got {0})")]
    InvalidBarrier(f64),
    #[error("affine solve for p* is degenerate: E[exp(-q kappa)] and E[exp(-q T)] coincide within noise")]
    DegenerateDenominator,
    #[error("beta * nu(b) stays >= 1 on the whole barrier grid")]
    NoCrossing,
    #[error("value grid [{lo}, {hi}] too narrow to evaluate the generator at x = {x}")]
    GridTooNarrow { x: f64, lo: f64, hi: f64 },
    #[error("pathwise checks need the exact engine (sigma = {sigma})")]
    EngineUnavailable { sigma: f64 },
    #[error("alpha ladder must be strictly ascending")]
    InvalidLadder,
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { field: field.into(), reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
