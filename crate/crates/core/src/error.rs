use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("unstable resonator: |(A+D)/2| = {half_trace}")]
    Unstable { half_trace: f64 },

    #[error("nonphysical beam: {0}")]
    NonphysicalBeam(String),

    #[error("singular beam parameter (q = 0)")]
    Singular,

    #[error("beam never leaves the cell: {0}")]
    NoExit(String),

    #[error("quadrature did not converge in pass {pass} at tau = {tau_s:e} s (error estimate {error:e})")]
    Quadrature { pass: usize, tau_s: f64, error: f64 },

    #[error("round trip cannot be split into decoupled blocks; eigenvalues {eigenvalues:?}")]
    NotDecouplable { eigenvalues: Vec<(f64, f64)> },

    #[error("beam radius {radius_mm:.4} mm in pass {pass} exceeds the transverse limit {limit_mm:.4} mm")]
    BeamTooWide { pass: usize, radius_mm: f64, limit_mm: f64 },

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Errors caused by the caller's configuration rather than a numerical failure.
    pub fn is_input_error(&self) -> bool {
        !matches!(self, Error::Quadrature { .. })
    }
}
