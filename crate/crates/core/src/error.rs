use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown scenario `{0}` (expected one of free, linear, harmonic, quartic, two-source)")]
    UnknownScenario(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("fan too sparse at t = {t}: adjacent endpoints {gap:.3e} apart, limit 2h = {limit:.3e}")]
    FanTooSparse { t: f64, gap: f64, limit: f64 },

    #[error("{what}: {found} interior nodes, need at least {needed}")]
    InsufficientNodes {
        what: &'static str,
        found: usize,
        needed: usize,
    },

    #[error("initial density amplitude is Auto; run calibrate_rho_o before assembly")]
    UnresolvedNormalization,

    #[error("{what}: {found} time slices, need at least {needed}")]
    TooFewSlices {
        what: &'static str,
        found: usize,
        needed: usize,
    },

    #[error("{0}: every node is masked")]
    AllMasked(&'static str),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("kernel family does not cover sources at {missing:?}")]
    CoverageGap { missing: Vec<f64> },

    #[error("initial wave truncated by the grid: tail mass {tail:.3e} exceeds {limit:.1e}")]
    TailMass { tail: f64, limit: f64 },

    #[error("{0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// True for errors caused by the caller's configuration rather than by a
    /// failed computation.
    pub fn is_configuration(&self) -> bool {
        matches!(
            self,
            Error::UnknownScenario(_)
                | Error::InvalidParameter { .. }
                | Error::Unsupported(_)
                | Error::Parse(_)
                | Error::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
