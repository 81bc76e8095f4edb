//! Error type shared by every module of the crate.

use crate::particle_filters::FilterVariant;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid or missing configuration value; `key` is the dotted path of the offending entry.
    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A covariance that must be positive definite is rank deficient.
    #[error(
        "covariance is singular (numerical rank {rank} of {dim}); \
         use the singular gain solver / SingularOptimalFPF variant instead"
    )]
    SingularCovariance { rank: usize, dim: usize },

    /// The kernel-kernel block of `Ricc(Σ) - σσᵀ` did not vanish, so the rank estimate of Σ is unreliable.
    #[error("kernel-kernel block of the singular gain equation is {ratio:e} of the right-hand side; rank estimate is unreliable")]
    InconsistentSingularSystem { ratio: f64 },

    #[error("numerical blowup: {0}; try a smaller time step")]
    NumericalBlowup(String),

    #[error(
        "Riccati integration did not reach steady state within {steps} steps; \
         (A, H) may not be detectable or (A, sigma_b) not stabilizable"
    )]
    AreDivergence { steps: usize },

    /// Steady state reached but `A - Σ∞HᵀR⁻¹H` is not Hurwitz.
    #[error("steady-state closed loop is not Hurwitz (spectral margin {lambda0})")]
    UnstableClosedLoop { lambda0: f64 },

    #[error("ensemble variant mismatch: step for {expected:?} called on a {found:?} ensemble")]
    VariantMismatch {
        expected: FilterVariant,
        found: FilterVariant,
    },

    #[error("an ensemble needs at least 2 particles, got {0}")]
    TooFewParticles(usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// True for failures caused by the numbers rather than the inputs' shape or syntax.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularCovariance { .. }
                | Error::InconsistentSingularSystem { .. }
                | Error::NumericalBlowup(_)
                | Error::AreDivergence { .. }
                | Error::UnstableClosedLoop { .. }
        )
    }
}
