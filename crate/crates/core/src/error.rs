use thiserror::Error;

/// Errors produced by the model, likelihood, fitting and simulation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdmError {
    /// A value lies outside the family's observation, latent or parameter domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// Inconsistent structural configuration (orders, PARX covariate settings, boxes).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// An operation was invoked on a family that does not support it.
    #[error("usage error: {0}")]
    Usage(String),

    #[error(
        "certificate enumeration needs 2^{needed} switching sequences, over the budget of 2^{budget}; \
         use a smaller certificate depth"
    )]
    BudgetExceeded { needed: u32, budget: u32 },

    #[error("no finite-mean stationary regime: sum(a) + r*sum(b) = {lhs} >= 1")]
    NoStationaryMean { lhs: f64 },

    #[error("latent explosion at step {step}: x = {value}; run a stability check on the parameters")]
    Explosion { step: usize, value: f64 },

    #[error("gradient undefined: log-likelihood is -inf at term {0}")]
    GradientUndefined(usize),

    #[error("too few observations: n = {n}, need at least {required}")]
    TooFewObservations { n: usize, required: usize },

    #[error("fit failed: {0}")]
    FitFailed(String),
}

pub type Result<T> = std::result::Result<T, OdmError>;
