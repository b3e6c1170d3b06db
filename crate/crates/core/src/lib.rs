//! Observation-driven count time-series models of general order `(p, q)`:
//! log-linear Poisson GARCH, NBIN-GARCH and PARX.
//!
//! The crate simulates trajectories, evaluates the exact conditional
//! likelihood and its gradient, fits by multistart maximum likelihood, audits
//! stability and identifiability conditions, and forecasts one step ahead.
//!
//! ```
//! use odmlab_core::{FamilySpec, ParameterVector, SimConfig, simulate_series, check_stability, LoglinCheckOptions, Verdict};
//!
//! let spec = FamilySpec::loglinear(1, 1).unwrap();
//! let theta = ParameterVector::loglinear(0.1, vec![0.5], vec![0.3]).unwrap();
//! let report = check_stability(&spec, &theta, LoglinCheckOptions::default()).unwrap();
//! assert_eq!(report.verdict, Verdict::Pass);
//! let sim = simulate_series(&spec, &theta, &SimConfig::new(100, 7)).unwrap();
//! assert_eq!(sim.series.len(), 101);
//! ```

// Negated float comparisons deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod families;
pub mod fit;
pub mod likelihood;
pub mod model;
pub mod rng;
pub mod serde_util;
pub mod simulate;

pub use conditions::{
    check_identifiable, check_loglin, check_nbin, check_parx, check_stability, companion_spectral_radius,
    in_unit_disk_stable, lipschitz_estimate, loglin_iterate, nbin_stationary_mean, polynomial_roots, Check,
    CheckRole, ConditionReport, LoglinCheckOptions, Verdict,
};
pub use error::{OdmError, Result};
pub use families::{
    features, log_density, parx_covariate_step, predictive, sample_observation, FamilySpec, FamilyTag,
    FeatureKind, ModelSpec, ParxConfig, PredictiveDistribution,
};
pub use fit::{fit_mle, forecast_one_step, FitOptions, FitResult, StartTrace, ThetaBox};
pub use likelihood::{finite_diff_grad, grad_loglik, loglik, LikelihoodValue, LoglikOptions, Objective};
pub use model::{
    coordinate_names, default_initial_window, embed_step, iterate_latent, link_step, reduce, LatentWindow,
    ModelOrder, Observation, ObservationSeries, ParameterVector,
};
pub use rng::{OdmRng, SeedTree, Stream};
pub use simulate::{simulate_series, stationary_moment_estimate, MomentEstimate, SimConfig, SimulatedSeries};
