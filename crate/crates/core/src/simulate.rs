//! Trajectory generation, with burn-in, and batch-means moment estimates.

use serde::{Deserialize, Serialize};

use crate::conditions::{check_stability, LoglinCheckOptions, Verdict};
use crate::error::{OdmError, Result};
use crate::families::{parx_covariate_step, sample_count, FamilySpec, FamilyTag};
use crate::model::{reduce_into, LatentWindow, Observation, ObservationSeries, ParameterVector};
use crate::rng::{SeedTree, Stream};

pub const DEFAULT_BURN_IN: usize = 1000;
/// Explosion thresholds: `|x|` for log-linear, `x` for NBIN and PARX.
pub const LOGLIN_EXPLOSION: f64 = 1e3;
pub const POSITIVE_EXPLOSION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Starting window; `None` uses [`default_sim_window`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_init: Option<LatentWindow>,
}

impl SimConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            burn_in: DEFAULT_BURN_IN,
            seed,
            z_init: None,
        }
    }
}

/// Observations `y_0..y_n` with the latent values `x_0..x_n` that generated them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedSeries {
    pub series: ObservationSeries,
    pub latent: Vec<f64>,
}

/// Simulation start: log-linear all zeros; NBIN and PARX `x = omega`, `u = 0`, `xi = 0`.
pub fn default_sim_window(spec: &FamilySpec, theta: &ParameterVector) -> Result<LatentWindow> {
    let r = spec.covariate_dim();
    let xi = vec![0.0; r];
    match spec.tag {
        FamilyTag::LogLinear => LatentWindow::constant(spec, 0.0, 0, None),
        FamilyTag::Nbin => LatentWindow::constant(spec, theta.omega, 0, None),
        FamilyTag::Parx => LatentWindow::constant(spec, theta.omega, 0, Some(&xi)),
    }
}

fn explodes(tag: FamilyTag, x: f64) -> bool {
    match tag {
        FamilyTag::LogLinear => !(x.abs() <= LOGLIN_EXPLOSION),
        _ => !(x <= POSITIVE_EXPLOSION),
    }
}

/// Runs `burn_in + n + 1` steps and keeps the last `n + 1`.
///
/// Step `t` draws `y_t ~ G(x_t)` from the observation stream; for PARX it first
/// advances the covariates `xi_t = aleph xi_{t-1} + sigma eta_t` from the covariate
/// stream, so the covariate path depends on the seed only.
pub fn simulate_series(spec: &FamilySpec, theta: &ParameterVector, cfg: &SimConfig) -> Result<SimulatedSeries> {
    spec.validate()?;
    theta.validate(spec)?;
    if cfg.n < 1 {
        return Err(OdmError::Config("simulation length n must be >= 1".into()));
    }
    let mut z = match &cfg.z_init {
        Some(z) => {
            z.validate(spec)?;
            z.clone()
        }
        None => default_sim_window(spec, theta)?,
    };
    let seeds = SeedTree::new(cfg.seed);
    let mut obs_rng = seeds.stream(Stream::Observations);
    let mut cov_rng = seeds.stream(Stream::Covariates);
    let coef = theta.coefficients();
    let shape = theta.shape().unwrap_or(0.0);
    let parx = spec.tag == FamilyTag::Parx;
    let mut xi: Vec<f64> = if parx { z.last_latent()[1..].to_vec() } else { Vec::new() };
    let mut u = vec![0.0; spec.reduced_dim()];

    let steps = cfg.burn_in + cfg.n + 1;
    let keep = cfg.n + 1;
    let mut y = Vec::with_capacity(keep);
    let mut latent = Vec::with_capacity(keep);
    let mut covariates = Vec::with_capacity(if parx { keep } else { 0 });
    for t in 0..steps {
        let x = z.last_latent()[0];
        if explodes(spec.tag, x) {
            return Err(OdmError::Explosion { step: t, value: x });
        }
        if parx {
            xi = parx_covariate_step(spec, &xi, &mut cov_rng)?;
        }
        let count = sample_count(spec.tag, shape, x, &mut obs_rng);
        let obs = Observation {
            count,
            covariates: if parx { Some(&xi) } else { None },
        };
        reduce_into(spec, obs, &mut u)?;
        if t >= cfg.burn_in {
            y.push(count);
            latent.push(x);
            if parx {
                covariates.push(xi.clone());
            }
        }
        z.advance(&coef, &u);
    }
    let series = if parx {
        ObservationSeries::with_covariates(y, covariates)?
    } else {
        ObservationSeries::new(y)
    };
    Ok(SimulatedSeries { series, latent })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub mean_x: f64,
    pub mean_y: f64,
    pub se_x: f64,
    pub se_y: f64,
    pub n: usize,
    pub batches: usize,
}

/// Mean and batch-means standard error with `min(100, n / 10)` batches (at least 2).
pub fn batch_means(values: &[f64]) -> (f64, f64, usize) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let batches = (n / 10).clamp(2, 100).min(n);
    if batches < 2 {
        return (mean, f64::NAN, batches);
    }
    let size = n / batches;
    let bm: Vec<f64> = (0..batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt(), batches)
}

/// Long-run means of `x` and `y` over a post-burn-in run of `n` steps.
pub fn stationary_moment_estimate(spec: &FamilySpec, theta: &ParameterVector, n: usize, seed: u64) -> Result<MomentEstimate> {
    let report = check_stability(spec, theta, LoglinCheckOptions::default())?;
    if report.verdict != Verdict::Pass {
        log::warn!("stability check verdict is {:?}; moment estimates may not converge", report.verdict);
    }
    let sim = simulate_series(spec, theta, &SimConfig::new(n, seed))?;
    let ys: Vec<f64> = sim.series.y.iter().map(|&v| v as f64).collect();
    let (mean_x, se_x, batches) = batch_means(&sim.latent);
    let (mean_y, se_y, _) = batch_means(&ys);
    Ok(MomentEstimate {
        mean_x,
        mean_y,
        se_x,
        se_y,
        n: sim.latent.len(),
        batches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{FeatureKind, ParxConfig};

    #[test]
    fn iid_poisson_mean() {
        let spec = FamilySpec::loglinear(1, 1).unwrap();
        let omega: f64 = 0.4;
        let theta = ParameterVector::loglinear(omega, vec![0.0], vec![0.0]).unwrap();
        let n = 100_000;
        let cfg = SimConfig { burn_in: 0, ..SimConfig::new(n, 11) };
        let sim = simulate_series(&spec, &theta, &cfg).unwrap();
        assert_eq!(sim.series.len(), n + 1);
        let mean = sim.series.y.iter().sum::<u64>() as f64 / (n + 1) as f64;
        let lam = omega.exp();
        assert!((mean - lam).abs() < 3.0 * (lam / n as f64).sqrt(), "{mean} vs {lam}");
    }

    #[test]
    fn seeds_determine_series() {
        let spec = FamilySpec::nbin(1, 1).unwrap();
        let theta = ParameterVector::nbin(1.0, vec![0.3], vec![0.2], 2.0).unwrap();
        let a = simulate_series(&spec, &theta, &SimConfig::new(50, 1)).unwrap();
        let b = simulate_series(&spec, &theta, &SimConfig::new(50, 1)).unwrap();
        let c = simulate_series(&spec, &theta, &SimConfig::new(50, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.series.y[..10], c.series.y[..10]);
    }

    #[test]
    fn explosion_is_reported() {
        let spec = FamilySpec::loglinear(1, 1).unwrap();
        let theta = ParameterVector::loglinear(1.0, vec![1.0], vec![0.5]).unwrap();
        let err = simulate_series(&spec, &theta, &SimConfig::new(100, 1)).unwrap_err();
        assert!(matches!(err, OdmError::Explosion { .. }), "{err:?}");
    }

    #[test]
    fn parx_covariates_ignore_theta() {
        let cfg = ParxConfig::new(1, vec![FeatureKind::Square], vec![vec![0.6]], 0.8).unwrap();
        let spec = FamilySpec::parx(1, 1, cfg).unwrap();
        let t1 = ParameterVector::parx(0.5, vec![0.3], vec![0.2], vec![0.5]).unwrap();
        let t2 = ParameterVector::parx(2.0, vec![0.1], vec![0.6], vec![0.0]).unwrap();
        let s1 = simulate_series(&spec, &t1, &SimConfig::new(200, 9)).unwrap();
        let s2 = simulate_series(&spec, &t2, &SimConfig::new(200, 9)).unwrap();
        assert_eq!(s1.series.covariates, s2.series.covariates);
        assert_ne!(s1.series.y, s2.series.y);
    }

    #[test]
    fn batch_means_of_constant_and_iid() {
        let (m, se, b) = batch_means(&[2.0; 1000]);
        assert_eq!((m, se, b), (2.0, 0.0, 100));
        let (_, _, b) = batch_means(&[1.0; 50]);
        assert_eq!(b, 5);
    }

    #[test]
    fn iid_nbin_mean_is_r_omega() {
        let spec = FamilySpec::nbin(1, 1).unwrap();
        let theta = ParameterVector::nbin(1.5, vec![0.0], vec![0.0], 2.0).unwrap();
        let est = stationary_moment_estimate(&spec, &theta, 200_000, 5).unwrap();
        assert_eq!(est.mean_x, 1.5);
        assert!((est.mean_y - 3.0).abs() < 3.0 * est.se_y, "{est:?}");
    }
}
