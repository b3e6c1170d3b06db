//! Monte Carlo consistency study: simulate `R` replicates for each sample
//! size, fit each one, and summarize the estimation error per coordinate.

use std::path::PathBuf;
use std::time::Instant;

use odmlab_core::serde_util::float;
use odmlab_core::{
    check_identifiable, coordinate_names, default_initial_window, fit_mle, simulate_series, FamilySpec, FitOptions,
    ParameterVector, SeedTree, SimConfig, ThetaBox,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Share of failed replicates, per sample size, above which the study is degraded.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: FamilySpec,
    pub theta: ParameterVector,
    /// Strictly increasing sample sizes.
    pub n: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub theta_box: Option<ThetaBox>,
    #[serde(default)]
    pub fit: FitOptions,
    #[serde(default)]
    pub burn_in: Option<usize>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Wall-clock time per replicate; off by default because it breaks byte reproducibility.
    #[serde(default)]
    pub record_runtimes: bool,
}

impl ExperimentConfig {
    pub fn new(model: FamilySpec, theta: ParameterVector, n: Vec<usize>, replicates: usize, seed: u64) -> Self {
        Self {
            model,
            theta,
            n,
            replicates,
            seed,
            theta_box: None,
            fit: FitOptions::default(),
            burn_in: None,
            out_dir: None,
            record_runtimes: false,
        }
    }

    pub fn validate(&self) -> CliResult<ThetaBox> {
        self.model.validate()?;
        self.theta.validate(&self.model)?;
        if self.replicates == 0 {
            return Err(CliError::Usage("replicates must be at least 1".into()));
        }
        if self.n.is_empty() || self.n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Usage("sample sizes must be non-empty and strictly increasing".into()));
        }
        Ok(match &self.theta_box {
            Some(b) => ThetaBox::new(&self.model, b.lower.clone(), b.upper.clone(), b.stability_projection)?,
            None => ThetaBox::default_for(&self.model),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub coordinate: String,
    #[serde(with = "float")]
    pub bias: f64,
    #[serde(with = "float")]
    pub variance: f64,
    #[serde(with = "float")]
    pub rmse: f64,
    #[serde(with = "float")]
    pub medae: f64,
    /// Replicates entering the summary.
    pub used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupErrorSummary {
    pub n: usize,
    #[serde(with = "float")]
    pub median: f64,
    #[serde(with = "float")]
    pub mean: f64,
    pub failures: usize,
    pub not_converged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub theta_hat: Option<Vec<f64>>,
    pub converged: bool,
    pub error: Option<String>,
    pub runtime_secs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub model: FamilySpec,
    pub theta_star: ParameterVector,
    pub coordinates: Vec<String>,
    pub n: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub identifiable: bool,
    pub warnings: Vec<String>,
    pub cells: Vec<CellSummary>,
    pub sup_error: Vec<SupErrorSummary>,
    pub runs: Vec<ReplicateRecord>,
}

impl ConsistencyReport {
    pub fn cell(&self, n: usize, coordinate: &str) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.coordinate == coordinate)
    }

    /// Largest per-sample-size failure share.
    pub fn worst_failure_rate(&self) -> f64 {
        self.sup_error
            .iter()
            .map(|s| s.failures as f64 / self.replicates as f64)
            .fold(0.0, f64::max)
    }

    /// Rows `n, coord, bias, rmse, medae`, tab separated with a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("n\tcoord\tbias\trmse\tmedae\n");
        for c in &self.cells {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", c.n, c.coordinate, c.bias, c.rmse, c.medae));
        }
        out
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<ConsistencyReport> {
    let bounds = cfg.validate()?;
    let spec = &cfg.model;
    let truth = cfg.theta.to_flat();
    let mut warnings = Vec::new();
    let ident = check_identifiable(&cfg.theta.a, &cfg.theta.b);
    if !ident.passed() {
        let msg = "identifiability check fails at the true parameter; estimates target an equivalence class".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let root = SeedTree::new(cfg.seed);
    let jobs: Vec<(usize, usize)> = (0..cfg.n.len()).flat_map(|i| (0..cfg.replicates).map(move |r| (i, r))).collect();
    let runs: Vec<ReplicateRecord> = jobs
        .par_iter()
        .map(|&(i, r)| {
            let n = cfg.n[i];
            let seed = root.replicate(i as u64).replicate(r as u64).key();
            let started = Instant::now();
            let outcome = (|| {
                let sim_cfg = SimConfig {
                    burn_in: cfg.burn_in.unwrap_or(odmlab_core::simulate::DEFAULT_BURN_IN),
                    ..SimConfig::new(n, seed)
                };
                let sim = simulate_series(spec, &cfg.theta, &sim_cfg)?;
                let z = default_initial_window(spec, &sim.series)?;
                let opts = FitOptions {
                    seed,
                    ..cfg.fit.clone()
                };
                fit_mle(spec, &sim.series, &bounds, &z, &opts)
            })();
            let runtime_secs = cfg.record_runtimes.then(|| started.elapsed().as_secs_f64());
            match outcome {
                Ok(fit) => ReplicateRecord {
                    n,
                    replicate: r,
                    seed,
                    theta_hat: Some(fit.theta_hat.to_flat()),
                    converged: fit.converged,
                    error: None,
                    runtime_secs,
                },
                Err(e) => ReplicateRecord {
                    n,
                    replicate: r,
                    seed,
                    theta_hat: None,
                    converged: false,
                    error: Some(e.to_string()),
                    runtime_secs,
                },
            }
        })
        .collect();

    let names = coordinate_names(spec);
    let mut cells = Vec::new();
    let mut sup_error = Vec::new();
    for &n in &cfg.n {
        let fits: Vec<&Vec<f64>> = runs.iter().filter(|r| r.n == n).filter_map(|r| r.theta_hat.as_ref()).collect();
        let used = fits.len();
        for (j, name) in names.iter().enumerate() {
            let errs: Vec<f64> = fits.iter().map(|t| t[j] - truth[j]).collect();
            let k = used as f64;
            let bias = errs.iter().sum::<f64>() / k;
            let variance = errs.iter().map(|e| (e - bias) * (e - bias)).sum::<f64>() / k;
            let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / k).sqrt();
            let mut abs: Vec<f64> = errs.iter().map(|e| e.abs()).collect();
            cells.push(CellSummary {
                n,
                coordinate: name.clone(),
                bias,
                variance,
                rmse,
                medae: median(&mut abs),
                used,
            });
        }
        let mut sup: Vec<f64> = fits
            .iter()
            .map(|t| t.iter().zip(&truth).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect();
        let mean = sup.iter().sum::<f64>() / used as f64;
        let this_n = runs.iter().filter(|r| r.n == n);
        sup_error.push(SupErrorSummary {
            n,
            median: median(&mut sup),
            mean,
            failures: this_n.clone().filter(|r| r.theta_hat.is_none()).count(),
            not_converged: this_n.filter(|r| r.theta_hat.is_some() && !r.converged).count(),
        });
    }

    Ok(ConsistencyReport {
        model: spec.clone(),
        theta_star: cfg.theta.clone(),
        coordinates: names,
        n: cfg.n.clone(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        identifiable: ident.passed(),
        warnings,
        cells,
        sup_error,
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(replicates: usize) -> ExperimentConfig {
        let spec = FamilySpec::loglinear(1, 1).unwrap();
        let theta = ParameterVector::loglinear(0.1, vec![0.5], vec![0.3]).unwrap();
        ExperimentConfig::new(spec, theta, vec![100, 200], replicates, 3)
    }

    #[test]
    fn rmse_decomposes_into_bias_and_variance() {
        let rep = run_experiment(&small(4)).unwrap();
        for c in &rep.cells {
            assert!((c.rmse * c.rmse - (c.bias * c.bias + c.variance)).abs() < 1e-12, "{c:?}");
        }
        assert_eq!(rep.cells.len(), 6);
        assert_eq!(rep.to_tsv().lines().count(), 7);
    }

    #[test]
    fn single_replicate_has_zero_variance() {
        let rep = run_experiment(&small(1)).unwrap();
        for c in &rep.cells {
            let j = rep.coordinates.iter().position(|x| *x == c.coordinate).unwrap();
            let run = rep.runs.iter().find(|r| r.n == c.n).unwrap();
            let err = run.theta_hat.as_ref().unwrap()[j] - rep.theta_star.to_flat()[j];
            assert_eq!(c.variance, 0.0);
            assert_eq!(c.bias, err);
            assert_eq!(c.medae, err.abs());
        }
    }

    #[test]
    fn boundary_truth_warns() {
        let mut cfg = small(1);
        cfg.n = vec![100];
        cfg.theta = ParameterVector::loglinear(0.1, vec![0.5], vec![0.0]).unwrap();
        let rep = run_experiment(&cfg).unwrap();
        assert!(!rep.identifiable);
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_configs() {
        let mut cfg = small(0);
        assert!(run_experiment(&cfg).is_err());
        cfg.replicates = 1;
        cfg.n = vec![200, 200];
        assert!(run_experiment(&cfg).is_err());
    }
}
