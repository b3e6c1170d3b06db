use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use odmlab_core::{
    check_identifiable, check_stability, coordinate_names, default_initial_window, fit_mle, forecast_one_step, loglik,
    simulate_series, FamilySpec, FamilyTag, FeatureKind, FitOptions, LatentWindow, LoglikOptions, LoglinCheckOptions,
    ObservationSeries, ParameterVector, ParxConfig, PredictiveDistribution, SimConfig, ThetaBox, Verdict,
};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult, EXIT_DEGRADED, EXIT_OK};
use crate::experiment::{run_experiment, ExperimentConfig, MAX_FAILURE_RATE};
use crate::formats::{read_json, read_series, to_json, write_file, write_series};

/// Predictive tail mass left out of a forecast pmf.
pub const FORECAST_TAIL: f64 = 1e-6;

#[derive(Parser, Debug, Clone)]
#[command(name = "odmlab", version, about = "Simulate, fit, audit and forecast observation-driven count models")]
pub struct Cli {
    /// Seed for every random stream of the command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory receiving output files.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone)]
pub enum Command {
    /// Simulate a trajectory and write it as CSV.
    Simulate(SimulateArgs),
    /// Audit stability or identifiability conditions.
    Check(CheckArgs),
    /// Fit by conditional maximum likelihood.
    Fit(FitArgs),
    /// Evaluate the conditional log-likelihood.
    Loglik(LoglikArgs),
    /// One-step predictive distribution.
    Forecast(ForecastArgs),
    /// Monte Carlo consistency study from a JSON config.
    McConsistency(McArgs),
}

fn parse_family(s: &str) -> Result<FamilyTag, String> {
    match s {
        "loglin" => Ok(FamilyTag::LogLinear),
        "nbin" => Ok(FamilyTag::Nbin),
        "parx" => Ok(FamilyTag::Parx),
        _ => Err(format!("unknown family `{s}` (expected loglin, nbin or parx)")),
    }
}

fn parse_feature(s: &str) -> Result<FeatureKind, String> {
    match s {
        "square" => Ok(FeatureKind::Square),
        "abs" => Ok(FeatureKind::Abs),
        "positive-part" => Ok(FeatureKind::PositivePart),
        _ => Err(format!("unknown feature `{s}` (expected square, abs or positive-part)")),
    }
}

fn parse_list(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("invalid number `{v}` in `{s}`"))))
        .collect()
}

/// Family structure; the PARX flags describe the covariate chain and feature maps.
#[derive(Args, Debug, Clone, Default)]
pub struct SpecArgs {
    #[arg(long, value_parser = parse_family)]
    pub family: Option<FamilyTag>,
    /// PARX covariate dimension; inferred from `--aleph` or the data when omitted.
    #[arg(long)]
    pub covariate_dim: Option<usize>,
    /// PARX feature maps, one per covariate coordinate in use.
    #[arg(long, value_delimiter = ',', value_parser = parse_feature)]
    pub features: Vec<FeatureKind>,
    /// PARX VAR(1) matrix, row-major; zero when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub aleph: Vec<f64>,
    /// PARX innovation standard deviation.
    #[arg(long)]
    pub sigma: Option<f64>,
}

impl SpecArgs {
    fn parx_config(&self, d_hint: Option<usize>, r_hint: Option<usize>) -> CliResult<ParxConfig> {
        let from_aleph = (!self.aleph.is_empty()).then(|| (self.aleph.len() as f64).sqrt().round() as usize);
        let r = self
            .covariate_dim
            .or(from_aleph)
            .or(r_hint)
            .unwrap_or_else(|| self.features.len().max(d_hint.unwrap_or(1)).max(1));
        let features = if self.features.is_empty() {
            vec![FeatureKind::Abs; d_hint.unwrap_or(r)]
        } else {
            self.features.clone()
        };
        let aleph = if self.aleph.is_empty() {
            vec![vec![0.0; r]; r]
        } else if self.aleph.len() == r * r {
            self.aleph.chunks(r).map(<[f64]>::to_vec).collect()
        } else {
            return Err(CliError::Usage(format!("--aleph needs {} entries for covariate dimension {r}", r * r)));
        };
        Ok(ParxConfig::new(r, features, aleph, self.sigma.unwrap_or(1.0))?)
    }

    fn spec(&self, tag: FamilyTag, p: usize, q: usize, d_hint: Option<usize>, r_hint: Option<usize>) -> CliResult<FamilySpec> {
        Ok(match tag {
            FamilyTag::LogLinear => FamilySpec::loglinear(p, q)?,
            FamilyTag::Nbin => FamilySpec::nbin(p, q)?,
            FamilyTag::Parx => FamilySpec::parx(p, q, self.parx_config(d_hint, r_hint)?)?,
        })
    }
}

/// A model and parameter, from flags or from a JSON file holding `model` and
/// `theta` (or `theta_hat`, as in a fit result); flags override file fields.
#[derive(Args, Debug, Clone, Default)]
pub struct ModelArgs {
    #[command(flatten)]
    pub spec: SpecArgs,
    /// JSON file with `model` and `theta` or `theta_hat`, e.g. a fit result.
    #[arg(long)]
    pub model_file: Option<PathBuf>,
    /// Intercept; defaults to 0 for loglin and 1 otherwise.
    #[arg(long, allow_hyphen_values = true)]
    pub omega: Option<f64>,
    /// Latent lag coefficients `a_1..a_p`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub a: Vec<f64>,
    /// Observation lag coefficients `b_1..b_q`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub b: Vec<f64>,
    /// NBIN shape.
    #[arg(long)]
    pub r: Option<f64>,
    /// PARX feature loadings.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub gamma: Vec<f64>,
}

#[derive(Debug, Deserialize)]
struct ModelFile {
    model: FamilySpec,
    #[serde(alias = "theta_hat")]
    theta: ParameterVector,
    #[serde(default)]
    z_init: Option<LatentWindow>,
}

/// Resolved model, parameter and, when a fit result supplied one, its initial window.
#[derive(Debug, Clone)]
pub struct ResolvedModel {
    pub spec: FamilySpec,
    pub theta: ParameterVector,
    pub z_init: Option<LatentWindow>,
}

impl ModelArgs {
    pub fn resolve(&self, r_hint: Option<usize>) -> CliResult<ResolvedModel> {
        let base = match &self.model_file {
            Some(path) => {
                let file: ModelFile = read_json(path)?;
                if let Some(tag) = self.spec.family {
                    if tag != file.model.tag {
                        return Err(CliError::Usage(format!(
                            "family mismatch: --family {tag} but {} holds a {} model",
                            path.display(),
                            file.model.tag
                        )));
                    }
                }
                file.theta.validate(&file.model)?;
                Some(file)
            }
            None => None,
        };
        let overridden = self.omega.is_some()
            || !self.a.is_empty()
            || !self.b.is_empty()
            || self.r.is_some()
            || !self.gamma.is_empty();
        if let Some(file) = &base {
            if !overridden {
                return Ok(ResolvedModel {
                    spec: file.model.clone(),
                    theta: file.theta.clone(),
                    z_init: file.z_init.clone(),
                });
            }
        }

        let tag = match (&base, self.spec.family) {
            (Some(f), _) => f.model.tag,
            (None, Some(t)) => t,
            (None, None) => return Err(CliError::Usage("--family or --model-file is required".into())),
        };
        let pick = |flag: &[f64], file: Option<&[f64]>| -> Vec<f64> {
            if !flag.is_empty() {
                flag.to_vec()
            } else {
                file.map_or_else(|| vec![0.0], <[f64]>::to_vec)
            }
        };
        let ft = base.as_ref().map(|f| &f.theta);
        let a = pick(&self.a, ft.map(|t| t.a.as_slice()));
        let b = pick(&self.b, ft.map(|t| t.b.as_slice()));
        let default_omega = if tag == FamilyTag::LogLinear { 0.0 } else { 1.0 };
        let omega = self.omega.or(ft.map(|t| t.omega)).unwrap_or(default_omega);
        let (p, q) = (a.len(), b.len());
        let spec = match &base {
            Some(f) => FamilySpec {
                order: odmlab_core::ModelOrder::new(p, q)?,
                ..f.model.clone()
            },
            None => {
                let d_hint = (!self.gamma.is_empty()).then_some(self.gamma.len());
                self.spec.spec(tag, p, q, d_hint, r_hint)?
            }
        };
        let theta = match tag {
            FamilyTag::LogLinear => ParameterVector::loglinear(omega, a, b)?,
            FamilyTag::Nbin => {
                let r = self
                    .r
                    .or(ft.and_then(ParameterVector::shape))
                    .ok_or_else(|| CliError::Usage("--r is required for nbin".into()))?;
                ParameterVector::nbin(omega, a, b, r)?
            }
            FamilyTag::Parx => {
                let gamma = if !self.gamma.is_empty() {
                    self.gamma.clone()
                } else if let Some(t) = ft {
                    t.gamma().to_vec()
                } else {
                    vec![0.0; spec.feature_count()]
                };
                ParameterVector::parx(omega, a, b, gamma)?
            }
        };
        theta.validate(&spec)?;
        let z_init = base.and_then(|f| f.z_init).filter(|z| z.validate(&spec).is_ok());
        Ok(ResolvedModel { spec, theta, z_init })
    }
}

#[derive(Args, Debug, Clone)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of transitions; the file holds `n + 1` rows.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = odmlab_core::simulate::DEFAULT_BURN_IN)]
    pub burn_in: usize,
    /// Refuse to simulate unless the stability audit passes.
    #[arg(long)]
    pub require_stable: bool,
    /// Output CSV; defaults to `<out-dir>/series.csv`, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConditionKind {
    #[default]
    Stability,
    Identifiability,
}

#[derive(Args, Debug, Clone)]
pub struct CheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_enum, default_value_t = ConditionKind::Stability)]
    pub condition: ConditionKind,
    /// Log-linear certificate depth.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Log-linear enumeration budget, as a power of two.
    #[arg(long, default_value_t = odmlab_core::conditions::DEFAULT_BUDGET_LOG2)]
    pub budget_log2: u32,
}

#[derive(Args, Debug, Clone)]
pub struct FitArgs {
    /// Series CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, default_value_t = 1)]
    pub p: usize,
    #[arg(long, default_value_t = 1)]
    pub q: usize,
    /// Box lower bounds in the flat layout `omega, a.., b.., r | gamma..`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub lower: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub upper: Vec<f64>,
    /// Fix a coordinate, e.g. `--pin a1=0`; repeatable.
    #[arg(long)]
    pub pin: Vec<String>,
    /// Drop starts and end points whose stability audit does not pass.
    #[arg(long)]
    pub stability_projection: bool,
    /// Generated starts.
    #[arg(long)]
    pub starts: Option<usize>,
    /// Additional start, comma separated in the flat layout; repeatable.
    #[arg(long, allow_hyphen_values = true)]
    pub extra_start: Vec<String>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Output JSON; defaults to `<out-dir>/fit.json`, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct LoglikArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Omit the latent path from the output.
    #[arg(long)]
    pub no_path: bool,
    /// Also report the PARX covariate transition term.
    #[arg(long)]
    pub joint: bool,
    /// Output JSON; defaults to `<out-dir>/loglik.json`, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct ForecastArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Output JSON; defaults to `<out-dir>/forecast.json`, else stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct McArgs {
    /// Experiment config JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Sample sizes, overriding the config.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub record_runtimes: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub family: FamilyTag,
    /// Time index of the forecast count.
    pub index: usize,
    pub distribution: PredictiveDistribution,
    pub mean: f64,
    /// `P(0), P(1), ..` up to the first count whose cumulative mass reaches `1 - tail`.
    pub pmf: Vec<f64>,
    pub mass: f64,
    pub tail: f64,
}

impl ForecastReport {
    pub fn new(spec: &FamilySpec, index: usize, dist: PredictiveDistribution) -> Self {
        let pmf = dist.truncated_pmf(FORECAST_TAIL);
        Self {
            family: spec.tag,
            index,
            distribution: dist,
            mean: dist.mean(),
            mass: pmf.iter().sum(),
            pmf,
            tail: FORECAST_TAIL,
        }
    }
}

/// Writes `bytes` to `out`, to `out_dir/name`, or to `stdout`, in that order of preference.
fn emit(bytes: &[u8], out: Option<&Path>, out_dir: Option<&Path>, name: &str, stdout: &mut dyn Write) -> CliResult<()> {
    let path = out.map(Path::to_path_buf).or_else(|| out_dir.map(|d| d.join(name)));
    match path {
        Some(p) => {
            write_file(&p, bytes)?;
            log::info!("wrote {}", p.display());
            Ok(())
        }
        None => stdout.write_all(bytes).map_err(|e| CliError::io("cannot write to stdout", e)),
    }
}

fn time_seed() -> u64 {
    use std::time::{SystemTime, UNIX_EPOCH};
    let d = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    d.as_secs().wrapping_mul(1_000_000_007) ^ u64::from(d.subsec_nanos()) ^ u64::from(std::process::id())
}

fn series_covariate_dim(series: &ObservationSeries) -> Option<usize> {
    series.covariates.as_ref().and_then(|c| c.first()).map(Vec::len)
}

fn initial_window(model: &ResolvedModel, series: &ObservationSeries) -> CliResult<LatentWindow> {
    match &model.z_init {
        Some(z) => Ok(z.clone()),
        None => Ok(default_initial_window(&model.spec, series)?),
    }
}

/// Runs a parsed command; returns the exit code of a completed run.
pub fn run(cli: &Cli, stdout: &mut dyn Write) -> CliResult<i32> {
    let out_dir = cli.out_dir.as_deref();
    match &cli.command {
        Command::Simulate(args) => {
            let model = args.model.resolve(None)?;
            if args.require_stable {
                let report = check_stability(&model.spec, &model.theta, LoglinCheckOptions::default())?;
                if report.verdict != Verdict::Pass {
                    return Err(CliError::Usage(format!(
                        "stability audit verdict is {:?}; refusing to simulate\n{}",
                        report.verdict,
                        to_json(&report)?
                    )));
                }
            }
            let seed = cli.seed.unwrap_or_else(time_seed);
            eprintln!("seed: {seed}");
            let cfg = SimConfig {
                burn_in: args.burn_in,
                ..SimConfig::new(args.n, seed)
            };
            let sim = simulate_series(&model.spec, &model.theta, &cfg)?;
            let mut buf = Vec::new();
            write_series(&mut buf, &sim.series)?;
            emit(&buf, args.out.as_deref(), out_dir, "series.csv", stdout)?;
            Ok(EXIT_OK)
        }
        Command::Check(args) => {
            let mut margs = args.model.clone();
            if args.condition == ConditionKind::Identifiability && margs.spec.family.is_none() && margs.model_file.is_none() {
                margs.spec.family = Some(FamilyTag::LogLinear);
            }
            let model = margs.resolve(None)?;
            let report = match args.condition {
                ConditionKind::Stability => {
                    let opts = LoglinCheckOptions {
                        depth: args.depth,
                        budget_log2: args.budget_log2,
                    };
                    check_stability(&model.spec, &model.theta, opts)?
                }
                ConditionKind::Identifiability => check_identifiable(&model.theta.a, &model.theta.b),
            };
            stdout
                .write_all(to_json(&report)?.as_bytes())
                .map_err(|e| CliError::io("cannot write to stdout", e))?;
            Ok(EXIT_OK)
        }
        Command::Fit(args) => {
            let series = read_series(&args.data)?;
            let tag = args.spec.family.ok_or_else(|| CliError::Usage("--family is required".into()))?;
            let spec = args.spec.spec(tag, args.p, args.q, None, series_covariate_dim(&series))?;
            series.validate(&spec)?;
            let bounds = fit_box(&spec, args)?;
            let mut opts = FitOptions {
                seed: cli.seed.unwrap_or(0),
                ..FitOptions::default()
            };
            if let Some(s) = args.starts {
                opts.starts = s;
            }
            if let Some(m) = args.max_iter {
                opts.max_iter = m;
            }
            opts.extra_starts = args.extra_start.iter().map(|s| parse_list(s)).collect::<CliResult<_>>()?;
            let z = default_initial_window(&spec, &series)?;
            let fit = fit_mle(&spec, &series, &bounds, &z, &opts)?;
            emit(to_json(&fit)?.as_bytes(), args.out.as_deref(), out_dir, "fit.json", stdout)?;
            if fit.converged {
                Ok(EXIT_OK)
            } else {
                eprintln!("warning: the best start did not meet the convergence tolerances");
                Ok(EXIT_DEGRADED)
            }
        }
        Command::Loglik(args) => {
            let series = read_series(&args.data)?;
            let model = args.model.resolve(series_covariate_dim(&series))?;
            let z = initial_window(&model, &series)?;
            let opts = LoglikOptions {
                keep_path: !args.no_path,
                include_transition: args.joint,
            };
            let value = loglik(&model.spec, &model.theta, &z, &series, opts)?;
            emit(to_json(&value)?.as_bytes(), args.out.as_deref(), out_dir, "loglik.json", stdout)?;
            Ok(EXIT_OK)
        }
        Command::Forecast(args) => {
            let series = read_series(&args.data)?;
            let model = args.model.resolve(series_covariate_dim(&series))?;
            let z = initial_window(&model, &series)?;
            let dist = forecast_one_step(&model.spec, &model.theta, &z, &series)?;
            let report = ForecastReport::new(&model.spec, series.len(), dist);
            emit(to_json(&report)?.as_bytes(), args.out.as_deref(), out_dir, "forecast.json", stdout)?;
            Ok(EXIT_OK)
        }
        Command::McConsistency(args) => {
            let mut cfg: ExperimentConfig = read_json(&args.config)?;
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            if !args.n.is_empty() {
                cfg.n = args.n.clone();
            }
            if let Some(r) = args.replicates {
                cfg.replicates = r;
            }
            cfg.record_runtimes |= args.record_runtimes;
            let dir = out_dir.map(Path::to_path_buf).or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
            let report = run_experiment(&cfg)?;
            write_file(&dir.join("consistency.json"), to_json(&report)?.as_bytes())?;
            let tsv = report.to_tsv();
            write_file(&dir.join("consistency.tsv"), tsv.as_bytes())?;
            stdout.write_all(tsv.as_bytes()).map_err(|e| CliError::io("cannot write to stdout", e))?;
            let rate = report.worst_failure_rate();
            if rate > MAX_FAILURE_RATE {
                eprintln!("warning: {:.0}% of replicates failed at some sample size", 100.0 * rate);
                Ok(EXIT_DEGRADED)
            } else {
                Ok(EXIT_OK)
            }
        }
    }
}

fn fit_box(spec: &FamilySpec, args: &FitArgs) -> CliResult<ThetaBox> {
    let mut bounds = if args.lower.is_empty() && args.upper.is_empty() {
        let d = ThetaBox::default_for(spec);
        ThetaBox::new(spec, d.lower, d.upper, args.stability_projection)?
    } else {
        let d = ThetaBox::default_for(spec);
        let lower = if args.lower.is_empty() { d.lower } else { args.lower.clone() };
        let upper = if args.upper.is_empty() { d.upper } else { args.upper.clone() };
        ThetaBox::new(spec, lower, upper, args.stability_projection)?
    };
    let names = coordinate_names(spec);
    for pin in &args.pin {
        let (name, value) = pin
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--pin expects name=value, got `{pin}`")))?;
        let j = names
            .iter()
            .position(|n| n == name.trim())
            .ok_or_else(|| CliError::Usage(format!("unknown coordinate `{name}`; expected one of {}", names.join(", "))))?;
        let v: f64 = value.trim().parse().map_err(|_| CliError::Usage(format!("invalid pin value `{value}`")))?;
        bounds = bounds.pin(j, v);
    }
    Ok(ThetaBox::new(spec, bounds.lower, bounds.upper, bounds.stability_projection)?)
}

/// Caps the rayon pool at `ODMLAB_THREADS` when set.
pub fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("ODMLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Usage(format!("ODMLAB_THREADS must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure the thread pool: {e}")))
}
