//! Observation kernels of the three supported families.
//!
//! * log-linear Poisson GARCH: `Y | X = x ~ Poisson(e^x)`, `X = R`;
//! * NBIN-GARCH: `Y | X = x ~ NegBin(r, x / (1 + x))` with mean `r x`, `X = [0, inf)`;
//! * PARX: `Y | X = x ~ Poisson(x)` jointly with a Gaussian VAR(1) covariate
//!   transition `xi' = aleph xi + sigma eta`, which does not depend on theta.

use std::fmt;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{OdmError, Result};
use crate::model::{ModelOrder, ParameterVector};

/// Latent values are clamped to this range before exponentiation.
pub const EXP_CLAMP: (f64, f64) = (-745.0, 700.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyTag {
    #[serde(rename = "loglin")]
    LogLinear,
    #[serde(rename = "nbin")]
    Nbin,
    #[serde(rename = "parx")]
    Parx,
}

impl fmt::Display for FamilyTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyTag::LogLinear => "loglin",
            FamilyTag::Nbin => "nbin",
            FamilyTag::Parx => "parx",
        })
    }
}

impl std::str::FromStr for FamilyTag {
    type Err = OdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "loglin" | "log-linear" => Ok(FamilyTag::LogLinear),
            "nbin" => Ok(FamilyTag::Nbin),
            "parx" => Ok(FamilyTag::Parx),
            other => Err(OdmError::Config(format!("unknown family `{other}`"))),
        }
    }
}

/// Nonnegative feature maps for the PARX covariates; feature `j` reads coordinate `j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    Square,
    Abs,
    PositivePart,
}

impl FeatureKind {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            FeatureKind::Square => v * v,
            FeatureKind::Abs => v.abs(),
            FeatureKind::PositivePart => v.max(0.0),
        }
    }
}

impl std::str::FromStr for FeatureKind {
    type Err = OdmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "square" => Ok(FeatureKind::Square),
            "abs" => Ok(FeatureKind::Abs),
            "positive-part" => Ok(FeatureKind::PositivePart),
            other => Err(OdmError::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// Covariate dynamics and feature maps of a PARX model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParxConfig {
    /// Covariate dimension `r`.
    pub covariate_dim: usize,
    /// One entry per feature; `d = features.len()` must not exceed `covariate_dim`.
    pub features: Vec<FeatureKind>,
    /// VAR(1) matrix, row-major `r x r`.
    pub aleph: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl ParxConfig {
    pub fn new(
        covariate_dim: usize,
        features: Vec<FeatureKind>,
        aleph: Vec<Vec<f64>>,
        sigma: f64,
    ) -> Result<Self> {
        let cfg = Self {
            covariate_dim,
            features,
            aleph,
            sigma,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.covariate_dim;
        if r == 0 {
            return Err(OdmError::Config("covariate dimension must be >= 1".into()));
        }
        if self.features.is_empty() {
            return Err(OdmError::Config("PARX needs at least one feature".into()));
        }
        if self.features.len() > r {
            return Err(OdmError::Config(format!(
                "{} features configured but only {r} covariates; feature j reads covariate j",
                self.features.len()
            )));
        }
        if self.aleph.len() != r || self.aleph.iter().any(|row| row.len() != r) {
            return Err(OdmError::Config(format!("aleph must be a {r}x{r} matrix")));
        }
        if self.aleph.iter().flatten().any(|v| !v.is_finite()) {
            return Err(OdmError::Config("aleph entries must be finite".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(OdmError::Config(format!("sigma must be > 0, got {}", self.sigma)));
        }
        let rho = crate::conditions::matrix_spectral_radius(&self.aleph);
        if !(rho < 1.0) {
            return Err(OdmError::Config(format!(
                "spectral radius of aleph is {rho}, must be < 1"
            )));
        }
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.features.len()
    }

    /// `aleph xi`.
    pub fn covariate_mean(&self, xi: &[f64]) -> Vec<f64> {
        self.aleph
            .iter()
            .map(|row| row.iter().zip(xi).map(|(a, v)| a * v).sum())
            .collect()
    }

    /// `ln l(xi_prev; xi_next)` of the Gaussian transition.
    pub fn transition_log_density(&self, xi_prev: &[f64], xi_next: &[f64]) -> f64 {
        let mean = self.covariate_mean(xi_prev);
        let s2 = self.sigma * self.sigma;
        let sq: f64 = mean.iter().zip(xi_next).map(|(m, v)| (v - m) * (v - m)).sum();
        -0.5 * self.covariate_dim as f64 * (2.0 * std::f64::consts::PI * s2).ln() - sq / (2.0 * s2)
    }
}

/// Family tag, model order, and for PARX the covariate configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub tag: FamilyTag,
    pub order: ModelOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parx: Option<ParxConfig>,
}

/// Alias used where the structural model description is meant.
pub type ModelSpec = FamilySpec;

impl FamilySpec {
    pub fn loglinear(p: usize, q: usize) -> Result<Self> {
        Ok(Self {
            tag: FamilyTag::LogLinear,
            order: ModelOrder::new(p, q)?,
            parx: None,
        })
    }

    pub fn nbin(p: usize, q: usize) -> Result<Self> {
        Ok(Self {
            tag: FamilyTag::Nbin,
            order: ModelOrder::new(p, q)?,
            parx: None,
        })
    }

    pub fn parx(p: usize, q: usize, config: ParxConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            tag: FamilyTag::Parx,
            order: ModelOrder::new(p, q)?,
            parx: Some(config),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.order.validate()?;
        match (self.tag, &self.parx) {
            (FamilyTag::Parx, Some(cfg)) => cfg.validate(),
            (FamilyTag::Parx, None) => Err(OdmError::Config(
                "PARX family requires a covariate configuration".into(),
            )),
            (_, Some(_)) => Err(OdmError::Config(
                "covariate configuration is only valid for PARX".into(),
            )),
            (_, None) => Ok(()),
        }
    }

    pub fn parx_config(&self) -> Result<&ParxConfig> {
        self.parx
            .as_ref()
            .ok_or_else(|| OdmError::Usage(format!("family {} has no covariates", self.tag)))
    }

    /// Number of PARX features `d` (0 for the other families).
    pub fn feature_count(&self) -> usize {
        self.parx.as_ref().map_or(0, ParxConfig::d)
    }

    pub fn covariate_dim(&self) -> usize {
        self.parx.as_ref().map_or(0, |c| c.covariate_dim)
    }

    /// Components of one latent entry: 1, or `1 + r` for PARX.
    pub fn latent_dim(&self) -> usize {
        1 + self.covariate_dim()
    }

    /// Components of one reduced observation: 1, or `1 + d + r` for PARX.
    pub fn reduced_dim(&self) -> usize {
        1 + self.feature_count() + self.covariate_dim()
    }

    pub fn theta_dim(&self) -> usize {
        1 + self.order.p
            + self.order.q
            + match self.tag {
                FamilyTag::LogLinear => 0,
                FamilyTag::Nbin => 1,
                FamilyTag::Parx => self.feature_count(),
            }
    }
}

fn ln_factorial_table() -> &'static [f64; 257] {
    static TABLE: OnceLock<[f64; 257]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [0.0; 257];
        for y in 2..t.len() {
            t[y] = t[y - 1] + (y as f64).ln();
        }
        t
    })
}

/// `ln y!`: table lookup up to 256, `ln Gamma(y + 1)` beyond.
pub fn ln_factorial(y: u64) -> f64 {
    if y <= 256 {
        ln_factorial_table()[y as usize]
    } else {
        ln_gamma(y as f64 + 1.0)
    }
}

/// Poisson rate `e^x` with the exponent clamped; the flag reports whether clamping happened.
#[inline]
pub(crate) fn clamped_exp(x: f64) -> (f64, bool) {
    let c = x.clamp(EXP_CLAMP.0, EXP_CLAMP.1);
    (c.exp(), c != x)
}

/// Density evaluation core; `ln_fact` is `ln y!`. Returns the log density and a clamp flag.
#[inline]
pub(crate) fn log_density_core(tag: FamilyTag, shape: f64, x: f64, y: u64, ln_fact: f64) -> (f64, bool) {
    let yf = y as f64;
    match tag {
        FamilyTag::LogLinear => {
            let (rate, clamped) = clamped_exp(x);
            (-rate + yf * x - ln_fact, clamped)
        }
        FamilyTag::Parx => {
            if y == 0 {
                (-x, false)
            } else if x <= 0.0 {
                (f64::NEG_INFINITY, false)
            } else {
                (-x + yf * x.ln() - ln_fact, false)
            }
        }
        FamilyTag::Nbin => {
            let r = shape;
            let base = -r * x.ln_1p();
            if y == 0 {
                (base, false)
            } else if x <= 0.0 {
                (f64::NEG_INFINITY, false)
            } else {
                let v = ln_gamma(r + yf) - ln_fact - ln_gamma(r) + base + yf * x.ln() - yf * x.ln_1p();
                (v, false)
            }
        }
    }
}

/// Partial derivatives of the log density in `x` and, for NBIN, in the shape `r`.
#[inline]
pub(crate) fn score_core(tag: FamilyTag, shape: f64, x: f64, y: u64) -> (f64, f64) {
    let yf = y as f64;
    match tag {
        FamilyTag::LogLinear => (-clamped_exp(x).0 + yf, 0.0),
        FamilyTag::Parx => (-1.0 + yf / x, 0.0),
        FamilyTag::Nbin => {
            let r = shape;
            let dx = if y == 0 { -r / (1.0 + x) } else { yf / x - (r + yf) / (1.0 + x) };
            let dr = digamma(r + yf) - digamma(r) - x.ln_1p();
            (dx, dr)
        }
    }
}

fn shape_of(spec: &FamilySpec, theta: &ParameterVector) -> Result<f64> {
    match spec.tag {
        FamilyTag::Nbin => theta
            .shape()
            .ok_or_else(|| OdmError::Config("NBIN parameters need a shape r".into())),
        _ => Ok(0.0),
    }
}

fn check_latent(spec: &FamilySpec, x: &[f64]) -> Result<()> {
    if x.is_empty() || x[0].is_nan() {
        return Err(OdmError::Domain("latent value is missing or NaN".into()));
    }
    if spec.tag != FamilyTag::LogLinear && x[0] < 0.0 {
        return Err(OdmError::Domain(format!(
            "latent value must be >= 0 for {}, got {}",
            spec.tag, x[0]
        )));
    }
    Ok(())
}

/// `ln g^theta(x; y)`. NBIN and PARX return `-inf` for `x = 0, y > 0`.
/// For PARX only the Poisson factor is included (see [`ParxConfig::transition_log_density`]).
pub fn log_density(spec: &FamilySpec, theta: &ParameterVector, x: &[f64], y: u64) -> Result<f64> {
    check_latent(spec, x)?;
    let (v, clamped) = log_density_core(spec.tag, shape_of(spec, theta)?, x[0], y, ln_factorial(y));
    if clamped {
        log::warn!("latent {} clamped to [{}, {}] before exponentiation", x[0], EXP_CLAMP.0, EXP_CLAMP.1);
    }
    Ok(v)
}

/// Poisson draw supporting a zero mean and very large means.
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u64 {
    if !(mean > 0.0) {
        return 0;
    }
    if mean > 1e15 {
        let z: f64 = StandardNormal.sample(rng);
        return (mean + mean.sqrt() * z).max(0.0).round() as u64;
    }
    match Poisson::new(mean) {
        Ok(dist) => dist.sample(rng) as u64,
        Err(_) => 0,
    }
}

/// A draw from `G^theta(x; .)`; NB uses the Gamma-Poisson mixture.
pub fn sample_observation<R: Rng + ?Sized>(
    spec: &FamilySpec,
    theta: &ParameterVector,
    x: &[f64],
    rng: &mut R,
) -> Result<u64> {
    check_latent(spec, x)?;
    Ok(sample_count(spec.tag, shape_of(spec, theta)?, x[0], rng))
}

pub(crate) fn sample_count<R: Rng + ?Sized>(tag: FamilyTag, shape: f64, x: f64, rng: &mut R) -> u64 {
    match tag {
        FamilyTag::LogLinear => sample_poisson(clamped_exp(x).0, rng),
        FamilyTag::Parx => sample_poisson(x, rng),
        FamilyTag::Nbin => {
            if !(x > 0.0) {
                return 0;
            }
            match Gamma::new(shape, x) {
                Ok(g) => sample_poisson(g.sample(rng), rng),
                Err(_) => 0,
            }
        }
    }
}

/// One covariate transition `aleph xi + sigma eta`.
pub fn parx_covariate_step<R: Rng + ?Sized>(
    spec: &FamilySpec,
    xi: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    let cfg = spec.parx_config()?;
    if xi.len() != cfg.covariate_dim {
        return Err(OdmError::Domain(format!(
            "covariate vector has {} entries, expected {}",
            xi.len(),
            cfg.covariate_dim
        )));
    }
    let mut next = cfg.covariate_mean(xi);
    for v in next.iter_mut() {
        let eta: f64 = StandardNormal.sample(rng);
        *v += cfg.sigma * eta;
    }
    Ok(next)
}

pub(crate) fn features_into(cfg: &ParxConfig, xi: &[f64], out: &mut [f64]) {
    for ((slot, kind), v) in out.iter_mut().zip(&cfg.features).zip(xi) {
        *slot = kind.apply(*v);
    }
}

/// `(f_1(xi_1), .., f_d(xi_d))`.
pub fn features(spec: &FamilySpec, xi: &[f64]) -> Result<Vec<f64>> {
    let cfg = spec.parx_config()?;
    if cfg.d() > xi.len() {
        return Err(OdmError::Config(format!(
            "{} features need at least {} covariates, got {}",
            cfg.d(),
            cfg.d(),
            xi.len()
        )));
    }
    let mut out = vec![0.0; cfg.d()];
    features_into(cfg, xi, &mut out);
    Ok(out)
}

/// Conditional law of the next count given the latent value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictiveDistribution {
    Poisson { mean: f64 },
    /// `P(y) = Gamma(r + y) / (y! Gamma(r)) (1 - odds)^r odds^y`, with `odds = x / (1 + x)`.
    NegativeBinomial { shape: f64, odds: f64, mean: f64 },
}

impl PredictiveDistribution {
    pub fn mean(&self) -> f64 {
        match *self {
            PredictiveDistribution::Poisson { mean } => mean,
            PredictiveDistribution::NegativeBinomial { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            PredictiveDistribution::Poisson { mean } => mean,
            PredictiveDistribution::NegativeBinomial { shape, odds, .. } => {
                shape * odds / ((1.0 - odds) * (1.0 - odds))
            }
        }
    }

    pub fn ln_pmf(&self, y: u64) -> f64 {
        let yf = y as f64;
        match *self {
            PredictiveDistribution::Poisson { mean } => {
                if y == 0 {
                    -mean
                } else if mean <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    -mean + yf * mean.ln() - ln_factorial(y)
                }
            }
            PredictiveDistribution::NegativeBinomial { shape, odds, .. } => {
                let base = shape * (-odds).ln_1p();
                if y == 0 {
                    base
                } else if odds <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_gamma(shape + yf) - ln_factorial(y) - ln_gamma(shape) + base + yf * odds.ln()
                }
            }
        }
    }

    pub fn pmf(&self, y: u64) -> f64 {
        self.ln_pmf(y).exp()
    }

    /// Probabilities `P(0), P(1), ..` up to the first `y` whose cumulative mass reaches `1 - tail`.
    pub fn truncated_pmf(&self, tail: f64) -> Vec<f64> {
        let mut out = Vec::new();
        let mut cum = 0.0;
        let mut y = 0u64;
        // Hard stop far in the right tail guards against tail mass lost to rounding.
        let cap = (self.mean() + 60.0 * self.variance().sqrt() + 1000.0).min(1e8) as u64;
        while cum < 1.0 - tail && y <= cap {
            let p = self.pmf(y);
            cum += p;
            out.push(p);
            y += 1;
        }
        out
    }

    /// Smallest `y` with `P(Y <= y) >= level`.
    pub fn quantile(&self, level: f64) -> u64 {
        let pmf = self.truncated_pmf(1.0 - level);
        pmf.len().saturating_sub(1) as u64
    }
}

/// The predictive law at latent value `x`: `Poisson(e^x)`, `NegBin(r, x/(1+x))` or `Poisson(x)`.
pub fn predictive(spec: &FamilySpec, theta: &ParameterVector, x: &[f64]) -> Result<PredictiveDistribution> {
    check_latent(spec, x)?;
    Ok(match spec.tag {
        FamilyTag::LogLinear => PredictiveDistribution::Poisson {
            mean: clamped_exp(x[0]).0,
        },
        FamilyTag::Parx => PredictiveDistribution::Poisson { mean: x[0] },
        FamilyTag::Nbin => {
            let r = shape_of(spec, theta)?;
            PredictiveDistribution::NegativeBinomial {
                shape: r,
                odds: x[0] / (1.0 + x[0]),
                mean: r * x[0],
            }
        }
    })
}
