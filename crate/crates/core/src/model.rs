//! Family-agnostic pieces of an observation-driven model of order `(p, q)`:
//! parameter vectors, latent windows, the affine reduced link and the
//! order-(1,1) embedding of the window recursion.
//!
//! Every family handled here is affine in the window. With the window at
//! time `k` holding `(x_{k-p+1}, .., x_k, u_{k-q+1}, .., u_{k-1})` and the
//! newest reduced observation `u_k = reduce(y_k)`, the next latent value is
//!
//! ```text
//! x_{k+1} = omega + sum_i a_i x_{k+1-i} + sum_i b_i u_{k+1-i}   (+ gamma . f(xi_k) for PARX)
//! ```
//!
//! For PARX a latent entry is the pair `(x, xi)` and a reduced entry is
//! `(y, f_1(xi), .., f_d(xi), xi)`; the covariate block of the new latent is a
//! copy of the covariates carried by `u_k`.

use serde::{Deserialize, Serialize};

use crate::error::{OdmError, Result};
use crate::families::{features_into, FamilySpec, FamilyTag};

/// Lag counts of the model: `p` latent lags and `q` observation lags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelOrder {
    pub p: usize,
    pub q: usize,
}

impl ModelOrder {
    pub fn new(p: usize, q: usize) -> Result<Self> {
        let order = Self { p, q };
        order.validate()?;
        Ok(order)
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(OdmError::Config(format!(
                "model order must satisfy p >= 1 and q >= 1, got ({}, {})",
                self.p, self.q
            )));
        }
        Ok(())
    }

    /// `max(p, q)`.
    pub fn span(&self) -> usize {
        self.p.max(self.q)
    }
}

/// Family-specific part of the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Extension {
    None,
    /// Negative binomial shape `r > 0`.
    Shape(f64),
    /// PARX feature weights `gamma_1..gamma_d >= 0`.
    Gamma(Vec<f64>),
}

/// `theta = (omega, a_1..a_p, b_1..b_q [, r | gamma_1..gamma_d])`.
///
/// The flat layout used by the optimizer follows the same order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ParamRepr", try_from = "ParamRepr")]
pub struct ParameterVector {
    pub omega: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub extension: Extension,
}

#[derive(Serialize, Deserialize)]
struct ParamRepr {
    omega: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<Vec<f64>>,
}

impl From<ParameterVector> for ParamRepr {
    fn from(theta: ParameterVector) -> Self {
        let (r, gamma) = match theta.extension {
            Extension::None => (None, None),
            Extension::Shape(r) => (Some(r), None),
            Extension::Gamma(g) => (None, Some(g)),
        };
        Self {
            omega: theta.omega,
            a: theta.a,
            b: theta.b,
            r,
            gamma,
        }
    }
}

impl TryFrom<ParamRepr> for ParameterVector {
    type Error = String;

    fn try_from(repr: ParamRepr) -> std::result::Result<Self, Self::Error> {
        let extension = match (repr.r, repr.gamma) {
            (None, None) => Extension::None,
            (Some(r), None) => Extension::Shape(r),
            (None, Some(g)) => Extension::Gamma(g),
            (Some(_), Some(_)) => {
                return Err("parameter vector cannot carry both `r` and `gamma`".into())
            }
        };
        Ok(Self {
            omega: repr.omega,
            a: repr.a,
            b: repr.b,
            extension,
        })
    }
}

impl ParameterVector {
    /// Log-linear Poisson GARCH parameters; all real values are admissible.
    pub fn loglinear(omega: f64, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let theta = Self {
            omega,
            a,
            b,
            extension: Extension::None,
        };
        theta.check_common()?;
        Ok(theta)
    }

    pub fn nbin(omega: f64, a: Vec<f64>, b: Vec<f64>, r: f64) -> Result<Self> {
        let theta = Self {
            omega,
            a,
            b,
            extension: Extension::Shape(r),
        };
        theta.check_common()?;
        theta.check_nonneg_link()?;
        if !(r > 0.0) {
            return Err(OdmError::Domain(format!("NBIN shape r must be > 0, got {r}")));
        }
        Ok(theta)
    }

    pub fn parx(omega: f64, a: Vec<f64>, b: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if gamma.iter().any(|g| !g.is_finite() || *g < 0.0) {
            return Err(OdmError::Domain(format!(
                "PARX feature weights must be finite and >= 0, got {gamma:?}"
            )));
        }
        let theta = Self {
            omega,
            a,
            b,
            extension: Extension::Gamma(gamma),
        };
        theta.check_common()?;
        theta.check_nonneg_link()?;
        Ok(theta)
    }

    fn check_common(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(OdmError::Config(
                "a and b must each hold at least one coefficient".into(),
            ));
        }
        let finite = std::iter::once(&self.omega)
            .chain(&self.a)
            .chain(&self.b)
            .all(|v| v.is_finite());
        if !finite {
            return Err(OdmError::Domain("parameters must be finite".into()));
        }
        Ok(())
    }

    fn check_nonneg_link(&self) -> Result<()> {
        if !(self.omega > 0.0) {
            return Err(OdmError::Domain(format!(
                "omega must be > 0 for this family, got {}",
                self.omega
            )));
        }
        if self.a.iter().chain(&self.b).any(|v| *v < 0.0) {
            return Err(OdmError::Domain(format!(
                "a and b must be >= 0 elementwise for this family, got a={:?} b={:?}",
                self.a, self.b
            )));
        }
        Ok(())
    }

    /// Checks lengths against the model order and the family constraints.
    pub fn validate(&self, spec: &FamilySpec) -> Result<()> {
        if self.a.len() != spec.order.p || self.b.len() != spec.order.q {
            return Err(OdmError::Config(format!(
                "parameter lengths (a: {}, b: {}) do not match order ({}, {})",
                self.a.len(),
                self.b.len(),
                spec.order.p,
                spec.order.q
            )));
        }
        self.check_common()?;
        match (spec.tag, &self.extension) {
            (FamilyTag::LogLinear, Extension::None) => Ok(()),
            (FamilyTag::Nbin, Extension::Shape(r)) => {
                self.check_nonneg_link()?;
                if r.is_finite() && *r > 0.0 {
                    Ok(())
                } else {
                    Err(OdmError::Domain(format!("NBIN shape r must be > 0, got {r}")))
                }
            }
            (FamilyTag::Parx, Extension::Gamma(g)) => {
                self.check_nonneg_link()?;
                let d = spec.parx.as_ref().map(|c| c.features.len()).unwrap_or(0);
                if g.len() != d {
                    return Err(OdmError::Config(format!(
                        "PARX gamma has {} entries but {} features are configured",
                        g.len(),
                        d
                    )));
                }
                if g.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(OdmError::Domain("PARX gamma must be >= 0".into()));
                }
                Ok(())
            }
            (tag, _) => Err(OdmError::Config(format!(
                "parameter extension does not match family {tag}"
            ))),
        }
    }

    pub fn shape(&self) -> Option<f64> {
        match self.extension {
            Extension::Shape(r) => Some(r),
            _ => None,
        }
    }

    pub fn gamma(&self) -> &[f64] {
        match &self.extension {
            Extension::Gamma(g) => g,
            _ => &[],
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.a.len()
            + self.b.len()
            + match &self.extension {
                Extension::None => 0,
                Extension::Shape(_) => 1,
                Extension::Gamma(g) => g.len(),
            }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.push(self.omega);
        out.extend_from_slice(&self.a);
        out.extend_from_slice(&self.b);
        match &self.extension {
            Extension::None => {}
            Extension::Shape(r) => out.push(*r),
            Extension::Gamma(g) => out.extend_from_slice(g),
        }
        out
    }

    /// Rebuilds a parameter vector from the flat layout without validation.
    pub fn from_flat(spec: &FamilySpec, flat: &[f64]) -> Result<Self> {
        let (p, q) = (spec.order.p, spec.order.q);
        if flat.len() != spec.theta_dim() {
            return Err(OdmError::Config(format!(
                "flat parameter vector has {} entries, family expects {}",
                flat.len(),
                spec.theta_dim()
            )));
        }
        let extension = match spec.tag {
            FamilyTag::LogLinear => Extension::None,
            FamilyTag::Nbin => Extension::Shape(flat[1 + p + q]),
            FamilyTag::Parx => Extension::Gamma(flat[1 + p + q..].to_vec()),
        };
        Ok(Self {
            omega: flat[0],
            a: flat[1..1 + p].to_vec(),
            b: flat[1 + p..1 + p + q].to_vec(),
            extension,
        })
    }

    pub fn coefficients(&self) -> LinkCoefficients<'_> {
        LinkCoefficients {
            omega: self.omega,
            a: &self.a,
            b: &self.b,
            gamma: self.gamma(),
        }
    }
}

/// Coordinate labels of the flat parameter layout (`omega`, `a1`, .., `b1`, .., `r` | `gamma1`, ..).
pub fn coordinate_names(spec: &FamilySpec) -> Vec<String> {
    let mut names = vec!["omega".to_string()];
    names.extend((1..=spec.order.p).map(|i| format!("a{i}")));
    names.extend((1..=spec.order.q).map(|i| format!("b{i}")));
    match spec.tag {
        FamilyTag::LogLinear => {}
        FamilyTag::Nbin => names.push("r".into()),
        FamilyTag::Parx => {
            names.extend((1..=spec.feature_count()).map(|i| format!("gamma{i}")))
        }
    }
    names
}

/// Borrowed view of the link coefficients, shared by every recursion path.
#[derive(Debug, Clone, Copy)]
pub struct LinkCoefficients<'a> {
    pub omega: f64,
    pub a: &'a [f64],
    pub b: &'a [f64],
    pub gamma: &'a [f64],
}

impl<'a> LinkCoefficients<'a> {
    /// View over the flat layout; `gamma` is empty unless the family is PARX.
    pub fn from_flat(spec: &FamilySpec, flat: &'a [f64]) -> Self {
        let (p, q) = (spec.order.p, spec.order.q);
        let gamma = match spec.tag {
            FamilyTag::Parx => &flat[1 + p + q..],
            _ => &[],
        };
        Self {
            omega: flat[0],
            a: &flat[1..1 + p],
            b: &flat[1 + p..1 + p + q],
            gamma,
        }
    }
}

/// Scalar part of the reduced link.
///
/// `latents` holds the `p` most recent latent entries oldest-first (stride
/// `latent_dim`), `reduced` the `q - 1` reduced entries preceding `u_now`
/// (stride `reduced_dim`). The summation order is fixed: omega, the `a`
/// terms, the `b` terms, then the PARX feature terms.
#[inline]
pub(crate) fn link_scalar(
    coef: &LinkCoefficients<'_>,
    latents: &[f64],
    latent_dim: usize,
    reduced: &[f64],
    reduced_dim: usize,
    u_now: &[f64],
) -> f64 {
    let p = coef.a.len();
    let q = coef.b.len();
    let mut acc = coef.omega;
    for (i, a) in coef.a.iter().enumerate() {
        acc += a * latents[(p - 1 - i) * latent_dim];
    }
    acc += coef.b[0] * u_now[0];
    for i in 2..=q {
        acc += coef.b[i - 1] * reduced[(q - i) * reduced_dim];
    }
    for (j, g) in coef.gamma.iter().enumerate() {
        acc += g * u_now[1 + j];
    }
    acc
}

/// One observation: a count and, for PARX, the covariate row observed alongside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<'a> {
    pub count: u64,
    pub covariates: Option<&'a [f64]>,
}

impl Observation<'static> {
    pub fn count(count: u64) -> Self {
        Self {
            count,
            covariates: None,
        }
    }
}

/// Converts a signed count read from outside into the observation domain.
pub fn count_from_signed(value: i64) -> Result<u64> {
    u64::try_from(value)
        .map_err(|_| OdmError::Domain(format!("counts must be nonnegative, got {value}")))
}

/// Observed counts `y_0..y_n` and, for PARX, covariate rows `xi_0..xi_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub y: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<Vec<f64>>>,
}

impl ObservationSeries {
    pub fn new(y: Vec<u64>) -> Self {
        Self {
            y,
            covariates: None,
        }
    }

    pub fn with_covariates(y: Vec<u64>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        if covariates.len() != y.len() {
            return Err(OdmError::Domain(format!(
                "{} covariate rows for {} counts",
                covariates.len(),
                y.len()
            )));
        }
        Ok(Self {
            y,
            covariates: Some(covariates),
        })
    }

    /// Number of observations, `n + 1`.
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Index of the last observation, `n`; the likelihood averages `n` terms.
    pub fn n(&self) -> usize {
        self.y.len().saturating_sub(1)
    }

    pub fn observation(&self, t: usize) -> Observation<'_> {
        Observation {
            count: self.y[t],
            covariates: self.covariates.as_ref().map(|c| c[t].as_slice()),
        }
    }

    pub fn mean_count(&self) -> f64 {
        if self.y.is_empty() {
            return 0.0;
        }
        self.y.iter().map(|&v| v as f64).sum::<f64>() / self.y.len() as f64
    }

    pub fn validate(&self, spec: &FamilySpec) -> Result<()> {
        match (&spec.parx, &self.covariates) {
            (None, None) => Ok(()),
            (Some(cfg), Some(rows)) => {
                if rows.len() != self.y.len() {
                    return Err(OdmError::Domain(format!(
                        "{} covariate rows for {} counts",
                        rows.len(),
                        self.y.len()
                    )));
                }
                for (t, row) in rows.iter().enumerate() {
                    if row.len() != cfg.covariate_dim {
                        return Err(OdmError::Domain(format!(
                            "covariate row {t} has {} entries, expected {}",
                            row.len(),
                            cfg.covariate_dim
                        )));
                    }
                    if row.iter().any(|v| !v.is_finite()) {
                        return Err(OdmError::Domain(format!(
                            "covariate row {t} is not finite"
                        )));
                    }
                }
                Ok(())
            }
            (Some(_), None) => Err(OdmError::Domain(
                "PARX series require covariate rows".into(),
            )),
            (None, Some(_)) => Err(OdmError::Domain(
                "covariate rows are only allowed for PARX".into(),
            )),
        }
    }

    /// All reduced observations `u_0..u_n`, flattened with stride `reduced_dim`.
    pub fn reduced(&self, spec: &FamilySpec) -> Result<Vec<f64>> {
        self.validate(spec)?;
        let rd = spec.reduced_dim();
        let mut out = vec![0.0; rd * self.len()];
        for t in 0..self.len() {
            reduce_into(spec, self.observation(t), &mut out[t * rd..(t + 1) * rd])?;
        }
        Ok(out)
    }
}

/// The admissible mapping: `ln(1 + y)` for log-linear, `y` for NBIN and
/// `(y, f_1(xi), .., f_d(xi), xi)` for PARX.
pub fn reduce(spec: &FamilySpec, obs: Observation<'_>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; spec.reduced_dim()];
    reduce_into(spec, obs, &mut out)?;
    Ok(out)
}

pub(crate) fn reduce_into(spec: &FamilySpec, obs: Observation<'_>, out: &mut [f64]) -> Result<()> {
    let y = obs.count as f64;
    match spec.tag {
        FamilyTag::LogLinear => out[0] = y.ln_1p(),
        FamilyTag::Nbin => out[0] = y,
        FamilyTag::Parx => {
            let cfg = spec.parx_config()?;
            let xi = obs.covariates.ok_or_else(|| {
                OdmError::Domain("PARX observations carry a covariate row".into())
            })?;
            if xi.len() != cfg.covariate_dim {
                return Err(OdmError::Domain(format!(
                    "covariate row has {} entries, expected {}",
                    xi.len(),
                    cfg.covariate_dim
                )));
            }
            let d = cfg.features.len();
            out[0] = y;
            features_into(cfg, xi, &mut out[1..1 + d]);
            out[1 + d..].copy_from_slice(xi);
        }
    }
    Ok(())
}

/// The state `(x_{-p+1}, .., x_0, u_{-q+1}, .., u_{-1})`, stored oldest-first in
/// one contiguous buffer: `p` latent entries followed by `q - 1` reduced entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "WindowRepr", try_from = "WindowRepr")]
pub struct LatentWindow {
    order: ModelOrder,
    latent_dim: usize,
    reduced_dim: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct WindowRepr {
    latent: Vec<Vec<f64>>,
    reduced: Vec<Vec<f64>>,
}

impl From<LatentWindow> for WindowRepr {
    fn from(w: LatentWindow) -> Self {
        Self {
            latent: (0..w.order.p).map(|i| w.latent(i).to_vec()).collect(),
            reduced: (0..w.order.q - 1).map(|j| w.reduced(j).to_vec()).collect(),
        }
    }
}

impl TryFrom<WindowRepr> for LatentWindow {
    type Error = String;

    fn try_from(repr: WindowRepr) -> std::result::Result<Self, Self::Error> {
        let ld = repr.latent.first().map(Vec::len).unwrap_or(0);
        let rd = repr.reduced.first().map(Vec::len).unwrap_or(0);
        LatentWindow::from_blocks(&repr.latent, &repr.reduced, ld, rd).map_err(|e| e.to_string())
    }
}

impl LatentWindow {
    fn from_blocks(
        latent: &[Vec<f64>],
        reduced: &[Vec<f64>],
        latent_dim: usize,
        reduced_dim: usize,
    ) -> Result<Self> {
        let order = ModelOrder::new(latent.len(), reduced.len() + 1)?;
        let reduced_dim = if reduced.is_empty() { 0 } else { reduced_dim };
        if latent_dim == 0 {
            return Err(OdmError::Config("latent entries must be nonempty".into()));
        }
        let mut data = Vec::with_capacity(latent.len() * latent_dim + reduced.len() * reduced_dim);
        for x in latent {
            if x.len() != latent_dim {
                return Err(OdmError::Config("latent entries differ in dimension".into()));
            }
            data.extend_from_slice(x);
        }
        for u in reduced {
            if u.len() != reduced_dim {
                return Err(OdmError::Config("reduced entries differ in dimension".into()));
            }
            data.extend_from_slice(u);
        }
        Ok(Self {
            order,
            latent_dim,
            reduced_dim,
            data,
        })
    }

    /// Builds a window for `spec` from per-entry blocks (oldest first) and checks the family domain.
    pub fn new(spec: &FamilySpec, latent: &[Vec<f64>], reduced: &[Vec<f64>]) -> Result<Self> {
        if latent.len() != spec.order.p || reduced.len() + 1 != spec.order.q {
            return Err(OdmError::Config(format!(
                "window with {} latent and {} reduced entries does not fit order ({}, {})",
                latent.len(),
                reduced.len(),
                spec.order.p,
                spec.order.q
            )));
        }
        let w = Self::from_blocks(latent, reduced, spec.latent_dim(), spec.reduced_dim())?;
        w.validate(spec)?;
        Ok(w)
    }

    /// Scalar-latent window (log-linear and NBIN).
    pub fn scalar(spec: &FamilySpec, x: &[f64], u: &[f64]) -> Result<Self> {
        let latent: Vec<Vec<f64>> = x.iter().map(|&v| vec![v]).collect();
        let reduced: Vec<Vec<f64>> = u.iter().map(|&v| vec![v]).collect();
        Self::new(spec, &latent, &reduced)
    }

    /// The constant-entry window `(x1, .., x1, reduce(y1), .., reduce(y1))`.
    /// For PARX the latent entries are `(x1, xi1)` and the reduced entries
    /// `reduce((y1, xi1))`.
    pub fn constant(spec: &FamilySpec, x1: f64, y1: u64, xi1: Option<&[f64]>) -> Result<Self> {
        let obs = Observation {
            count: y1,
            covariates: xi1,
        };
        let u = reduce(spec, obs)?;
        let mut x = vec![x1];
        if spec.tag == FamilyTag::Parx {
            x.extend_from_slice(xi1.unwrap_or_default());
        }
        let latent = vec![x; spec.order.p];
        let reduced = vec![u; spec.order.q - 1];
        Self::new(spec, &latent, &reduced)
    }

    pub fn validate(&self, spec: &FamilySpec) -> Result<()> {
        if self.order != spec.order
            || self.latent_dim != spec.latent_dim()
            || (self.order.q > 1 && self.reduced_dim != spec.reduced_dim())
        {
            return Err(OdmError::Config(
                "window layout does not match the family".into(),
            ));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(OdmError::Domain("window entries must be finite".into()));
        }
        match spec.tag {
            FamilyTag::LogLinear => Ok(()),
            FamilyTag::Nbin | FamilyTag::Parx => {
                for i in 0..self.order.p {
                    if self.latent(i)[0] < 0.0 {
                        return Err(OdmError::Domain(format!(
                            "latent entry {i} must be >= 0, got {}",
                            self.latent(i)[0]
                        )));
                    }
                }
                for j in 0..self.order.q - 1 {
                    let y = self.reduced(j)[0];
                    if y < 0.0 || y.fract() != 0.0 {
                        return Err(OdmError::Domain(format!(
                            "reduced entry {j} must be a nonnegative integer count, got {y}"
                        )));
                    }
                    if let FamilyTag::Parx = spec.tag {
                        let d = spec.feature_count();
                        if self.reduced(j)[1..1 + d].iter().any(|f| *f < 0.0) {
                            return Err(OdmError::Domain("feature values must be >= 0".into()));
                        }
                    }
                }
                Ok(())
            }
        }
    }

    pub fn order(&self) -> ModelOrder {
        self.order
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn reduced_dim(&self) -> usize {
        self.reduced_dim
    }

    /// Latent entry `i` (0 = oldest, `p - 1` = newest).
    pub fn latent(&self, i: usize) -> &[f64] {
        &self.data[i * self.latent_dim..(i + 1) * self.latent_dim]
    }

    /// Reduced entry `j` (0 = oldest, `q - 2` = newest).
    pub fn reduced(&self, j: usize) -> &[f64] {
        let start = self.order.p * self.latent_dim + j * self.reduced_dim;
        &self.data[start..start + self.reduced_dim]
    }

    /// `Pi_p(z)`: the newest latent entry.
    pub fn last_latent(&self) -> &[f64] {
        self.latent(self.order.p - 1)
    }

    /// `Pi_j(z)` for `1 <= j <= p + q - 1`.
    pub fn projection(&self, j: usize) -> &[f64] {
        assert!(j >= 1 && j < self.order.p + self.order.q, "projection index out of range");
        if j <= self.order.p {
            self.latent(j - 1)
        } else {
            self.reduced(j - self.order.p - 1)
        }
    }

    fn latent_block(&self) -> &[f64] {
        &self.data[..self.order.p * self.latent_dim]
    }

    fn reduced_block(&self) -> &[f64] {
        &self.data[self.order.p * self.latent_dim..]
    }

    /// Next scalar latent value `psi~_{u_now}(z)`.
    #[inline]
    pub(crate) fn next_scalar(&self, coef: &LinkCoefficients<'_>, u_now: &[f64]) -> f64 {
        link_scalar(
            coef,
            self.latent_block(),
            self.latent_dim,
            self.reduced_block(),
            self.reduced_dim,
            u_now,
        )
    }

    /// In-place embedding step: shift the latent block, append the new latent,
    /// shift the reduced block and append `u_now`.
    pub fn advance(&mut self, coef: &LinkCoefficients<'_>, u_now: &[f64]) {
        let x_new = self.next_scalar(coef, u_now);
        let (ld, rd, p) = (self.latent_dim, self.reduced_dim, self.order.p);
        let xs = p * ld;
        self.data.copy_within(ld..xs, 0);
        self.data[xs - ld] = x_new;
        if ld > 1 {
            // PARX: the covariate block of the new latent is the xi carried by u_now.
            let d = u_now.len() - ld;
            self.data[xs - ld + 1..xs].copy_from_slice(&u_now[d + 1..]);
        }
        if self.order.q > 1 {
            let end = self.data.len();
            self.data.copy_within(xs + rd..end, xs);
            self.data[end - rd..].copy_from_slice(u_now);
        }
    }

    /// Window distance: maximum over entries of the per-entry distance,
    /// with absolute differences on scalar components and the Euclidean norm on covariate blocks.
    pub fn distance(&self, other: &Self, spec: &FamilySpec) -> f64 {
        let mut d: f64 = 0.0;
        for i in 0..self.order.p {
            d = d.max(latent_distance(spec, self.latent(i), other.latent(i)));
        }
        for j in 0..self.order.q - 1 {
            d = d.max(reduced_distance(spec, self.reduced(j), other.reduced(j)));
        }
        d
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance between two latent entries.
pub fn latent_distance(spec: &FamilySpec, x: &[f64], y: &[f64]) -> f64 {
    let scalar = (x[0] - y[0]).abs();
    if spec.tag == FamilyTag::Parx {
        scalar.max(euclid(&x[1..], &y[1..]))
    } else {
        scalar
    }
}

fn reduced_distance(spec: &FamilySpec, u: &[f64], v: &[f64]) -> f64 {
    if spec.tag == FamilyTag::Parx {
        let d = spec.feature_count();
        let mut m = (u[0] - v[0]).abs();
        for j in 1..=d {
            m = m.max((u[j] - v[j]).abs());
        }
        m.max(euclid(&u[1 + d..], &v[1 + d..]))
    } else {
        (u[0] - v[0]).abs()
    }
}

/// Next latent entry `psi~^theta_{u_now}(z)`; for PARX the returned entry is `(x, xi)`.
pub fn link_step(
    spec: &FamilySpec,
    theta: &ParameterVector,
    z: &LatentWindow,
    u_now: &[f64],
) -> Result<Vec<f64>> {
    theta.validate(spec)?;
    z.validate(spec)?;
    if u_now.len() != spec.reduced_dim() {
        return Err(OdmError::Domain(format!(
            "reduced observation has {} components, expected {}",
            u_now.len(),
            spec.reduced_dim()
        )));
    }
    let mut out = vec![z.next_scalar(&theta.coefficients(), u_now)];
    if spec.tag == FamilyTag::Parx {
        let d = spec.feature_count();
        out.extend_from_slice(&u_now[1 + d..]);
    }
    Ok(out)
}

/// `Psi^theta_y(z)`: the embedded order-(1,1) transition on windows.
pub fn embed_step(
    spec: &FamilySpec,
    theta: &ParameterVector,
    z: &LatentWindow,
    obs: Observation<'_>,
) -> Result<LatentWindow> {
    theta.validate(spec)?;
    z.validate(spec)?;
    let u = reduce(spec, obs)?;
    let mut next = z.clone();
    next.advance(&theta.coefficients(), &u);
    Ok(next)
}

/// `x_k` obtained from the window `z` after consuming `y_0..y_{k-1}`.
///
/// Runs the direct recursion over a growing time-indexed history (no window
/// shifting); `k = 0` returns the newest latent entry of `z`.
pub fn iterate_latent(
    spec: &FamilySpec,
    theta: &ParameterVector,
    z: &LatentWindow,
    series: &ObservationSeries,
    k: usize,
) -> Result<Vec<f64>> {
    theta.validate(spec)?;
    z.validate(spec)?;
    if k > series.len() {
        return Err(OdmError::Domain(format!(
            "prefix length {k} exceeds the {} available observations",
            series.len()
        )));
    }
    let (p, q) = (spec.order.p, spec.order.q);
    let (ld, rd) = (spec.latent_dim(), spec.reduced_dim());
    let coef = theta.coefficients();

    // xs[t] holds x_{t-p+1}; us[t] holds u_{t-q+1}.
    let mut xs = Vec::with_capacity((p + k) * ld);
    for i in 0..p {
        xs.extend_from_slice(z.latent(i));
    }
    let mut us = Vec::with_capacity((q - 1 + k) * rd);
    for j in 0..q - 1 {
        us.extend_from_slice(z.reduced(j));
    }
    let mut u = vec![0.0; rd];
    for t in 0..k {
        reduce_into(spec, series.observation(t), &mut u)?;
        // x_{t+1} from x_{t-p+1..t} and u_{t-q+1..t}.
        let x_new = link_scalar(
            &coef,
            &xs[t * ld..(t + p) * ld],
            ld,
            &us[t * rd..(t + q - 1) * rd],
            rd,
            &u,
        );
        xs.push(x_new);
        if ld > 1 {
            let d = spec.feature_count();
            xs.extend_from_slice(&u[1 + d..]);
        }
        us.extend_from_slice(&u);
    }
    Ok(xs[(k + p - 1) * ld..(k + p) * ld].to_vec())
}

/// Lower bound on the initial latent level for the positive families.
pub const MIN_INITIAL_LATENT: f64 = 1e-6;

/// Constant-entry initial window: log-linear uses `x = 0, y = 0`; NBIN and PARX
/// use `x = max(mean(y), 1e-6)` and `y = y_0` (PARX pairs them with `xi_0`).
pub fn default_initial_window(spec: &FamilySpec, series: &ObservationSeries) -> Result<LatentWindow> {
    if series.is_empty() {
        return Err(OdmError::Domain("series is empty".into()));
    }
    series.validate(spec)?;
    match spec.tag {
        FamilyTag::LogLinear => LatentWindow::constant(spec, 0.0, 0, None),
        FamilyTag::Nbin => LatentWindow::constant(
            spec,
            series.mean_count().max(MIN_INITIAL_LATENT),
            series.y[0],
            None,
        ),
        FamilyTag::Parx => {
            let xi0 = series.covariates.as_ref().map(|c| c[0].as_slice());
            LatentWindow::constant(
                spec,
                series.mean_count().max(MIN_INITIAL_LATENT),
                series.y[0],
                xi0,
            )
        }
    }
}
