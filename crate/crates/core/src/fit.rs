//! Maximum likelihood over a box of parameters, and one-step forecasting.
//!
//! Each start runs a Nelder-Mead simplex search on `-L` in the unit cube of
//! the free coordinates (a coordinate with equal bounds is pinned), followed
//! by a projected-gradient polish with Armijo backtracking. Starts run in
//! parallel and the best final value wins, lowest start index on ties.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{check_stability, ConditionReport, LoglinCheckOptions, Verdict};
use crate::error::{OdmError, Result};
use crate::families::{predictive, FamilySpec, FamilyTag, PredictiveDistribution};
use crate::likelihood::{LikelihoodValue, Objective};
use crate::model::{iterate_latent, LatentWindow, ObservationSeries, ParameterVector};
use crate::rng::{SeedTree, Stream};

/// Smallest admissible value of strictly positive coordinates (NBIN/PARX omega, NBIN r).
pub const POSITIVE_FLOOR: f64 = 1e-10;

/// Compact parameter box in the flat layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Drop starts and final points that fail the family's stability check.
    #[serde(default)]
    pub stability_projection: bool,
}

impl ThetaBox {
    /// Validates the bounds and intersects them with the family constraints.
    pub fn new(spec: &FamilySpec, lower: Vec<f64>, upper: Vec<f64>, stability_projection: bool) -> Result<Self> {
        let dim = spec.theta_dim();
        if lower.len() != dim || upper.len() != dim {
            return Err(OdmError::Config(format!(
                "box bounds have lengths {} and {}, family expects {dim}",
                lower.len(),
                upper.len()
            )));
        }
        let mut b = Self {
            lower,
            upper,
            stability_projection,
        };
        if spec.tag != FamilyTag::LogLinear {
            b.lower[0] = b.lower[0].max(POSITIVE_FLOOR);
            for v in &mut b.lower[1..] {
                *v = v.max(0.0);
            }
            if spec.tag == FamilyTag::Nbin {
                let r = dim - 1;
                b.lower[r] = b.lower[r].max(POSITIVE_FLOOR);
            }
        }
        for j in 0..dim {
            let (lo, hi) = (b.lower[j], b.upper[j]);
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(OdmError::Config(format!(
                    "box coordinate {j} is empty or unbounded after intersecting family constraints: [{lo}, {hi}]"
                )));
            }
        }
        Ok(b)
    }

    /// Log-linear `omega in [-5, 5]`, `a, b in [-1, 1]`; NBIN `omega in [1e-4, 50]`,
    /// `a, b in [0, 1]`, `r in [1e-2, 50]`; PARX as NBIN with `gamma in [0, 10]`.
    pub fn default_for(spec: &FamilySpec) -> Self {
        let (p, q) = (spec.order.p, spec.order.q);
        let (mut lower, mut upper) = match spec.tag {
            FamilyTag::LogLinear => (vec![-5.0], vec![5.0]),
            _ => (vec![1e-4], vec![50.0]),
        };
        let (lc, uc) = match spec.tag {
            FamilyTag::LogLinear => (-1.0, 1.0),
            _ => (0.0, 1.0),
        };
        lower.extend(std::iter::repeat_n(lc, p + q));
        upper.extend(std::iter::repeat_n(uc, p + q));
        match spec.tag {
            FamilyTag::LogLinear => {}
            FamilyTag::Nbin => {
                lower.push(1e-2);
                upper.push(50.0);
            }
            FamilyTag::Parx => {
                lower.extend(std::iter::repeat_n(0.0, spec.feature_count()));
                upper.extend(std::iter::repeat_n(10.0, spec.feature_count()));
            }
        }
        Self {
            lower,
            upper,
            stability_projection: false,
        }
    }

    /// Pins coordinate `j` to `value`.
    pub fn pin(mut self, j: usize, value: f64) -> Self {
        self.lower[j] = value;
        self.upper[j] = value;
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, flat: &[f64]) -> bool {
        flat.len() == self.dim()
            && flat
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (lo + hi))
            .collect()
    }

    pub fn project(&self, flat: &mut [f64]) {
        for (v, (lo, hi)) in flat.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*lo, *hi);
        }
    }

    fn free(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&j| self.upper[j] > self.lower[j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    /// Starts generated by the optimizer: box center, a data-informed point, then quasi-random points.
    pub starts: usize,
    /// Additional caller-supplied starts in the flat layout, projected into the box.
    pub extra_starts: Vec<Vec<f64>>,
    pub seed: u64,
    /// Simplex iteration cap per start.
    pub max_iter: usize,
    pub f_tol: f64,
    /// Simplex diameter tolerance in unit-cube coordinates.
    pub x_tol: f64,
    /// Projected-gradient iteration cap per start; 0 disables the polish.
    pub polish_iter: usize,
    /// Require `n >= min_obs_per_param * dim(theta)`.
    pub min_obs_per_param: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            extra_starts: Vec::new(),
            seed: 0,
            max_iter: 5000,
            f_tol: 1e-8,
            x_tol: 1e-6,
            polish_iter: 200,
            min_obs_per_param: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub index: usize,
    pub initial: Vec<f64>,
    #[serde(rename = "final")]
    pub final_theta: Vec<f64>,
    #[serde(with = "crate::serde_util::float")]
    pub final_value: f64,
    /// Incumbent value after each simplex iteration block and polish step.
    #[serde(with = "crate::serde_util::float_vec")]
    pub incumbent: Vec<f64>,
    pub simplex_iterations: usize,
    pub polish_iterations: usize,
    pub converged: bool,
    /// The gradient polish was skipped or abandoned because the gradient was not finite.
    pub derivative_free_only: bool,
    /// Dropped by the stability projection.
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FamilySpec,
    pub z_init: LatentWindow,
    pub theta_hat: ParameterVector,
    pub loglik: LikelihoodValue,
    pub starts: usize,
    pub converged: bool,
    pub best_start: usize,
    pub condition_report: ConditionReport,
    pub theta_box: ThetaBox,
    pub trace: Vec<StartTrace>,
}

/// Unit-cube parameterization of the free coordinates.
struct Cube<'a> {
    obj: &'a Objective<'a>,
    bounds: &'a ThetaBox,
    free: Vec<usize>,
}

impl Cube<'_> {
    fn to_theta(&self, s: &[f64]) -> Vec<f64> {
        let mut flat = self.bounds.lower.clone();
        for (k, &j) in self.free.iter().enumerate() {
            let (lo, hi) = (self.bounds.lower[j], self.bounds.upper[j]);
            flat[j] = (lo + s[k].clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi);
        }
        flat
    }

    fn to_cube(&self, flat: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .map(|&j| {
                let (lo, hi) = (self.bounds.lower[j], self.bounds.upper[j]);
                ((flat[j] - lo) / (hi - lo)).clamp(0.0, 1.0)
            })
            .collect()
    }

    /// `-L`, with `-inf` and NaN mapped to `+inf`.
    fn cost(&self, s: &[f64]) -> f64 {
        let v = self.obj.value(&self.to_theta(s));
        if v.is_finite() {
            -v
        } else {
            f64::INFINITY
        }
    }
}

struct LocalOutcome {
    s: Vec<f64>,
    cost: f64,
    incumbent: Vec<f64>,
    simplex_iterations: usize,
    polish_iterations: usize,
    converged: bool,
    derivative_free_only: bool,
}

fn nelder_mead(cube: &Cube<'_>, s0: &[f64], opts: &FitOptions, incumbent: &mut Vec<f64>) -> (Vec<f64>, f64, usize, bool) {
    let m = s0.len();
    if m == 0 {
        let c = cube.cost(s0);
        incumbent.push(-c);
        return (s0.to_vec(), c, 0, true);
    }
    let mut pts: Vec<Vec<f64>> = vec![s0.to_vec()];
    for k in 0..m {
        let mut v = s0.to_vec();
        v[k] = if v[k] + 0.1 <= 1.0 { v[k] + 0.1 } else { v[k] - 0.1 };
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| cube.cost(p)).collect();
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let along = |c: &[f64], w: &[f64], t: f64| -> Vec<f64> {
        c.iter().zip(w).map(|(ci, wi)| ci + t * (wi - ci)).collect()
    };

    let mut iter = 0;
    let mut converged = false;
    while iter < opts.max_iter {
        let mut order: Vec<usize> = (0..=m).collect();
        order.sort_by(|&i, &j| vals[i].total_cmp(&vals[j]).then(i.cmp(&j)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if iter % 10 == 0 {
            incumbent.push(-vals[0]);
        }

        let spread = (vals[m] - vals[0]).abs();
        let diameter = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if vals[0].is_finite() && spread < opts.f_tol && diameter < opts.x_tol {
            converged = true;
            break;
        }
        iter += 1;

        let mut centroid = vec![0.0; m];
        for p in &pts[..m] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / m as f64;
            }
        }
        let worst = pts[m].clone();
        let xr = clamp(along(&centroid, &worst, -1.0));
        let fr = cube.cost(&xr);
        if fr < vals[0] {
            let xe = clamp(along(&centroid, &worst, -2.0));
            let fe = cube.cost(&xe);
            if fe < fr {
                pts[m] = xe;
                vals[m] = fe;
            } else {
                pts[m] = xr;
                vals[m] = fr;
            }
            continue;
        }
        if fr < vals[m - 1] {
            pts[m] = xr;
            vals[m] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[m] {
            let xc = clamp(along(&centroid, &xr, 0.5));
            let fc = cube.cost(&xc);
            (xc, fc)
        } else {
            let xc = clamp(along(&centroid, &worst, 0.5));
            let fc = cube.cost(&xc);
            (xc, fc)
        };
        if fc < vals[m].min(fr) {
            pts[m] = xc;
            vals[m] = fc;
            continue;
        }
        let best = pts[0].clone();
        for i in 1..=m {
            pts[i] = along(&best, &pts[i], 0.5);
            vals[i] = cube.cost(&pts[i]);
        }
    }
    let best = (0..=m).min_by(|&i, &j| vals[i].total_cmp(&vals[j]).then(i.cmp(&j))).unwrap();
    incumbent.push(-vals[best]);
    (pts[best].clone(), vals[best], iter, converged)
}

/// Projected gradient ascent on `L` in cube coordinates. Returns `None` when the
/// gradient is not available at the starting point.
fn polish(cube: &Cube<'_>, s0: &[f64], c0: f64, opts: &FitOptions, incumbent: &mut Vec<f64>) -> Option<(Vec<f64>, f64, usize)> {
    let scale: Vec<f64> = cube
        .free
        .iter()
        .map(|&j| cube.bounds.upper[j] - cube.bounds.lower[j])
        .collect();
    let cube_grad = |s: &[f64]| -> Option<Vec<f64>> {
        let (_, g) = cube.obj.value_and_gradient(&cube.to_theta(s)).ok()?;
        let gs: Vec<f64> = cube.free.iter().zip(&scale).map(|(&j, w)| g[j] * w).collect();
        gs.iter().all(|v| v.is_finite()).then_some(gs)
    };
    let mut s = s0.to_vec();
    let mut cost = c0;
    let mut g = cube_grad(&s)?;
    let mut alpha = 1e-2;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut iters = 0;
    while iters < opts.polish_iter {
        iters += 1;
        if let Some((ps, pg)) = &prev {
            // Barzilai-Borwein step from the last accepted move.
            let ds: Vec<f64> = s.iter().zip(ps).map(|(a, b)| a - b).collect();
            let dg: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy: f64 = ds.iter().zip(&dg).map(|(a, b)| a * b).sum();
            let ss: f64 = ds.iter().map(|a| a * a).sum();
            if sy < 0.0 {
                alpha = (ss / -sy).clamp(1e-10, 1e3);
            }
        }
        let mut accepted = None;
        let mut step = alpha;
        for _ in 0..40 {
            let cand: Vec<f64> = s
                .iter()
                .zip(&g)
                .map(|(v, gv)| (v + step * gv).clamp(0.0, 1.0))
                .collect();
            let gain: f64 = cand.iter().zip(&s).zip(&g).map(|((c, v), gv)| (c - v) * gv).sum();
            if gain <= 0.0 {
                break;
            }
            let cc = cube.cost(&cand);
            if cc <= cost - 1e-4 * gain {
                accepted = Some((cand, cc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cc)) = accepted else { break };
        let improvement = cost - cc;
        let Some(gn) = cube_grad(&cand) else {
            s = cand;
            cost = cc;
            incumbent.push(-cost);
            break;
        };
        prev = Some((std::mem::replace(&mut s, cand), std::mem::replace(&mut g, gn)));
        cost = cc;
        alpha = step;
        incumbent.push(-cost);
        if improvement < 1e-15 {
            break;
        }
    }
    Some((s, cost, iters))
}

fn local_search(cube: &Cube<'_>, start: &[f64], opts: &FitOptions) -> LocalOutcome {
    let mut incumbent = Vec::new();
    let s0 = cube.to_cube(start);
    let (s1, c1, it1, conv1) = nelder_mead(cube, &s0, opts, &mut incumbent);
    // One restart from the incumbent guards against simplex collapse.
    let (mut s, mut cost, mut iterations, mut converged) = (s1, c1, it1, conv1);
    if c1.is_finite() && !s.is_empty() {
        let (s2, c2, it2, conv2) = nelder_mead(cube, &s, opts, &mut incumbent);
        iterations += it2;
        converged = conv1 && conv2;
        if c2 <= cost {
            s = s2;
            cost = c2;
        }
    }
    let mut polish_iterations = 0;
    let mut derivative_free_only = false;
    if opts.polish_iter > 0 && cost.is_finite() && !s.is_empty() {
        match polish(cube, &s, cost, opts, &mut incumbent) {
            Some((sp, cp, it)) => {
                polish_iterations = it;
                if cp <= cost {
                    s = sp;
                    cost = cp;
                }
            }
            None => derivative_free_only = true,
        }
    }
    LocalOutcome {
        s,
        cost,
        incumbent,
        simplex_iterations: iterations,
        polish_iterations,
        converged,
        derivative_free_only,
    }
}

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut v = 0.0;
    while i > 0 {
        v += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    v
}

const PRIMES: [u64; 32] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101,
    103, 107, 109, 113, 127, 131,
];

/// Moment-based starting point clamped into the box.
fn data_informed_start(spec: &FamilySpec, series: &ObservationSeries, bounds: &ThetaBox) -> Vec<f64> {
    let (p, q) = (spec.order.p, spec.order.q);
    let ybar = series.mean_count().max(0.1);
    let mut flat = vec![0.0; spec.theta_dim()];
    let (a1, b1) = (0.3, 0.3);
    flat[1] = a1;
    match spec.tag {
        FamilyTag::LogLinear => {
            flat[1 + p] = b1;
            flat[0] = (1.0 - a1 - b1) * ybar.ln();
        }
        FamilyTag::Nbin => {
            let var = series
                .y
                .iter()
                .map(|&v| (v as f64 - ybar) * (v as f64 - ybar))
                .sum::<f64>()
                / series.len().max(2) as f64;
            let x = (var / ybar - 1.0).max(0.1);
            let r = (ybar / x).max(0.1);
            flat[1 + p] = b1 / r;
            flat[1 + p + q] = r;
            flat[0] = x * (1.0 - a1 - b1);
        }
        FamilyTag::Parx => {
            flat[1 + p] = b1;
            flat[0] = ybar * (1.0 - a1 - b1);
        }
    }
    bounds.project(&mut flat);
    flat
}

fn stable(spec: &FamilySpec, flat: &[f64]) -> bool {
    ParameterVector::from_flat(spec, flat)
        .and_then(|t| check_stability(spec, &t, LoglinCheckOptions::default()))
        .map(|r| r.verdict == Verdict::Pass)
        .unwrap_or(false)
}

/// Generated starts in order: box center, data-informed point, Halton points
/// with a Cranley-Patterson shift, then the caller's extra starts.
pub fn start_points(spec: &FamilySpec, series: &ObservationSeries, bounds: &ThetaBox, opts: &FitOptions) -> Vec<Vec<f64>> {
    let free = bounds.free();
    let mut rng = SeedTree::new(opts.seed).stream(Stream::StartJitter);
    let shift: Vec<f64> = free.iter().map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::new();
    if opts.starts >= 1 {
        out.push(bounds.center());
    }
    if opts.starts >= 2 {
        out.push(data_informed_start(spec, series, bounds));
    }
    for i in 0..opts.starts.saturating_sub(2) {
        let mut flat = bounds.lower.clone();
        for (k, &j) in free.iter().enumerate() {
            let h = (radical_inverse(i as u64 + 1, PRIMES[k % PRIMES.len()]) + shift[k]).fract();
            flat[j] = bounds.lower[j] + h * (bounds.upper[j] - bounds.lower[j]);
        }
        out.push(flat);
    }
    for extra in &opts.extra_starts {
        let mut flat = extra.clone();
        bounds.project(&mut flat);
        out.push(flat);
    }
    out
}

/// Conditional maximum likelihood estimate over `bounds`.
pub fn fit_mle(
    spec: &FamilySpec,
    series: &ObservationSeries,
    bounds: &ThetaBox,
    z_init: &LatentWindow,
    opts: &FitOptions,
) -> Result<FitResult> {
    let dim = spec.theta_dim();
    let required = opts.min_obs_per_param * dim;
    if series.n() < required.max(1) {
        return Err(OdmError::TooFewObservations {
            n: series.n(),
            required: required.max(1),
        });
    }
    if bounds.dim() != dim {
        return Err(OdmError::Config(format!("box has {} coordinates, family expects {dim}", bounds.dim())));
    }
    if extra_start_mismatch(opts, dim) {
        return Err(OdmError::Config(format!("extra starts must have {dim} coordinates")));
    }
    let bounds = ThetaBox::new(spec, bounds.lower.clone(), bounds.upper.clone(), bounds.stability_projection)?;
    let obj = Objective::new(spec, z_init, series)?;
    let cube = Cube {
        obj: &obj,
        bounds: &bounds,
        free: bounds.free(),
    };
    let starts = start_points(spec, series, &bounds, opts);

    let trace: Vec<StartTrace> = starts
        .par_iter()
        .enumerate()
        .map(|(index, start)| {
            if bounds.stability_projection && !stable(spec, start) {
                return StartTrace {
                    index,
                    initial: start.clone(),
                    final_theta: start.clone(),
                    final_value: f64::NEG_INFINITY,
                    incumbent: Vec::new(),
                    simplex_iterations: 0,
                    polish_iterations: 0,
                    converged: false,
                    derivative_free_only: false,
                    rejected: true,
                };
            }
            let out = local_search(&cube, start, opts);
            let final_theta = cube.to_theta(&out.s);
            let rejected = bounds.stability_projection && !stable(spec, &final_theta);
            StartTrace {
                index,
                initial: start.clone(),
                final_theta,
                final_value: -out.cost,
                incumbent: out.incumbent,
                simplex_iterations: out.simplex_iterations,
                polish_iterations: out.polish_iterations,
                converged: out.converged,
                derivative_free_only: out.derivative_free_only,
                rejected,
            }
        })
        .collect();

    let best = trace
        .iter()
        .filter(|t| !t.rejected && t.final_value.is_finite())
        .fold(None::<&StartTrace>, |acc, t| match acc {
            Some(b) if b.final_value >= t.final_value => Some(b),
            _ => Some(t),
        })
        .ok_or_else(|| {
            let rejected = trace.iter().filter(|t| t.rejected).count();
            OdmError::FitFailed(format!(
                "all {} starts ended at -inf or were rejected ({rejected} rejected by the stability projection)",
                trace.len()
            ))
        })?;

    let theta_hat = ParameterVector::from_flat(spec, &best.final_theta)?;
    theta_hat.validate(spec)?;
    let loglik = obj.evaluate(&best.final_theta, true);
    let condition_report = check_stability(spec, &theta_hat, LoglinCheckOptions::default())?;
    Ok(FitResult {
        model: spec.clone(),
        z_init: z_init.clone(),
        theta_hat,
        loglik,
        starts: trace.len(),
        converged: best.converged,
        best_start: best.index,
        condition_report,
        theta_box: bounds.clone(),
        trace,
    })
}

fn extra_start_mismatch(opts: &FitOptions, dim: usize) -> bool {
    opts.extra_starts.iter().any(|s| s.len() != dim)
}

/// Predictive law of `y_{n+1}` given `y_0..y_n`.
pub fn forecast_one_step(
    spec: &FamilySpec,
    theta: &ParameterVector,
    z_init: &LatentWindow,
    series: &ObservationSeries,
) -> Result<PredictiveDistribution> {
    if series.is_empty() {
        return Err(OdmError::Domain("forecasting needs at least one observation".into()));
    }
    series.validate(spec)?;
    let x = iterate_latent(spec, theta, z_init, series, series.len())?;
    predictive(spec, theta, &x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_initial_window;
    use approx::assert_abs_diff_eq;

    fn ll11() -> FamilySpec {
        FamilySpec::loglinear(1, 1).unwrap()
    }

    #[test]
    fn box_intersects_family_constraints() {
        let spec = FamilySpec::nbin(1, 1).unwrap();
        let b = ThetaBox::new(&spec, vec![-1.0, -1.0, -1.0, -1.0], vec![2.0, 1.0, 1.0, 3.0], false).unwrap();
        assert_eq!(b.lower, vec![POSITIVE_FLOOR, 0.0, 0.0, POSITIVE_FLOOR]);
        assert!(ThetaBox::new(&spec, vec![0.0; 4], vec![-1.0, 1.0, 1.0, 1.0], false).is_err());
        assert!(ThetaBox::new(&spec, vec![0.0; 3], vec![1.0; 3], false).is_err());
        let d = ThetaBox::default_for(&spec);
        assert_eq!(d.lower, vec![1e-4, 0.0, 0.0, 1e-2]);
        assert_eq!(d.upper, vec![50.0, 1.0, 1.0, 50.0]);
    }

    #[test]
    fn starts_are_deterministic_and_inside() {
        let spec = FamilySpec::loglinear(2, 1).unwrap();
        let series = ObservationSeries::new(vec![1; 50]);
        let b = ThetaBox::default_for(&spec).pin(2, 0.0);
        let opts = FitOptions { seed: 3, ..Default::default() };
        let s1 = start_points(&spec, &series, &b, &opts);
        assert_eq!(s1, start_points(&spec, &series, &b, &opts));
        assert_eq!(s1.len(), 8);
        assert!(s1.iter().all(|s| b.contains(s) && s[2] == 0.0));
        let other = start_points(&spec, &series, &b, &FitOptions { seed: 4, ..Default::default() });
        assert_ne!(s1[2..], other[2..]);
    }

    #[test]
    fn iid_poisson_closed_form() {
        let spec = ll11();
        let y: Vec<u64> = (0..200).map(|t| ((t * 7919) % 11) as u64 % 6).collect();
        let series = ObservationSeries::new(y);
        let z = default_initial_window(&spec, &series).unwrap();
        let b = ThetaBox::default_for(&spec).pin(1, 0.0).pin(2, 0.0);
        let res = fit_mle(&spec, &series, &b, &z, &FitOptions::default()).unwrap();
        let mean = series.y[1..].iter().sum::<u64>() as f64 / series.n() as f64;
        assert_abs_diff_eq!(res.theta_hat.omega, mean.ln(), epsilon = 1e-6);
        assert!(res.converged);
        for t in &res.trace {
            assert!(res.loglik.normalized >= t.final_value - 1e-12);
            assert!(t.incumbent.windows(2).all(|w| w[1] >= w[0]), "{:?}", t.incumbent);
        }
    }

    #[test]
    fn too_few_observations_guard() {
        let spec = ll11();
        let series = ObservationSeries::new(vec![1; 20]);
        let z = default_initial_window(&spec, &series).unwrap();
        let err = fit_mle(&spec, &series, &ThetaBox::default_for(&spec), &z, &FitOptions::default()).unwrap_err();
        assert!(matches!(err, OdmError::TooFewObservations { n: 19, required: 30 }));
        let relaxed = FitOptions { min_obs_per_param: 0, starts: 2, ..Default::default() };
        assert!(fit_mle(&spec, &series, &ThetaBox::default_for(&spec), &z, &relaxed).is_ok());
    }

    #[test]
    fn forecast_examples() {
        let spec = ll11();
        let series = ObservationSeries::new(vec![4, 7, 1]);
        let z = default_initial_window(&spec, &series).unwrap();
        let theta = ParameterVector::loglinear(0.0, vec![0.0], vec![0.0]).unwrap();
        let f = forecast_one_step(&spec, &theta, &z, &series).unwrap();
        assert_eq!(f, PredictiveDistribution::Poisson { mean: 1.0 });

        let spec = FamilySpec::nbin(1, 1).unwrap();
        let z = default_initial_window(&spec, &series).unwrap();
        let theta = ParameterVector::nbin(1.5, vec![0.0], vec![0.0], 2.0).unwrap();
        let f = forecast_one_step(&spec, &theta, &z, &series).unwrap();
        assert_abs_diff_eq!(f.mean(), 3.0, epsilon = 1e-15);
    }

    #[test]
    fn stability_projection_rejects_unstable_points() {
        let spec = FamilySpec::nbin(1, 1).unwrap();
        let y: Vec<u64> = (0..100).map(|t| (t % 5) as u64).collect();
        let series = ObservationSeries::new(y);
        let z = default_initial_window(&spec, &series).unwrap();
        let mut b = ThetaBox::default_for(&spec);
        b.stability_projection = true;
        let res = fit_mle(&spec, &series, &b, &z, &FitOptions::default()).unwrap();
        assert_eq!(res.condition_report.verdict, Verdict::Pass);
        assert!(res.trace.iter().any(|t| t.rejected));
    }
}
