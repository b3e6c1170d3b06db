//! Stability, ergodicity and identifiability checks.
//!
//! * log-linear Poisson GARCH: necessary root conditions on `a` and `a + b`,
//!   the closed-form sufficient bound `sum_k max(|a_k|, |a_k + b_k|) < 1`,
//!   and a finite-depth certificate over all switched recursions
//!   `x_k = sum_j (a_j + b_j w_{k-j}) x_{k-j}`, `w in {0, 1}`;
//! * NBIN-GARCH: `sum a + r sum b < 1`;
//! * PARX: `sum a + sum b < 1`, plus the covariate VAR(1) spectral radius;
//! * identifiability: `P_p(z) = z^p - sum a_k z^{p-k}` and
//!   `Q_q(z) = sum b_{k+1} z^{q-1-k}` share no complex root.

use nalgebra::{DMatrix, Schur};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OdmError, Result};
use crate::families::{FamilySpec, FamilyTag};
use crate::model::{latent_distance, LatentWindow, ParameterVector};
use crate::rng::OdmRng;

/// Strictness margin on spectral radii.
pub const TOL_RADIUS: f64 = 1e-9;
/// Margin on the scalar inequality conditions.
pub const TOL_MARGIN: f64 = 0.0;
/// Common-root detection threshold.
pub const TOL_ROOT: f64 = 1e-8;
/// Default enumeration budget, as a power of two.
pub const DEFAULT_BUDGET_LOG2: u32 = 20;
/// Default certificate depth before scaling down to the budget.
pub const DEFAULT_DEPTH: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckRole {
    /// Violation proves the condition fails.
    Necessary,
    /// Success proves the condition holds.
    Sufficient,
    /// Necessary and sufficient.
    Criterion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub role: CheckRole,
    pub values: Vec<f64>,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, role: CheckRole, values: Vec<f64>, threshold: f64, passed: bool) -> Self {
        Self {
            name: name.to_string(),
            role,
            values,
            threshold,
            passed,
        }
    }
}

/// Outcome of a condition audit with every individual check and its raw value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate_depth: Option<usize>,
    /// Left-hand side of the defining inequality, for single-inequality conditions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lhs: Option<f64>,
}

impl ConditionReport {
    /// Fail if a necessary or criterion check failed, Pass if a sufficient
    /// or criterion check passed, otherwise Inconclusive.
    fn from_checks(condition: &str, checks: Vec<Check>, depth: Option<usize>, lhs: Option<f64>) -> Self {
        let failed_necessary = checks
            .iter()
            .any(|c| !c.passed && matches!(c.role, CheckRole::Necessary | CheckRole::Criterion));
        let passed_sufficient = checks
            .iter()
            .any(|c| c.passed && matches!(c.role, CheckRole::Sufficient | CheckRole::Criterion));
        let verdict = if failed_necessary {
            Verdict::Fail
        } else if passed_sufficient {
            Verdict::Pass
        } else {
            Verdict::Inconclusive
        };
        Self {
            condition: condition.to_string(),
            verdict,
            checks,
            certificate_depth: depth,
            lhs,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

fn quadratic_roots(a: f64, b: f64, c: f64) -> [Complex64; 2] {
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        // Citardauq form avoids cancellation.
        let t = if b >= 0.0 { -0.5 * (b + s) } else { -0.5 * (b - s) };
        if t == 0.0 {
            [Complex64::new(0.0, 0.0); 2]
        } else {
            [Complex64::new(t / a, 0.0), Complex64::new(c / t, 0.0)]
        }
    } else {
        let re = -b / (2.0 * a);
        let im = (-disc).sqrt() / (2.0 * a);
        [Complex64::new(re, im), Complex64::new(re, -im)]
    }
}

fn horner(coeffs: &[f64], z: Complex64) -> Complex64 {
    coeffs
        .iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Durand-Kerner iteration on a monic polynomial (highest degree first).
fn durand_kerner(monic: &[f64]) -> Vec<Complex64> {
    let deg = monic.len() - 1;
    let radius = 1.0 + monic[1..].iter().fold(0.0f64, |m, c| m.max(c.abs()));
    let seed = Complex64::from_polar(1.0, 0.4);
    let mut roots: Vec<Complex64> = (0..deg).map(|i| seed.powu(i as u32) * radius).collect();
    for _ in 0..2000 {
        let mut delta: f64 = 0.0;
        for i in 0..deg {
            let zi = roots[i];
            let mut denom = Complex64::new(1.0, 0.0);
            for (j, zj) in roots.iter().enumerate() {
                if i != j {
                    denom *= zi - zj;
                }
            }
            let step = horner(monic, zi) / denom;
            roots[i] = zi - step;
            delta = delta.max(step.norm());
        }
        if delta < 1e-15 * radius {
            break;
        }
    }
    roots
}

/// Complex roots of a real polynomial given highest-degree coefficient first.
/// Leading zeros are stripped; constants (and the zero polynomial) have no roots.
pub fn polynomial_roots(coeffs: &[f64]) -> Vec<Complex64> {
    let start = coeffs.iter().position(|c| *c != 0.0).unwrap_or(coeffs.len());
    let c = &coeffs[start..];
    if c.len() <= 1 {
        return Vec::new();
    }
    let lead = c[0];
    let monic: Vec<f64> = c.iter().map(|v| v / lead).collect();
    match monic.len() - 1 {
        1 => vec![Complex64::new(-monic[1], 0.0)],
        2 => quadratic_roots(1.0, monic[1], monic[2]).to_vec(),
        deg => {
            // Companion matrix in Frobenius form: first row -c_1..-c_deg, ones on the subdiagonal.
            let mut m = DMatrix::<f64>::zeros(deg, deg);
            for j in 0..deg {
                m[(0, j)] = -monic[j + 1];
            }
            for i in 1..deg {
                m[(i, i - 1)] = 1.0;
            }
            match Schur::try_new(m, f64::EPSILON, 10_000) {
                Some(schur) => schur.complex_eigenvalues().iter().copied().collect(),
                None => durand_kerner(&monic),
            }
        }
    }
}

/// Spectral radius of the companion matrix of `z^k - sum_j c_j z^{k-j}`.
pub fn companion_spectral_radius(c: &[f64]) -> f64 {
    let mut poly = Vec::with_capacity(c.len() + 1);
    poly.push(1.0);
    poly.extend(c.iter().map(|v| -v));
    polynomial_roots(&poly)
        .iter()
        .fold(0.0, |m, z| m.max(z.norm()))
}

/// Spectral radius of a general square matrix (row-major rows).
pub fn matrix_spectral_radius(rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    if n == 1 {
        return rows[0][0].abs();
    }
    let m = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
    if n == 2 {
        let tr = m[(0, 0)] + m[(1, 1)];
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        return quadratic_roots(1.0, -tr, det)
            .iter()
            .fold(0.0, |acc, z| acc.max(z.norm()));
    }
    match Schur::try_new(m.clone(), f64::EPSILON, 10_000) {
        Some(schur) => schur
            .complex_eigenvalues()
            .iter()
            .fold(0.0, |acc, z| acc.max(z.norm())),
        None => {
            // Gelfand's formula on repeated squares.
            let mut p = m;
            let mut k = 1.0;
            let mut est = f64::INFINITY;
            for _ in 0..30 {
                let norm = p.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                if norm == 0.0 {
                    return 0.0;
                }
                est = norm.powf(1.0 / k);
                p = &p * &p / norm;
                k *= 2.0;
            }
            est
        }
    }
}

/// `c` belongs to `S_k`: `1 - sum_j c_j z^j` has no root with `|z| <= 1`,
/// decided as `companion_spectral_radius(c) < 1 - TOL_RADIUS`.
pub fn in_unit_disk_stable(c: &[f64]) -> bool {
    companion_spectral_radius(c) < 1.0 - TOL_RADIUS
}

fn padded(v: &[f64], len: usize) -> Vec<f64> {
    let mut out = v.to_vec();
    out.resize(len, 0.0);
    out
}

/// `x_{m+1}` of the switched recursion `x_k = sum_j a_j x_{k-j} + sum_j b_j w_{k-j} x_{k-j}`.
///
/// `x` holds `x_{1-s}, .., x_0` with `s = max(p, q)`; `w` holds `w_{1-q}, .., w_m`.
pub fn loglin_iterate(theta: &ParameterVector, x: &[f64], w: &[bool]) -> Result<f64> {
    let (p, q) = (theta.a.len(), theta.b.len());
    let s = p.max(q);
    if x.len() != s || w.len() < q {
        return Err(OdmError::Domain(format!(
            "need {s} initial values and at least {q} switches, got {} and {}",
            x.len(),
            w.len()
        )));
    }
    let m = w.len() - q;
    // hist[i] = x_{i+1-s}; wbit(k) = w_k for k >= 1-q.
    let mut hist = x.to_vec();
    let wbit = |k: isize| -> f64 {
        if w[(k + q as isize - 1) as usize] {
            1.0
        } else {
            0.0
        }
    };
    for k in 1..=(m as isize + 1) {
        let mut acc = 0.0;
        for j in 1..=s as isize {
            let xv = hist[(k - j + s as isize - 1) as usize];
            if (j as usize) <= p {
                acc += theta.a[j as usize - 1] * xv;
            }
            if (j as usize) <= q {
                acc += theta.b[j as usize - 1] * wbit(k - j) * xv;
            }
        }
        hist.push(acc);
    }
    Ok(*hist.last().unwrap())
}

/// Options of the log-linear audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoglinCheckOptions {
    /// Certificate depth `m`; `None` selects `min(12, budget - q)`.
    pub depth: Option<usize>,
    /// Enumeration budget: at most `2^budget_log2` switching sequences.
    pub budget_log2: u32,
}

impl Default for LoglinCheckOptions {
    fn default() -> Self {
        Self {
            depth: None,
            budget_log2: DEFAULT_BUDGET_LOG2,
        }
    }
}

/// Default certificate depth for observation lag `q`.
pub fn default_depth(q: usize, budget_log2: u32) -> usize {
    DEFAULT_DEPTH.min((budget_log2 as usize).saturating_sub(q))
}

/// Certificate norms `rho_0..rho_m`, where `rho_j` is the largest `l1` norm
/// of the row mapping the initial window to `x_{j+1}` over all switching
/// sequences `w_{1-q}..w_j`; equivalently `sup |x_{j+1}|` over `x in [-1, 1]^s`.
pub fn certificate_norms(theta: &ParameterVector, depth: usize) -> Vec<f64> {
    let (p, q) = (theta.a.len(), theta.b.len());
    let s = p.max(q);
    let a = padded(&theta.a, s);
    let b = padded(&theta.b, s);
    let mut best = vec![0.0f64; depth + 1];

    // rows[t] is the row of x_{t+1-s}; bits[t] is w_{t+1-q}.
    let mut rows: Vec<Vec<f64>> = (0..s)
        .map(|i| {
            let mut e = vec![0.0; s];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut bits: Vec<bool> = Vec::with_capacity(q + depth);

    fn next_row(a: &[f64], b: &[f64], rows: &[Vec<f64>], bits: &[bool], q: usize) -> Vec<f64> {
        let s = a.len();
        let (nr, nb) = (rows.len(), bits.len());
        let mut out = vec![0.0; s];
        for j in 1..=s {
            let w = if j <= q && bits[nb - j] { 1.0 } else { 0.0 };
            let c = a[j - 1] + b[j - 1] * w;
            if c != 0.0 {
                for (o, r) in out.iter_mut().zip(&rows[nr - j]) {
                    *o += c * r;
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn descend(
        a: &[f64],
        b: &[f64],
        q: usize,
        depth: usize,
        level: usize,
        rows: &mut Vec<Vec<f64>>,
        bits: &mut Vec<bool>,
        best: &mut [f64],
    ) {
        let row = next_row(a, b, rows, bits, q);
        let norm: f64 = row.iter().map(|v| v.abs()).sum();
        if norm > best[level] {
            best[level] = norm;
        }
        if level == depth {
            return;
        }
        rows.push(row);
        for bit in [false, true] {
            bits.push(bit);
            descend(a, b, q, depth, level + 1, rows, bits, best);
            bits.pop();
        }
        rows.pop();
    }

    for prefix in 0..(1u64 << q) {
        bits.clear();
        // bits[t] = w_{t+1-q}; the newest bit is w_0.
        bits.extend((0..q).map(|t| (prefix >> t) & 1 == 1));
        descend(&a, &b, q, depth, 0, &mut rows, &mut bits, &mut best);
    }
    rows.truncate(s);
    best
}

/// Ergodicity audit of a log-linear Poisson GARCH parameter.
pub fn check_loglin(theta: &ParameterVector, opts: LoglinCheckOptions) -> Result<ConditionReport> {
    let (p, q) = (theta.a.len(), theta.b.len());
    let s = p.max(q);
    let depth = opts.depth.unwrap_or_else(|| default_depth(q, opts.budget_log2));
    let needed = (q + depth) as u32;
    if needed > opts.budget_log2 {
        return Err(OdmError::BudgetExceeded {
            needed,
            budget: opts.budget_log2,
        });
    }
    let a = padded(&theta.a, s);
    let b = padded(&theta.b, s);
    let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();

    let rho_a = companion_spectral_radius(&theta.a);
    let rho_ab = companion_spectral_radius(&ab);
    let closed_form: f64 = a
        .iter()
        .zip(&ab)
        .map(|(x, y)| x.abs().max(y.abs()))
        .sum();
    let norms = certificate_norms(theta, depth);
    let min_norm = norms.iter().cloned().fold(f64::INFINITY, f64::min);

    let checks = vec![
        Check::new("a_in_unit_disk_stable", CheckRole::Necessary, vec![rho_a], 1.0 - TOL_RADIUS, rho_a < 1.0 - TOL_RADIUS),
        Check::new("a_plus_b_in_unit_disk_stable", CheckRole::Necessary, vec![rho_ab], 1.0 - TOL_RADIUS, rho_ab < 1.0 - TOL_RADIUS),
        Check::new("closed_form_bound", CheckRole::Sufficient, vec![closed_form], 1.0 - TOL_MARGIN, closed_form < 1.0 - TOL_MARGIN),
        Check::new("switched_certificate", CheckRole::Sufficient, norms, 1.0 - TOL_MARGIN, min_norm < 1.0 - TOL_MARGIN),
    ];
    Ok(ConditionReport::from_checks("loglin_ergodicity", checks, Some(depth), None))
}

/// `sum a + r sum b < 1`.
pub fn check_nbin(theta: &ParameterVector) -> Result<ConditionReport> {
    let r = theta
        .shape()
        .ok_or_else(|| OdmError::Config("NBIN parameters need a shape r".into()))?;
    let lhs = nbin_lhs(theta, r);
    let checks = vec![Check::new("sum_a_plus_r_sum_b", CheckRole::Criterion, vec![lhs], 1.0 - TOL_MARGIN, lhs < 1.0 - TOL_MARGIN)];
    Ok(ConditionReport::from_checks("nbin_ergodicity", checks, None, Some(lhs)))
}

fn nbin_lhs(theta: &ParameterVector, r: f64) -> f64 {
    theta.a.iter().sum::<f64>() + r * theta.b.iter().sum::<f64>()
}

/// `sum a + sum b < 1`.
pub fn check_parx(theta: &ParameterVector) -> Result<ConditionReport> {
    let lhs = theta.a.iter().sum::<f64>() + theta.b.iter().sum::<f64>();
    let checks = vec![Check::new("sum_a_plus_sum_b", CheckRole::Criterion, vec![lhs], 1.0 - TOL_MARGIN, lhs < 1.0 - TOL_MARGIN)];
    Ok(ConditionReport::from_checks("parx_ergodicity", checks, None, Some(lhs)))
}

/// Family dispatch of the stability audits. The PARX report also carries the
/// covariate VAR(1) spectral radius.
pub fn check_stability(spec: &FamilySpec, theta: &ParameterVector, opts: LoglinCheckOptions) -> Result<ConditionReport> {
    theta.validate(spec)?;
    match spec.tag {
        FamilyTag::LogLinear => check_loglin(theta, opts),
        FamilyTag::Nbin => check_nbin(theta),
        FamilyTag::Parx => {
            let mut report = check_parx(theta)?;
            let rho = matrix_spectral_radius(&spec.parx_config()?.aleph);
            report.checks.push(Check::new("covariate_spectral_radius", CheckRole::Necessary, vec![rho], 1.0, rho < 1.0));
            let lhs = report.lhs;
            Ok(ConditionReport::from_checks("parx_ergodicity", report.checks, None, lhs))
        }
    }
}

/// `P_p` and `Q_q` have no common complex root: for every root `zeta` of `Q_q`,
/// `|P_p(zeta)| > TOL_ROOT (1 + |zeta|)^p`. A vanishing `Q_q` fails.
pub fn check_identifiable(a: &[f64], b: &[f64]) -> ConditionReport {
    let p = a.len();
    if b.iter().all(|v| *v == 0.0) {
        let checks = vec![Check::new("q_nonzero", CheckRole::Necessary, vec![0.0], 0.0, false)];
        return ConditionReport::from_checks("identifiability", checks, None, None);
    }
    let mut pcoef = Vec::with_capacity(p + 1);
    pcoef.push(1.0);
    pcoef.extend(a.iter().map(|v| -v));
    let roots = polynomial_roots(b);
    let sep = roots
        .iter()
        .map(|z| horner(&pcoef, *z).norm() / (1.0 + z.norm()).powi(p as i32))
        .fold(f64::INFINITY, f64::min);
    let passed = sep > TOL_ROOT;
    let value = if sep.is_finite() { sep } else { f64::MAX };
    let checks = vec![Check::new("min_scaled_p_at_q_roots", CheckRole::Criterion, vec![value], TOL_ROOT, passed)];
    ConditionReport::from_checks("identifiability", checks, None, None)
}

/// Stationary means `(mu_X, mu_Y) = (omega / (1 - sum a - r sum b), r mu_X)`.
pub fn nbin_stationary_mean(theta: &ParameterVector) -> Result<(f64, f64)> {
    let r = theta
        .shape()
        .ok_or_else(|| OdmError::Config("NBIN parameters need a shape r".into()))?;
    let lhs = nbin_lhs(theta, r);
    if !(lhs < 1.0 - TOL_MARGIN) {
        return Err(OdmError::NoStationaryMean { lhs });
    }
    let mu_x = theta.omega / (1.0 - lhs);
    Ok((mu_x, r * mu_x))
}

fn random_window<R: Rng + ?Sized>(spec: &FamilySpec, rng: &mut R) -> LatentWindow {
    let (p, q) = (spec.order.p, spec.order.q);
    let r = spec.covariate_dim();
    let draw_xi = |rng: &mut R| -> Vec<f64> { (0..r).map(|_| rng.random_range(-2.0..2.0)).collect() };
    let latent: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut x = vec![match spec.tag {
                FamilyTag::LogLinear => rng.random_range(-2.0..2.0),
                _ => rng.random_range(0.0..5.0),
            }];
            x.extend(draw_xi(rng));
            x
        })
        .collect();
    let reduced: Vec<Vec<f64>> = (0..q - 1)
        .map(|_| {
            let y: u64 = rng.random_range(0..10);
            let xi = draw_xi(rng);
            let obs = crate::model::Observation {
                count: y,
                covariates: if r > 0 { Some(&xi) } else { None },
            };
            crate::model::reduce(spec, obs).expect("sampled observation is in the domain")
        })
        .collect();
    LatentWindow::new(spec, &latent, &reduced).expect("sampled window is in the domain")
}

/// Empirical lower bounds on the Lipschitz constants of `z -> x_n` under a
/// common observation sequence: entry `n` (for `0 <= n <= n_max`) is the
/// maximum over `trials` sampled pairs `(z, z')` of `d(x_n, x'_n) / d(z, z')`.
pub fn lipschitz_estimate(
    spec: &FamilySpec,
    theta: &ParameterVector,
    n_max: usize,
    trials: usize,
    rng: &mut OdmRng,
) -> Result<Vec<f64>> {
    theta.validate(spec)?;
    let coef = theta.coefficients();
    let r = spec.covariate_dim();
    let mut out = vec![0.0f64; n_max + 1];
    for _ in 0..trials {
        let mut z = random_window(spec, rng);
        let mut z2 = random_window(spec, rng);
        let dz = z.distance(&z2, spec);
        if dz == 0.0 {
            continue;
        }
        out[0] = out[0].max(latent_distance(spec, z.last_latent(), z2.last_latent()) / dz);
        for slot in out.iter_mut().skip(1) {
            let y: u64 = rng.random_range(0..10);
            let xi: Vec<f64> = (0..r).map(|_| rng.random_range(-2.0..2.0)).collect();
            let obs = crate::model::Observation {
                count: y,
                covariates: if r > 0 { Some(&xi) } else { None },
            };
            let u = crate::model::reduce(spec, obs)?;
            z.advance(&coef, &u);
            z2.advance(&coef, &u);
            let ratio = latent_distance(spec, z.last_latent(), z2.last_latent()) / dz;
            *slot = slot.max(ratio);
        }
    }
    Ok(out)
}
