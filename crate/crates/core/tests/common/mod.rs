//! Test oracles written against the model definitions, independent of the
//! library's window machinery, plus random instance generators.
#![allow(dead_code)]

use odmlab_core::{
    FamilySpec, FamilyTag, FeatureKind, LatentWindow, ObservationSeries, ParameterVector, ParxConfig,
};
use rand::Rng;

fn feature(kind: FeatureKind, v: f64) -> f64 {
    match kind {
        FeatureKind::Square => v * v,
        FeatureKind::Abs => v.abs(),
        FeatureKind::PositivePart => v.max(0.0),
    }
}

/// Scalar reduced observation `u_t` and the feature vector `f(xi_t)`.
fn reduced_scalar(spec: &FamilySpec, series: &ObservationSeries, t: usize) -> (f64, Vec<f64>) {
    let y = series.y[t] as f64;
    match spec.tag {
        FamilyTag::LogLinear => (y.ln_1p(), vec![]),
        FamilyTag::Nbin => (y, vec![]),
        FamilyTag::Parx => {
            let cfg = spec.parx.as_ref().unwrap();
            let xi = &series.covariates.as_ref().unwrap()[t];
            (y, cfg.features.iter().zip(xi).map(|(k, v)| feature(*k, *v)).collect())
        }
    }
}

/// `x_0..x_n` rebuilt from scratch on time-indexed arrays.
///
/// The summation order matches the definition `omega + sum_i a_i x_{k+1-i} + sum_i b_i u_{k+1-i} + gamma . f`.
pub fn unrolled_latents(spec: &FamilySpec, theta: &ParameterVector, z: &LatentWindow, series: &ObservationSeries, k: usize) -> Vec<f64> {
    let (p, q) = (spec.order.p, spec.order.q);
    // x[i] = x_{i-p+1}, u[i] = u_{i-q+1}.
    let mut x: Vec<f64> = (0..p).map(|i| z.latent(i)[0]).collect();
    let mut u: Vec<f64> = (0..q - 1).map(|j| z.reduced(j)[0]).collect();
    let gamma = theta.gamma();
    for t in 0..k {
        let (ut, ft) = reduced_scalar(spec, series, t);
        u.push(ut);
        let mut next = theta.omega;
        for i in 1..=p {
            next += theta.a[i - 1] * x[t + p - i];
        }
        for i in 1..=q {
            next += theta.b[i - 1] * u[t + q - i];
        }
        for (g, f) in gamma.iter().zip(&ft) {
            next += g * f;
        }
        x.push(next);
    }
    x[p - 1..].to_vec()
}

fn ln_fact(y: u64) -> f64 {
    (2..=y).map(|k| (k as f64).ln()).sum()
}

/// `ln g(x; y)` from the kernel definitions, with `ln Gamma(r + y) - ln Gamma(r) = sum_{j<y} ln(r + j)`.
pub fn oracle_density(spec: &FamilySpec, theta: &ParameterVector, x: f64, y: u64) -> f64 {
    let yf = y as f64;
    match spec.tag {
        FamilyTag::LogLinear => -x.exp() + yf * x - ln_fact(y),
        FamilyTag::Parx => {
            if y == 0 {
                -x
            } else {
                -x + yf * x.ln() - ln_fact(y)
            }
        }
        FamilyTag::Nbin => {
            let r = theta.shape().unwrap();
            let rising: f64 = (0..y).map(|j| (r + j as f64).ln()).sum();
            let mut v = rising - ln_fact(y) - r * (1.0 + x).ln();
            if y > 0 {
                v += yf * x.ln() - yf * (1.0 + x).ln();
            }
            v
        }
    }
}

pub fn oracle_normalized_loglik(spec: &FamilySpec, theta: &ParameterVector, z: &LatentWindow, series: &ObservationSeries) -> f64 {
    let n = series.n();
    let xs = unrolled_latents(spec, theta, z, series, n);
    (1..=n).map(|k| oracle_density(spec, theta, xs[k], series.y[k])).sum::<f64>() / n as f64
}

pub fn random_parx_config<R: Rng>(rng: &mut R) -> ParxConfig {
    let r = rng.random_range(1..=2);
    let d = rng.random_range(1..=r);
    let kinds = [FeatureKind::Square, FeatureKind::Abs, FeatureKind::PositivePart];
    let features = (0..d).map(|_| kinds[rng.random_range(0..3)]).collect();
    let aleph = (0..r)
        .map(|i| (0..r).map(|j| if i == j { rng.random_range(-0.8..0.8) } else { rng.random_range(-0.1..0.1) }).collect())
        .collect();
    ParxConfig::new(r, features, aleph, rng.random_range(0.5..1.5)).unwrap()
}

pub fn random_spec<R: Rng>(rng: &mut R, tag: FamilyTag, max_order: usize) -> FamilySpec {
    let p = rng.random_range(1..=max_order);
    let q = rng.random_range(1..=max_order);
    match tag {
        FamilyTag::LogLinear => FamilySpec::loglinear(p, q).unwrap(),
        FamilyTag::Nbin => FamilySpec::nbin(p, q).unwrap(),
        FamilyTag::Parx => FamilySpec::parx(p, q, random_parx_config(rng)).unwrap(),
    }
}

/// Random parameter with total link mass below 0.9, which keeps latents moderate.
pub fn random_theta<R: Rng>(rng: &mut R, spec: &FamilySpec) -> ParameterVector {
    let (p, q) = (spec.order.p, spec.order.q);
    let mut w: Vec<f64> = (0..p + q).map(|_| rng.random_range(0.0..1.0)).collect();
    let mass = rng.random_range(0.1..0.9) / w.iter().sum::<f64>();
    w.iter_mut().for_each(|v| *v *= mass);
    match spec.tag {
        FamilyTag::LogLinear => {
            let signed: Vec<f64> = w.iter().map(|v| if rng.random_bool(0.3) { -v } else { *v }).collect();
            ParameterVector::loglinear(rng.random_range(-0.5..1.0), signed[..p].to_vec(), signed[p..].to_vec()).unwrap()
        }
        FamilyTag::Nbin => {
            let r = rng.random_range(0.5..5.0);
            let b = w[p..].iter().map(|v| v / r).collect();
            ParameterVector::nbin(rng.random_range(0.2..2.0), w[..p].to_vec(), b, r).unwrap()
        }
        FamilyTag::Parx => {
            let gamma = (0..spec.feature_count()).map(|_| rng.random_range(0.0..1.0)).collect();
            ParameterVector::parx(rng.random_range(0.2..2.0), w[..p].to_vec(), w[p..].to_vec(), gamma).unwrap()
        }
    }
}

pub fn random_series<R: Rng>(rng: &mut R, spec: &FamilySpec, len: usize) -> ObservationSeries {
    let y: Vec<u64> = (0..len).map(|_| rng.random_range(0..12)).collect();
    if spec.tag == FamilyTag::Parx {
        let r = spec.covariate_dim();
        let cov = (0..len).map(|_| (0..r).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        ObservationSeries::with_covariates(y, cov).unwrap()
    } else {
        ObservationSeries::new(y)
    }
}

pub fn random_window<R: Rng>(rng: &mut R, spec: &FamilySpec) -> LatentWindow {
    let (p, q) = (spec.order.p, spec.order.q);
    let r = spec.covariate_dim();
    let latent: Vec<Vec<f64>> = (0..p)
        .map(|_| {
            let mut e = vec![match spec.tag {
                FamilyTag::LogLinear => rng.random_range(-1.0..1.0),
                _ => rng.random_range(0.1..4.0),
            }];
            e.extend((0..r).map(|_| rng.random_range(-1.0..1.0)));
            e
        })
        .collect();
    let reduced: Vec<Vec<f64>> = (0..q - 1)
        .map(|_| {
            let y: u64 = rng.random_range(0..8);
            let xi: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
            let obs = odmlab_core::Observation {
                count: y,
                covariates: if r > 0 { Some(&xi) } else { None },
            };
            odmlab_core::reduce(spec, obs).unwrap()
        })
        .collect();
    LatentWindow::new(spec, &latent, &reduced).unwrap()
}

pub const FAMILIES: [FamilyTag; 3] = [FamilyTag::LogLinear, FamilyTag::Nbin, FamilyTag::Parx];
