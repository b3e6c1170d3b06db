use odmlab_core::{
    default_initial_window, fit_mle, loglik, simulate_series, FamilySpec, FitOptions, LoglikOptions, ObservationSeries,
    ParameterVector, SeedTree, SimConfig, ThetaBox,
};
use rayon::prelude::*;

fn sup_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn loglin_estimates_within_tolerance_in_90_percent() {
    let spec = FamilySpec::loglinear(1, 1).unwrap();
    let truth = ParameterVector::loglinear(0.1, vec![0.5], vec![0.3]).unwrap();
    let bounds = ThetaBox::default_for(&spec);
    let root = SeedTree::new(2024);
    let results: Vec<(f64, bool)> = (0..50u64)
        .into_par_iter()
        .map(|r| {
            let seed = root.replicate(r).key();
            let sim = simulate_series(&spec, &truth, &SimConfig::new(2000, seed)).unwrap();
            let z = default_initial_window(&spec, &sim.series).unwrap();
            let opts = FitOptions {
                seed,
                extra_starts: vec![truth.to_flat()],
                ..Default::default()
            };
            let fit = fit_mle(&spec, &sim.series, &bounds, &z, &opts).unwrap();
            let at_truth = loglik(&spec, &truth, &z, &sim.series, LoglikOptions::default()).unwrap();
            let dominates = fit.loglik.normalized >= at_truth.normalized;
            (sup_error(&fit.theta_hat.to_flat(), &truth.to_flat()), dominates)
        })
        .collect();
    let hits = results.iter().filter(|(e, _)| *e < 0.15).count();
    assert!(results.iter().all(|(_, d)| *d), "fit below the truth's likelihood");
    assert!(hits >= 45, "{hits}/50 replicates within 0.15: {results:?}");
}

#[test]
fn iid_poisson_fit_matches_log_mean() {
    let spec = FamilySpec::loglinear(1, 1).unwrap();
    let truth = ParameterVector::loglinear(0.8, vec![0.0], vec![0.0]).unwrap();
    let sim = simulate_series(&spec, &truth, &SimConfig::new(3000, 77)).unwrap();
    let z = default_initial_window(&spec, &sim.series).unwrap();
    let bounds = ThetaBox::default_for(&spec).pin(1, 0.0).pin(2, 0.0);
    let fit = fit_mle(&spec, &sim.series, &bounds, &z, &FitOptions::default()).unwrap();
    let y = &sim.series.y[1..];
    let mean = y.iter().sum::<u64>() as f64 / y.len() as f64;
    assert!((fit.theta_hat.omega - mean.ln()).abs() < 1e-6);
}

#[test]
fn fit_is_bit_reproducible() {
    let spec = FamilySpec::nbin(1, 1).unwrap();
    let truth = ParameterVector::nbin(1.0, vec![0.3], vec![0.2], 2.0).unwrap();
    let sim = simulate_series(&spec, &truth, &SimConfig::new(400, 5)).unwrap();
    let z = default_initial_window(&spec, &sim.series).unwrap();
    let bounds = ThetaBox::default_for(&spec);
    let opts = FitOptions { seed: 9, ..Default::default() };
    let a = fit_mle(&spec, &sim.series, &bounds, &z, &opts).unwrap();
    let b = fit_mle(&spec, &sim.series, &bounds, &z, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn redundant_start_never_lowers_loglik() {
    let spec = FamilySpec::loglinear(1, 1).unwrap();
    let truth = ParameterVector::loglinear(0.1, vec![0.5], vec![0.3]).unwrap();
    let sim = simulate_series(&spec, &truth, &SimConfig::new(500, 3)).unwrap();
    let z = default_initial_window(&spec, &sim.series).unwrap();
    let bounds = ThetaBox::default_for(&spec);
    let base = fit_mle(&spec, &sim.series, &bounds, &z, &FitOptions::default()).unwrap();
    let more = FitOptions {
        extra_starts: vec![base.theta_hat.to_flat(), vec![0.0, 0.2, 0.2]],
        ..Default::default()
    };
    let again = fit_mle(&spec, &sim.series, &bounds, &z, &more).unwrap();
    assert!(again.loglik.normalized >= base.loglik.normalized);
    assert_eq!(again.starts, base.starts + 2);
}

#[test]
fn box_feasibility_of_every_trace_point() {
    let spec = FamilySpec::nbin(2, 1).unwrap();
    let truth = ParameterVector::nbin(1.0, vec![0.2, 0.1], vec![0.2], 1.5).unwrap();
    let sim = simulate_series(&spec, &truth, &SimConfig::new(600, 12)).unwrap();
    let series: &ObservationSeries = &sim.series;
    let z = default_initial_window(&spec, series).unwrap();
    let bounds = ThetaBox::default_for(&spec);
    let fit = fit_mle(&spec, series, &bounds, &z, &FitOptions::default()).unwrap();
    for t in &fit.trace {
        assert!(bounds.contains(&t.initial) && bounds.contains(&t.final_theta));
        assert!(fit.loglik.normalized >= t.final_value - 1e-12);
    }
}
