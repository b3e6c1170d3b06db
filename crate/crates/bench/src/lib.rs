//! Fixtures shared by the benchmarks in `benches/`.

use odmlab_core::{
    default_initial_window, simulate_series, FamilySpec, LatentWindow, ObservationSeries, ParameterVector, SimConfig,
};

pub struct Fixture {
    pub spec: FamilySpec,
    pub theta: ParameterVector,
    pub z: LatentWindow,
    pub series: ObservationSeries,
}

fn build(spec: FamilySpec, theta: ParameterVector, n: usize) -> Fixture {
    let series = simulate_series(&spec, &theta, &SimConfig::new(n, 42)).expect("stable fixture").series;
    let z = default_initial_window(&spec, &series).expect("valid window");
    Fixture { spec, theta, z, series }
}

pub fn loglin(n: usize) -> Fixture {
    let spec = FamilySpec::loglinear(1, 1).unwrap();
    build(spec, ParameterVector::loglinear(0.1, vec![0.5], vec![0.3]).unwrap(), n)
}

pub fn nbin(n: usize) -> Fixture {
    let spec = FamilySpec::nbin(2, 2).unwrap();
    build(spec, ParameterVector::nbin(1.0, vec![0.2, 0.1], vec![0.1, 0.05], 2.0).unwrap(), n)
}
