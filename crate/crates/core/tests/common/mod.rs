//! Benchmarks shared by the integration tests and the acceptance harness.

#![allow(dead_code)]

use nelsonlab_core::density::{stationary_density, DensityTimeSeries, GridSpec};
use nelsonlab_core::model::{builtin_drift, DiffusionSpec, InitialLaw};

/// A drift started from its invariant law on a grid covering its bulk.
pub struct Benchmark {
    pub name: &'static str,
    pub params: &'static [f64],
    pub sigma: f64,
    pub half_width: f64,
    pub gradient: bool,
}

const fn bench(name: &'static str, params: &'static [f64], sigma: f64, half_width: f64, gradient: bool) -> Benchmark {
    Benchmark {
        name,
        params,
        sigma,
        half_width,
        gradient,
    }
}

/// Ten gradient and ten non-gradient drifts over σ ∈ {0.5, 1, 2}.
pub const BATTERY: [Benchmark; 20] = [
    bench("ou", &[1.0], 0.5, 2.5, true),
    bench("ou", &[2.0], 1.0, 4.0, true),
    bench("ou", &[1.0], 2.0, 8.0, true),
    bench("double_well", &[], 0.5, 2.5, true),
    bench("tilted_double_well", &[0.3], 1.0, 3.0, true),
    bench("anharmonic", &[1.0, 1.0], 2.0, 4.5, true),
    bench("anharmonic", &[2.0, 0.5], 1.0, 3.5, true),
    bench("custom_linear", &[2.0, -1.0, 0.3, 0.3, -2.0], 0.5, 2.5, true),
    bench("coupled_quartic", &[0.7], 1.0, 3.5, true),
    bench("swirl", &[0.5, 0.0], 2.0, 5.0, true),
    bench("rotational_linear", &[], 0.5, 2.5, false),
    bench("rotational_linear", &[], 1.0, 4.0, false),
    bench("rotational_linear", &[], 2.0, 7.0, false),
    bench("shear", &[1.5], 1.0, 5.0, false),
    bench("shear", &[0.5], 0.5, 3.0, false),
    bench("custom_linear", &[2.0, -1.0, 0.3, -0.7, -2.0], 2.0, 7.0, false),
    bench("swirl", &[0.5, 1.0], 0.5, 2.5, false),
    bench("swirl", &[0.5, 1.0], 1.0, 4.0, false),
    bench("swirl", &[0.2, 2.0], 2.0, 6.0, false),
    bench("swirl", &[0.0, 1.0], 1.0, 4.0, false),
];

impl Benchmark {
    pub fn label(&self) -> String {
        format!("{}{:?} sigma={}", self.name, self.params, self.sigma)
    }

    /// Stationary spec on `[0, horizon]` with its invariant density.
    pub fn stationary(&self, horizon: f64) -> (DiffusionSpec, GridSpec, DensityTimeSeries) {
        let drift = builtin_drift(self.name, self.params).unwrap();
        let d = drift.dim();
        let nodes = if d == 1 { 1201 } else { 161 };
        let grid = GridSpec::cube(d, -self.half_width, self.half_width, nodes).unwrap();
        let v = drift.quasi_potential().expect("benchmarks have an invariant law");
        let p = stationary_density(v, self.sigma, &grid).unwrap();
        let spec = DiffusionSpec::new(drift, self.sigma, InitialLaw::Grid(p.clone()), horizon).unwrap();
        (spec, grid, DensityTimeSeries::constant(p))
    }
}

/// Gradient drifts with a potential, stationary at σ = 1.
pub const GRADIENT_BENCHMARKS: [Benchmark; 7] = [
    bench("ou", &[1.0], 1.0, 5.0, true),
    bench("ou", &[2.0], 1.0, 4.0, true),
    bench("double_well", &[], 1.0, 3.0, true),
    bench("tilted_double_well", &[0.3], 1.0, 3.0, true),
    bench("anharmonic", &[2.0, 0.5], 1.0, 3.5, true),
    bench("coupled_quartic", &[0.7], 1.0, 3.5, true),
    bench("custom_linear", &[2.0, -1.0, 0.3, 0.3, -2.0], 1.0, 4.0, true),
];

/// Distinct one-dimensional drifts, stationary at σ = 1.
pub const ONE_DIMENSIONAL: [Benchmark; 5] = [
    bench("ou", &[1.0], 1.0, 5.0, true),
    bench("double_well", &[], 1.0, 3.0, true),
    bench("tilted_double_well", &[0.5], 1.0, 3.0, true),
    bench("anharmonic", &[1.0, 2.0], 1.0, 3.0, true),
    bench("custom_linear", &[1.0, -3.0], 1.0, 3.0, true),
];
