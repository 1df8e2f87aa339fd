//! Monte Carlo checks of the path simulator against closed-form laws.
//!
//! Tolerances are three standard errors of the estimator unless stated.

use nelsonlab_core::density::{DensityField, DensityTimeSeries, GridSpec};
use nelsonlab_core::model::{antisymmetric_part, builtin_drift, DiffusionSpec, InitialLaw, VectorField};
use nelsonlab_core::simulate::{euler_maruyama, perturbed_ensemble, reverse_paths, reversed_drift, simulate_reversed};
use proptest::prelude::*;

fn ou(x0: f64, horizon: f64) -> DiffusionSpec {
    DiffusionSpec::new(
        builtin_drift("ou", &[1.0]).unwrap(),
        1.0,
        InitialLaw::PointMass(vec![x0]),
        horizon,
    )
    .unwrap()
}

/// Sample mean and variance.
fn moments(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn brownian_motion_has_unit_variance_at_one() {
    let spec = DiffusionSpec::new(VectorField::zero(1), 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
    let n = 20_000;
    let ens = euler_maruyama(&spec, n, 50, 11).unwrap();
    let (m, v) = moments(&ens.marginal(50));
    assert!(m.abs() < 3.0 / (n as f64).sqrt(), "mean {m}");
    assert!((v - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {v}");
}

#[test]
fn ou_variance_at_two() {
    let n = 40_000;
    let steps = 400;
    let ens = euler_maruyama(&ou(0.0, 2.0), n, steps, 5).unwrap();
    let (m, v) = moments(&ens.marginal(steps));
    let exact = (1.0 - (-4.0f64).exp()) / 2.0;
    // Euler's stationary variance is 1/(2 - dt), an O(dt) bias on top of MC noise.
    let dt = 2.0 / steps as f64;
    let tol = 3.0 * exact * (2.0 / n as f64).sqrt() + dt;
    assert!((exact - 0.4908).abs() < 1e-4);
    assert!(m.abs() < 3.0 * (exact / n as f64).sqrt(), "mean {m}");
    assert!((v - exact).abs() < tol, "var {v} vs {exact}");
}

#[test]
fn deterministic_decay_converges_at_first_order() {
    let drift = builtin_drift("ou", &[1.0]).unwrap();
    let spec = DiffusionSpec::degenerate(drift, 0.0, InitialLaw::PointMass(vec![1.0]), 1.0).unwrap();
    let target = (-1.0f64).exp();
    let err = |m: usize| (euler_maruyama(&spec, 1, m, 0).unwrap().state(0, m)[0] - target).abs();
    let (e1, e2) = (err(100), err(200));
    assert!(e1 <= 0.2 / 100.0, "{e1}");
    let ratio = e2 / e1;
    assert!((0.45..0.55).contains(&ratio), "ratio {ratio}");
}

#[test]
fn strong_error_halves_with_the_step() {
    // Exact OU transition on a fine grid: X ← e^{-δ}X + Σ e^{-(t-s)} ΔW, with
    // the stochastic convolution resolved at 1/4096 and the coarse Euler
    // schemes driven by the same summed increments.
    let fine = 4096;
    let paths = 64;
    let ens = euler_maruyama(&ou(1.0, 1.0), paths, fine, 21).unwrap();
    let delta = 1.0 / fine as f64;
    let mut errors = Vec::new();
    for coarse in [16usize, 32, 64] {
        let r = fine / coarse;
        let dt = 1.0 / coarse as f64;
        let mut total = 0.0;
        for p in 0..paths {
            let (mut euler, mut exact) = (1.0f64, 1.0f64);
            for k in 0..coarse {
                let mut dw = 0.0;
                let mut conv = 0.0;
                for j in 0..r {
                    let w = ens.increment(p, k * r + j)[0];
                    dw += w;
                    conv += (-((r - j) as f64 - 0.5) * delta).exp() * w;
                }
                euler = euler - euler * dt + dw;
                exact = (-dt).exp() * exact + conv;
            }
            total += (euler - exact).abs();
        }
        errors.push(total / paths as f64);
    }
    for w in errors.windows(2) {
        let ratio = w[1] / w[0];
        assert!((0.35..=0.65).contains(&ratio), "errors {errors:?}");
    }
}

#[test]
fn library_steps_are_the_euler_recursion() {
    let ens = euler_maruyama(&ou(0.5, 1.0), 8, 32, 4).unwrap();
    let dt = ens.dt();
    for p in 0..8 {
        let mut x = 0.5;
        for k in 0..32 {
            x = x - x * dt + ens.increment(p, k)[0];
            assert_eq!(ens.state(p, k + 1)[0], x);
        }
    }
}

#[test]
fn stored_increments_have_mean_zero_and_variance_dt() {
    let spec = DiffusionSpec::new(
        builtin_drift("ou", &[2.0]).unwrap(),
        1.0,
        InitialLaw::PointMass(vec![0.0, 0.0]),
        1.0,
    )
    .unwrap();
    let (n, m) = (4000, 20);
    let ens = euler_maruyama(&spec, n, m, 8).unwrap();
    let dt = ens.dt();
    for k in 0..m {
        for a in 0..2 {
            let col: Vec<f64> = (0..n).map(|p| ens.increment(p, k)[a]).collect();
            let (mean, var) = moments(&col);
            assert!(mean.abs() < 3.0 * (dt / n as f64).sqrt(), "step {k}: mean {mean}");
            assert!(
                (var - dt).abs() < 3.0 * dt * (2.0 / n as f64).sqrt(),
                "step {k}: var {var}"
            );
        }
    }
}

#[test]
fn initial_states_follow_the_initial_law() {
    let cov = vec![0.5, 0.2, 0.2, 1.0];
    let law = InitialLaw::Gaussian {
        mean: vec![1.0, -2.0],
        cov: cov.clone(),
    };
    let spec = DiffusionSpec::new(builtin_drift("ou", &[2.0]).unwrap(), 1.0, law, 1.0).unwrap();
    let n = 20_000;
    let ens = euler_maruyama(&spec, n, 2, 1).unwrap();
    let mean = ens.mean(0);
    let c = ens.covariance(0);
    assert!((mean[0] - 1.0).abs() < 3.0 * (0.5 / n as f64).sqrt());
    assert!((mean[1] + 2.0).abs() < 3.0 * (1.0 / n as f64).sqrt());
    for (k, (got, want)) in c.iter().zip(&cov).enumerate() {
        // Var of a sample covariance entry: (Σ_ii Σ_jj + Σ_ij²)/n.
        let (i, j) = (k / 2, k % 2);
        let se = ((cov[i * 3] * cov[j * 3] + cov[k] * cov[k]) / n as f64).sqrt();
        assert!((got - want).abs() < 3.0 * se, "entry {k}: {got} vs {want}");
    }
}

#[test]
fn same_seed_same_bits_regardless_of_threads() {
    let spec = ou(0.3, 1.0);
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = one.install(|| euler_maruyama(&spec, 500, 40, 99).unwrap());
    let b = three.install(|| euler_maruyama(&spec, 500, 40, 99).unwrap());
    assert_eq!(a.states(), b.states());
    assert_eq!(a.noise(), b.noise());
    let c = euler_maruyama(&spec, 500, 40, 100).unwrap();
    assert_ne!(a.states(), c.states());
}

#[test]
fn reversal_is_an_involution_and_permutes_marginals() {
    let ens = euler_maruyama(&ou(1.0, 1.0), 100, 30, 2).unwrap();
    let rev = reverse_paths(&ens);
    assert!(rev.is_reversed());
    for k in 0..=30 {
        assert_eq!(rev.marginal(k), ens.marginal(30 - k));
    }
    let back = reverse_paths(&rev);
    assert!(!back.is_reversed());
    assert_eq!(back.states(), ens.states());
    assert_eq!(back.noise(), ens.noise());
}

#[test]
fn constant_paths_are_fixed_by_reversal() {
    let spec = DiffusionSpec::degenerate(VectorField::zero(1), 0.0, InitialLaw::PointMass(vec![0.7]), 1.0).unwrap();
    let ens = euler_maruyama(&spec, 10, 10, 0).unwrap();
    assert_eq!(reverse_paths(&ens).states(), ens.states());
}

#[test]
fn zero_perturbation_is_bit_identical() {
    let base = euler_maruyama(&ou(0.0, 1.0), 200, 50, 3).unwrap();
    let gamma = VectorField::from_fn(1, "one", |_, out| out[0] = 1.0);
    let same = perturbed_ensemble(&base, &gamma, 0.0).unwrap();
    assert_eq!(same.states(), base.states());

    // A row of G for a gradient drift is the zero field.
    let g = antisymmetric_part(&builtin_drift("double_well", &[]).unwrap());
    let row = VectorField::from_fn(1, "G_1", move |x, out| out[0] = g.eval_vec(x)[0]);
    let same = perturbed_ensemble(&base, &row, 0.5).unwrap();
    assert_eq!(same.states(), base.states());
}

#[test]
fn constant_push_shifts_the_ou_mean_linearly() {
    // With common noise the shift is deterministic: ε Σ_k (1 − dt)^k dt.
    let steps = 1000;
    let base = euler_maruyama(&ou(0.0, 1.0), 1000, steps, 6).unwrap();
    let gamma = VectorField::from_fn(1, "one", |_, out| out[0] = 1.0);
    let eps = 0.05;
    let pert = perturbed_ensemble(&base, &gamma, eps).unwrap();
    let shift = pert.mean(steps)[0] - base.mean(steps)[0];
    let target = eps * (1.0 - (-1.0f64).exp());
    assert!((shift - target).abs() < eps * 1e-3, "{shift} vs {target}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn perturbation_is_lipschitz_in_eps(eps in prop_oneof![Just(1e-3), Just(1e-2)], seed in 0u64..1000) {
        // |γ| ≤ 1, L = 1 for the OU drift, T = 1.
        let base = euler_maruyama(&ou(0.0, 1.0), 50, 100, seed).unwrap();
        let gamma = VectorField::from_fn(1, "sin", |x, out| out[0] = x[0].sin());
        let pert = perturbed_ensemble(&base, &gamma, eps).unwrap();
        let sup = pert.states().iter().zip(base.states()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(sup <= eps * std::f64::consts::E, "sup {sup}");
        prop_assert!(sup > 0.0);
    }
}

fn stationary_ou(grid: &GridSpec) -> (DiffusionSpec, DensityTimeSeries) {
    let p = DensityField::gaussian(grid.clone(), 0.0, &[0.0], &[0.5]).unwrap();
    let spec = DiffusionSpec::new(
        builtin_drift("ou", &[1.0]).unwrap(),
        1.0,
        InitialLaw::Grid(p.clone()),
        1.0,
    )
    .unwrap();
    (spec, DensityTimeSeries::constant(p))
}

#[test]
fn reversed_drift_of_stationary_ou_is_the_forward_drift() {
    let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
    let (spec, p) = stationary_ou(&grid);
    let rd = reversed_drift(&spec, &p).unwrap();
    let mut out = [0.0];
    for x in [-1.5, -0.3, 0.0, 0.8, 1.7] {
        rd.eval(0.5, &[x], &mut out).unwrap();
        assert!((out[0] + x).abs() < 1e-3, "x = {x}: {}", out[0]);
    }
}

#[test]
fn reversed_drift_of_the_heat_kernel_is_minus_x_over_variance() {
    // b ≡ 0 from N(0, 1/4): p_t = N(0, 1/4 + t), so b̄(T − t, x) = −x/(1/4 + t).
    let grid = GridSpec::cube(1, -6.0, 6.0, 1201).unwrap();
    let times: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let slices = times
        .iter()
        .map(|&t| DensityField::gaussian(grid.clone(), t, &[0.0], &[0.25 + t]).unwrap())
        .collect();
    let series = DensityTimeSeries::new(slices).unwrap();
    let spec = DiffusionSpec::new(
        VectorField::zero(1),
        1.0,
        InitialLaw::Gaussian {
            mean: vec![0.0],
            cov: vec![0.25],
        },
        1.0,
    )
    .unwrap();
    let rd = reversed_drift(&spec, &series).unwrap();
    let mut out = [0.0];
    for &t in &[0.2, 0.5, 1.0] {
        for x in [-1.0, 0.4, 1.2] {
            rd.eval(1.0 - t, &[x], &mut out).unwrap();
            let want = -x / (0.25 + t);
            assert!((out[0] - want).abs() < 1e-3, "t={t} x={x}: {} vs {want}", out[0]);
        }
    }
    let degenerate =
        DiffusionSpec::degenerate(VectorField::zero(1), 0.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
    assert!(reversed_drift(&degenerate, &series).is_err());
}

#[test]
fn reversed_stationary_ou_keeps_its_gaussian_marginals() {
    let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
    let (spec, p) = stationary_ou(&grid);
    let n = 20_000;
    let ens = simulate_reversed(&spec, &p, n, 100, 17).unwrap();
    for k in [0, 25, 50, 100] {
        let (m, v) = moments(&ens.marginal(k));
        assert!(m.abs() < 3.0 * (0.5 / n as f64).sqrt(), "step {k}: mean {m}");
        // Euler bias on the variance is about dt/4.
        assert!(
            (v - 0.5).abs() < 3.0 * 0.5 * (2.0 / n as f64).sqrt() + 0.01,
            "step {k}: var {v}"
        );
    }

    // Self-consistency with the reversal of forward paths at T/2.
    let fwd = reverse_paths(&euler_maruyama(&spec, n, 100, 18).unwrap());
    let (ma, va) = moments(&ens.marginal(50));
    let (mb, vb) = moments(&fwd.marginal(50));
    let se_m = ((va + vb) / n as f64).sqrt();
    let se_v = ((2.0 * va * va + 2.0 * vb * vb) / n as f64).sqrt();
    assert!((ma - mb).abs() < 3.0 * se_m, "{ma} vs {mb}");
    assert!((va - vb).abs() < 3.0 * se_v + 0.01, "{va} vs {vb}");

    let again = simulate_reversed(&spec, &p, n, 100, 17).unwrap();
    assert_eq!(again.states(), ens.states());
}
