use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::context::initial_density;
use super::CheckReport;
use crate::density::{
    grid_derivative, kde, silverman_bandwidth, stationary_density, Bandwidth, DensityTimeSeries, GridSpec,
};
use crate::error::{Error, Result};
use crate::model::{antisymmetric_part, gradient_test_static, DiffusionSpec, StaticVerdict, VectorField};
use crate::nelson::{
    analytic_backward, analytic_forward, empirical_derivative, kernel_regression, second_order_fields, DerivativeField,
    DerivativeKind, Direction, EmpiricalDerivative, EmpiricalOptions,
};
use crate::simulate::{euler_maruyama_range, perturbed_ensemble, reverse_paths, PathEnsemble};

/// Tolerance on `max |G|` for the static curl test on bulk probes.
const STATIC_TOLERANCE: f64 = 1e-6;
/// Largest number of bulk nodes used as static-test probes.
const MAX_PROBES: usize = 256;
/// Bandwidth multiplier for the first-order fields inside nested quotients,
/// whose derivatives amplify estimator noise.
const FIELD_OVERSMOOTHING: f64 = 3.0;
/// Largest `L¹` distance between the initial and invariant laws that still
/// counts as a stationary start.
const STATIONARY_START_L1: f64 = 2e-2;

/// Slice time of `density` nearest to `t`.
fn snap(density: &DensityTimeSeries, t: f64) -> f64 {
    density.slices()[density.nearest(t)].t()
}

fn bulk_at(density: &DensityTimeSeries, t: f64) -> Vec<bool> {
    density.slices()[density.nearest(t)].bulk_mask()
}

/// Node-wise `sqrt(a² + b²)` of two standard-error vectors, max over `mask`.
fn combined_se(a: &EmpiricalDerivative, b: &EmpiricalDerivative, mask: &[bool]) -> f64 {
    let c = a.field.components();
    (0..mask.len())
        .filter(|&n| mask[n])
        .flat_map(|n| (0..c).map(move |i| n * c + i))
        .map(|k| a.standard_error[k].hypot(b.standard_error[k]))
        .fold(0.0, f64::max)
}

fn max_pairwise_l1(density: &DensityTimeSeries, times: &[f64]) -> Result<f64> {
    let idx: Vec<usize> = times.iter().map(|t| density.nearest(*t)).collect();
    let mut worst: f64 = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        for &j in &idx[a + 1..] {
            worst = worst.max(density.slices()[i].l1_distance(&density.slices()[j])?);
        }
    }
    Ok(worst)
}

fn require_times(times: &[f64]) -> Result<()> {
    if times.len() < 2 {
        return Err(Error::InvalidParameter("stationarity needs at least two times".into()));
    }
    Ok(())
}

/// `r₁ = ‖D₊X + D₋X‖∞` on the bulk at each time, with the `L¹` drift of `p`
/// between the same times.
pub fn stationarity_check(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    times: &[f64],
    tolerance: f64,
) -> Result<CheckReport> {
    require_times(times)?;
    let mut report = CheckReport::new("stationarity_check", spec.descriptor());
    let forward = analytic_forward(spec, density.grid())?;
    let (mut r1, mut coverage) = (0.0f64, 1.0f64);
    for &t in times {
        let slice = &density.slices()[density.nearest(t)];
        let sum = forward.combine(&analytic_backward(spec, slice)?, |a, b| a + b)?;
        let r = sum.sup_norm();
        coverage = coverage.min(sum.coverage(&slice.bulk_mask()));
        report.diagnostic(format!("r1(t={t})"), r);
        report.field(format!("dplus_plus_dminus(t={t})"), sum);
        r1 = r1.max(r);
    }
    if density.is_constant() {
        report.note("density source is constant in time");
    }
    report
        .residual("r1", r1, tolerance, "sup over bulk, max over times")
        .residual(
            "time_invariance",
            max_pairwise_l1(density, times)?,
            1e-2,
            "L1 between slices, max over pairs",
        );
    Ok(report.conclude(Some(coverage)))
}

/// Empirical [`stationarity_check`]: forward and backward kernel regressions
/// at lag `h_lag`, evaluated on the kernel-density bulk.
pub fn stationarity_check_empirical(
    ensemble: &PathEnsemble,
    grid: &GridSpec,
    times: &[f64],
    h_lag: f64,
    tolerance: f64,
    options: &EmpiricalOptions,
) -> Result<CheckReport> {
    require_times(times)?;
    let mut report = CheckReport::new("stationarity_check", ensemble.spec().descriptor());
    let (mut r1, mut three_se, mut coverage) = (0.0f64, 0.0f64, 1.0f64);
    let mut slices = Vec::new();
    for &t in times {
        let fwd = empirical_derivative(ensemble, t, h_lag, Direction::Forward, grid, options)?;
        let back_options = EmpiricalOptions {
            bootstrap_seed: options.bootstrap_seed.wrapping_add(1),
            ..options.clone()
        };
        let bwd = empirical_derivative(ensemble, t, h_lag, Direction::Backward, grid, &back_options)?;
        let sum = fwd.field.combine(&bwd.field, |a, b| a + b)?;
        let p = kde(ensemble, t, grid, &Bandwidth::Auto)?;
        let r = sum.sup_norm();
        let se = combined_se(&fwd, &bwd, sum.mask());
        coverage = coverage.min(sum.coverage(&p.bulk_mask()));
        report
            .diagnostic(format!("r1(t={t})"), r)
            .diagnostic(format!("3se(t={t})"), 3.0 * se);
        report.field(format!("dplus_plus_dminus(t={t})"), sum);
        r1 = r1.max(r);
        three_se = three_se.max(3.0 * se);
        slices.push(p);
    }
    let invariance = DensityTimeSeries::new(slices)?;
    let drift = max_pairwise_l1(&invariance, &invariance.times())?;
    report
        .residual("r1", r1, tolerance, "sup over kde bulk, max over times")
        .reported("time_invariance", drift, "L1 between kde slices, max over pairs")
        .diagnostic("3se", three_se)
        .diagnostic("h_lag", h_lag);
    report.seeds = vec![ensemble.seed(), options.bootstrap_seed];
    Ok(report.conclude(Some(coverage)))
}

/// `r₂ = maxᵢ ‖(D₋²X − D₊²X)ⁱ − σ²(⟨∇log p, Gᵢ⟩ + div Gᵢ)‖∞` on the bulk.
pub fn identity_residual(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    t: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    let t = snap(density, t);
    let fields = second_order_fields(spec, density, t)?;
    let lhs = fields.dminus2().combine(&fields.dplus2(), |a, b| a - b)?;
    let grid = density.grid();
    let d = grid.dim();
    let g = antisymmetric_part(&spec.drift);
    let s2 = spec.sigma * spec.sigma;
    let mut values = vec![0.0; grid.n_nodes() * d];
    let (mut gm, mut div) = (vec![0.0; d * d], vec![0.0; d]);
    for (node, out) in values.chunks_exact_mut(d).enumerate() {
        let Some(score) = fields.mask()[node].then(|| fields.score().at(node)).flatten() else {
            continue;
        };
        let x = grid.node_coords(node);
        g.eval(&x, &mut gm);
        g.divergence(&x, &mut div);
        for i in 0..d {
            let inner: f64 = (0..d).map(|j| score[j] * gm[i * d + j]).sum();
            out[i] = s2 * (inner + div[i]);
        }
    }
    let rhs = DerivativeField::new(
        DerivativeKind::Composed,
        grid.clone(),
        t,
        d,
        values,
        fields.mask().to_vec(),
    )?;
    let residual = lhs.combine(&rhs, |a, b| a - b)?;
    let coverage = residual.coverage(&bulk_at(density, t));

    let mut report = CheckReport::new("identity_residual", spec.descriptor());
    report
        .residual(
            "r2",
            residual.sup_norm(),
            tolerance,
            "sup over bulk, max over components",
        )
        .diagnostic("lhs_sup", lhs.sup_norm())
        .diagnostic("rhs_sup", rhs.sup_norm())
        .diagnostic("score_jacobian_norm", fields.score_jacobian_norm())
        .diagnostic("score_hessian_norm", fields.score_hessian_norm())
        .diagnostic("t", t);
    report.field("lhs", lhs).field("rhs", rhs).field("residual", residual);
    Ok(report.conclude(Some(coverage)))
}

/// Static curl test on up to [`MAX_PROBES`] nodes of `mask`, compared with
/// the dynamic classification.
fn static_cross_check(
    report: &mut CheckReport,
    drift: &VectorField,
    grid: &GridSpec,
    mask: &[bool],
    gradient: bool,
) -> Result<()> {
    let nodes: Vec<usize> = (0..grid.n_nodes()).filter(|&n| mask[n]).collect();
    let stride = nodes.len().div_ceil(MAX_PROBES).max(1);
    let probes: Vec<Vec<f64>> = nodes.iter().step_by(stride).map(|&n| grid.node_coords(n)).collect();
    let stat = gradient_test_static(drift, &probes, STATIC_TOLERANCE)?;
    let agrees = (stat.verdict == StaticVerdict::Gradient) == gradient;
    report
        .diagnostic("static_residual", stat.max_residual)
        .diagnostic("agrees_with_static", if agrees { 1.0 } else { 0.0 });
    if !agrees {
        report.note(format!(
            "dynamic and static classifications disagree (static max |G| = {:.3e})",
            stat.max_residual
        ));
    }
    Ok(())
}

fn classify(report: &mut CheckReport, r3: f64, tolerance: f64) -> bool {
    let gradient = r3 <= tolerance;
    report.classification = Some(if gradient { "gradient" } else { "non_gradient" }.to_string());
    gradient
}

/// `r₃ = ‖D₊²X − D₋²X‖∞` on the bulk; the drift is classified as a gradient
/// iff `r₃ ≤ tolerance`.
pub fn dynamic_gradient_test(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    t: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    let t = snap(density, t);
    let fields = second_order_fields(spec, density, t)?;
    let diff = fields.dplus2().combine(&fields.dminus2(), |a, b| a - b)?;
    let r3 = diff.sup_norm();
    let coverage = diff.coverage(&bulk_at(density, t));
    let mut report = CheckReport::new("dynamic_gradient_test", spec.descriptor());
    report.residual("r3", r3, tolerance, "sup over bulk, max over components");
    report.diagnostic("t", t);
    let gradient = classify(&mut report, r3, tolerance);
    static_cross_check(&mut report, &spec.drift, density.grid(), fields.mask(), gradient)?;
    report.field("dplus2_minus_dminus2", diff);
    Ok(report.conclude(Some(coverage)))
}

/// Value of a first-order field at `x` by multilinear interpolation; `None`
/// if any node of the stencil is masked.
fn interpolate(field: &DerivativeField, x: &[f64], out: &mut [f64]) -> Option<()> {
    let stencil = field.grid().stencil(x).ok()?;
    out.iter_mut().for_each(|o| *o = 0.0);
    for (node, w) in stencil {
        if w == 0.0 {
            continue;
        }
        let v = field.at(node)?;
        for (o, vi) in out.iter_mut().zip(v) {
            *o += w * vi;
        }
    }
    Some(())
}

/// Jacobian field `jac[i*d + j] = ∂ⱼ fⁱ` of a first-order field by centred differences.
fn field_jacobian(field: &DerivativeField) -> DerivativeField {
    let grid = field.grid();
    let (n, d) = (grid.n_nodes(), field.components());
    let mut jac = vec![0.0; n * d * d];
    let mut valid = field.mask().to_vec();
    for i in 0..d {
        let comp: Vec<f64> = (0..n).map(|k| field.values()[k * d + i]).collect();
        for j in 0..d {
            let (dv, ok) = grid_derivative(grid, &comp, field.mask(), j);
            for k in 0..n {
                jac[k * d * d + i * d + j] = dv[k];
                valid[k] &= ok[k];
            }
        }
    }
    DerivativeField::new(DerivativeKind::Composed, grid.clone(), field.t(), d * d, jac, valid)
        .expect("layout matches grid")
}

/// Empirical [`dynamic_gradient_test`] by nested difference quotients.
///
/// First-order fields are estimated once, by kernel regression at `t`, and
/// used at both ends of each quotient: independent estimates at `t` and
/// `t ± h` differ by noise far larger than `h`. Their time dependence over
/// one lag is therefore neglected, which targets stationary ensembles.
/// `D₊²X` regresses `(D̂₊(X_{t+h}) − D̂₊(X_t))/h` with the Brownian term
/// `∂D̂₊(X_t) σΔW/h` removed, and `D₋²X` regresses `(D̂₋(X_t) − D̂₋(X_{t−h}))/h`
/// with `∂D̂₋(X_t)(X_t − X_{t−h} − D̂₋(X_t) h)/h` removed; the latter has
/// conditional mean zero given `X_t` up to the error of `D̂₋`. Paths leaving
/// the estimated support are dropped.
pub fn dynamic_gradient_test_empirical(
    ensemble: &PathEnsemble,
    grid: &GridSpec,
    t: f64,
    h_lag: f64,
    tolerance: f64,
    options: &EmpiricalOptions,
) -> Result<CheckReport> {
    let d = ensemble.dim();
    let dt = ensemble.dt();
    let lag = (h_lag / dt).round() as usize;
    let k = (t / dt).round() as usize;
    if lag == 0 || (h_lag / dt - lag as f64).abs() > 1e-6 || (t / dt - k as f64).abs() > 1e-6 {
        return Err(Error::OffGrid { t, dt });
    }
    if k < 2 * lag || k + 2 * lag > ensemble.n_steps() {
        return Err(Error::OffGrid { t, dt });
    }
    let wide = Bandwidth::Fixed(
        silverman_bandwidth(&ensemble.marginal(k), d, grid)
            .iter()
            .map(|h| h * FIELD_OVERSMOOTHING)
            .collect(),
    );
    let est = |s: f64, dir: Direction, salt: u64| {
        let o = EmpiricalOptions {
            bandwidth: wide.clone(),
            n_bootstrap: 0,
            bootstrap_seed: options.bootstrap_seed.wrapping_add(salt),
            ..options.clone()
        };
        empirical_derivative(ensemble, s, h_lag, dir, grid, &o).map(|e| e.field)
    };
    let tk = ensemble.time(k);
    let b0 = est(tk, Direction::Forward, 0)?;
    let g0 = est(tk, Direction::Backward, 0)?;
    let (b1, gm) = (&b0, &g0);
    let (jb, jg) = (field_jacobian(&b0), field_jacobian(&g0));

    let n = ensemble.n_paths();
    let sigma = ensemble.spec().sigma;
    let h = lag as f64 * dt;
    let mut points = Vec::with_capacity(n * d);
    let (mut fwd, mut bwd) = (vec![Vec::with_capacity(n); d], vec![Vec::with_capacity(n); d]);
    let (mut wf, mut wb) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let (mut v0, mut v1, mut j0) = (vec![0.0; d], vec![0.0; d], vec![0.0; d * d]);
    let mut dw = vec![0.0; d];
    for p in 0..n {
        let x = ensemble.state(p, k);
        points.extend_from_slice(x);

        let ok = interpolate(&b0, x, &mut v0)
            .and_then(|_| interpolate(b1, ensemble.state(p, k + lag), &mut v1))
            .and_then(|_| interpolate(&jb, x, &mut j0));
        dw.iter_mut().for_each(|w| *w = 0.0);
        for step in k..k + lag {
            for (w, inc) in dw.iter_mut().zip(ensemble.increment(p, step)) {
                *w += inc;
            }
        }
        wf.push(if ok.is_some() { 1.0 } else { 0.0 });
        for i in 0..d {
            let noise: f64 = (0..d).map(|j| j0[i * d + j] * sigma * dw[j]).sum();
            fwd[i].push(if ok.is_some() { (v1[i] - v0[i] - noise) / h } else { 0.0 });
        }

        let back = ensemble.state(p, k - lag);
        let ok = interpolate(&g0, x, &mut v0)
            .and_then(|_| interpolate(gm, back, &mut v1))
            .and_then(|_| interpolate(&jg, x, &mut j0));
        wb.push(if ok.is_some() { 1.0 } else { 0.0 });
        for i in 0..d {
            let noise: f64 = (0..d).map(|j| j0[i * d + j] * (x[j] - back[j] - v0[j] * h)).sum();
            bwd[i].push(if ok.is_some() { (v0[i] - v1[i] - noise) / h } else { 0.0 });
        }
    }
    let plus2 = kernel_regression(&points, &fwd, Some(&wf), grid, options, DerivativeKind::Dplus2, tk)?;
    let back_options = EmpiricalOptions {
        bootstrap_seed: options.bootstrap_seed.wrapping_add(1),
        ..options.clone()
    };
    let minus2 = kernel_regression(
        &points,
        &bwd,
        Some(&wb),
        grid,
        &back_options,
        DerivativeKind::Dminus2,
        tk,
    )?;
    let diff = plus2.field.combine(&minus2.field, |a, b| a - b)?;
    let r3 = diff.sup_norm();
    let p = kde(ensemble, tk, grid, &Bandwidth::Auto)?;
    let coverage = diff.coverage(&p.bulk_mask());

    let mut report = CheckReport::new("dynamic_gradient_test", ensemble.spec().descriptor());
    report
        .residual("r3", r3, tolerance, "sup over kde bulk, max over components")
        .diagnostic("3se", 3.0 * combined_se(&plus2, &minus2, diff.mask()))
        .diagnostic("h_lag", h)
        .diagnostic("t", tk);
    let gradient = classify(&mut report, r3, tolerance);
    static_cross_check(&mut report, &ensemble.spec().drift, grid, diff.mask(), gradient)?;
    report.field("dplus2_minus_dminus2", diff);
    report.seeds = vec![ensemble.seed(), options.bootstrap_seed];
    Ok(report.conclude(Some(coverage)))
}

/// Options for [`reversibility_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReversibilitySettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    /// Paths simulated at a time.
    pub chunk: usize,
    /// Largest admissible standardized discrepancy.
    pub tolerance: f64,
}

/// A per-path statistic of a discretized path.
#[derive(Debug, Clone, Copy)]
enum PathStat {
    Mean {
        step: usize,
        i: usize,
    },
    Moment {
        step: usize,
        i: usize,
        j: usize,
    },
    Lag {
        step: usize,
        lag: usize,
        i: usize,
        j: usize,
    },
}

impl PathStat {
    fn eval(&self, path: &[f64], d: usize) -> f64 {
        let x = |step: usize, i: usize| path[step * d + i];
        match *self {
            PathStat::Mean { step, i } => x(step, i),
            PathStat::Moment { step, i, j } => x(step, i) * x(step, j),
            PathStat::Lag { step, lag, i, j } => x(step, i) * x(step + lag, j),
        }
    }

    fn is_cross(&self) -> bool {
        matches!(self, PathStat::Lag { i, j, .. } if i != j)
    }
}

fn path_statistics(d: usize, m: usize) -> Vec<PathStat> {
    let q = [m / 4, m / 2, (3 * m) / 4];
    let lag = (m / 4).max(1);
    let mut stats = Vec::new();
    for &step in &q {
        for i in 0..d {
            stats.push(PathStat::Mean { step, i });
            for j in i..d {
                stats.push(PathStat::Moment { step, i, j });
            }
        }
    }
    for &step in &q[..2] {
        if step + lag > m {
            continue;
        }
        for i in 0..d {
            for j in 0..d {
                stats.push(PathStat::Lag { step, lag, i, j });
            }
        }
    }
    stats
}

/// Compares the law of the paths with the law of their time reversal.
///
/// Each path and its reversal contribute one paired difference per
/// statistic (marginal moments at `T/4, T/2, 3T/4` and lag-`T/4`
/// cross-products); `r₄` is the largest `|mean / SE|` over statistics whose
/// difference is not identically zero. Defined only for stationary starts.
pub fn reversibility_check(
    spec: &DiffusionSpec,
    grid: &GridSpec,
    settings: &ReversibilitySettings,
) -> Result<CheckReport> {
    let mut report = CheckReport::new("reversibility_check", spec.descriptor());
    report.seeds = vec![settings.seed];
    let Some(v) = spec.drift.quasi_potential() else {
        return Ok(report.inconclusive("the invariant law of the drift is unknown"));
    };
    let invariant = stationary_density(v, spec.sigma, grid)?;
    let start = match initial_density(&spec.initial, grid) {
        Ok(p) => p.l1_distance(&invariant)?,
        Err(_) => f64::INFINITY,
    };
    report.diagnostic("initial_l1_to_invariant", start);
    if !(start <= STATIONARY_START_L1) {
        return Ok(report.inconclusive("the initial law is not the invariant law"));
    }
    if settings.chunk == 0 {
        return Err(Error::InvalidParameter("chunk must be positive".into()));
    }

    let (d, m) = (spec.dim(), settings.n_steps);
    let stats = path_statistics(d, m);
    let mut sum = vec![0.0; stats.len()];
    let mut sum_sq = vec![0.0; stats.len()];
    let mut first = 0;
    while first < settings.n_paths {
        let len = settings.chunk.min(settings.n_paths - first);
        let fwd = euler_maruyama_range(spec, first, len, m, settings.seed)?;
        let rev = reverse_paths(&fwd);
        for p in 0..len {
            let (a, b) = (fwd.path(p), rev.path(p));
            for (k, s) in stats.iter().enumerate() {
                let diff = s.eval(a, d) - s.eval(b, d);
                sum[k] += diff;
                sum_sq[k] += diff * diff;
            }
        }
        first += len;
    }

    let n = settings.n_paths as f64;
    let (mut r4, mut cross, mut used) = (0.0f64, 0.0f64, 0);
    for (k, s) in stats.iter().enumerate() {
        if sum_sq[k] == 0.0 {
            continue;
        }
        let mean = sum[k] / n;
        let var = ((sum_sq[k] - n * mean * mean) / (n - 1.0)).max(0.0);
        let se = (var / n).sqrt();
        let z = if se > 0.0 { (mean / se).abs() } else { f64::INFINITY };
        r4 = r4.max(z);
        if s.is_cross() {
            cross = cross.max(z);
        }
        used += 1;
    }
    report
        .residual("r4", r4, settings.tolerance, "max |mean/SE| over path statistics")
        .diagnostic("cross_covariance_asymmetry", cross)
        .diagnostic("statistics", used as f64);
    Ok(report.conclude(None))
}

/// `𝒟²X + ∇U` on the bulk. The imaginary part is gated; the real part is
/// reported without a tolerance.
pub fn newton_residual(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    t: f64,
    tolerance: f64,
) -> Result<CheckReport> {
    let u = spec
        .drift
        .potential()
        .ok_or_else(|| Error::Missing(format!("`{}` has no potential", spec.drift.descriptor())))?;
    let t = snap(density, t);
    let fields = second_order_fields(spec, density, t)?;
    let (re, im) = fields.complex(2)?.split_complex().expect("complex field");
    let grid = density.grid();
    let d = grid.dim();
    let mut grad = vec![0.0; grid.n_nodes() * d];
    for (node, out) in grad.chunks_exact_mut(d).enumerate() {
        u.gradient(&grid.node_coords(node), out);
    }
    let grad = DerivativeField::new(
        DerivativeKind::Composed,
        grid.clone(),
        t,
        d,
        grad,
        vec![true; grid.n_nodes()],
    )?;
    let real = re.combine(&grad, |a, b| a + b)?;
    let coverage = im.coverage(&bulk_at(density, t));

    let mut report = CheckReport::new("newton_residual", spec.descriptor());
    report
        .residual("imaginary", im.sup_norm(), tolerance, "sup over bulk")
        .reported("real", real.sup_norm(), "sup over bulk")
        .diagnostic("t", t);
    report.field("newton_real", real).field("newton_imaginary", im);
    Ok(report.conclude(Some(coverage)))
}

/// Terminal functional `φ(X)` of a path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Observable {
    TerminalCoordinate { axis: usize },
    TerminalSquare,
}

impl Default for Observable {
    fn default() -> Self {
        Observable::TerminalCoordinate { axis: 0 }
    }
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Observable::TerminalCoordinate { axis } => x[axis],
            Observable::TerminalSquare => x.iter().map(|v| v * v).sum(),
        }
    }
}

/// Options for [`girsanov_variation_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GirsanovSettings {
    pub observable: Observable,
    /// Central-difference steps; two steps are Richardson-combined.
    pub eps: Vec<f64>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub n_bootstrap: usize,
    pub chunk: usize,
    /// Largest admissible `|LHS − RHS| / (3 SE)`.
    pub tolerance: f64,
}

/// Smallest finite-difference step that is not dominated by rounding.
const MIN_EPS: f64 = 1e-8;

/// Compares `∂ε E[φ(Xᵉ)]` at `ε = 0`, for the drift `b + εγ`, with
/// `E[φ(X) Σ⟨γ(X_k), ΔW_k⟩]`. Both sides are computed path by path on common
/// noise; `r₅ = |mean(LHS − RHS)| / (3 SE)` with a Poisson-bootstrap SE.
pub fn girsanov_variation_check(
    spec: &DiffusionSpec,
    gamma: &VectorField,
    settings: &GirsanovSettings,
) -> Result<CheckReport> {
    if spec.sigma != 1.0 {
        return Err(Error::InvalidParameter(format!(
            "the variation identity is stated for sigma = 1, got {}",
            spec.sigma
        )));
    }
    if gamma.dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: gamma.dim(),
        });
    }
    if let Observable::TerminalCoordinate { axis } = settings.observable {
        if axis >= spec.dim() {
            return Err(Error::InvalidParameter(format!("observable axis {axis} out of range")));
        }
    }
    if settings.eps.is_empty() || settings.eps.len() > 2 || settings.eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::InvalidParameter("eps must be one or two positive steps".into()));
    }
    if settings.chunk == 0 || settings.n_paths < 2 {
        return Err(Error::InvalidParameter(
            "need at least two paths and a positive chunk".into(),
        ));
    }
    let mut report = CheckReport::new("girsanov_variation_check", spec.descriptor());
    report.seeds = vec![settings.seed];
    if settings.eps.iter().any(|e| *e < MIN_EPS) {
        return Ok(report.inconclusive(format!(
            "eps below {MIN_EPS:e} is dominated by rounding; use steps around 1e-2"
        )));
    }

    let d = spec.dim();
    let m = settings.n_steps;
    let (mut lhs, mut rhs) = (
        Vec::with_capacity(settings.n_paths),
        Vec::with_capacity(settings.n_paths),
    );
    let mut gv = vec![0.0; d];
    let mut first = 0;
    while first < settings.n_paths {
        let len = settings.chunk.min(settings.n_paths - first);
        let base = euler_maruyama_range(spec, first, len, m, settings.seed)?;
        let mut quotients = Vec::new();
        for &e in &settings.eps {
            let plus = perturbed_ensemble(&base, gamma, e)?;
            let minus = perturbed_ensemble(&base, gamma, -e)?;
            let q: Vec<f64> = (0..len)
                .map(|p| {
                    let up = settings.observable.eval(plus.state(p, m));
                    let down = settings.observable.eval(minus.state(p, m));
                    (up - down) / (2.0 * e)
                })
                .collect();
            quotients.push(q);
        }
        for p in 0..len {
            lhs.push(match settings.eps.as_slice() {
                [_] => quotients[0][p],
                [e1, e2] => (e2 * e2 * quotients[0][p] - e1 * e1 * quotients[1][p]) / (e2 * e2 - e1 * e1),
                _ => unreachable!("eps length checked"),
            });
            let mut integral = 0.0;
            for k in 0..m {
                gamma.eval(base.state(p, k), &mut gv);
                integral += gv.iter().zip(base.increment(p, k)).map(|(g, w)| g * w).sum::<f64>();
            }
            rhs.push(settings.observable.eval(base.state(p, m)) * integral);
        }
        first += len;
    }

    let diff: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let boot_seed = settings.seed.wrapping_add(0x5eed);
    let (mean_l, se_l) = bootstrap_mean(&lhs, settings.n_bootstrap, boot_seed);
    let (mean_r, se_r) = bootstrap_mean(&rhs, settings.n_bootstrap, boot_seed);
    let (mean_d, se_d) = bootstrap_mean(&diff, settings.n_bootstrap, boot_seed);
    let r5 = if se_d > 0.0 {
        mean_d.abs() / (3.0 * se_d)
    } else if mean_d == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    report
        .residual("r5", r5, settings.tolerance, "|mean(lhs - rhs)| / (3 bootstrap SE)")
        .diagnostic("lhs", mean_l)
        .diagnostic("rhs", mean_r)
        .diagnostic("lhs_se", se_l)
        .diagnostic("rhs_se", se_r)
        .diagnostic("difference_se", se_d);
    report.seeds.push(boot_seed);
    Ok(report.conclude(None))
}

/// Sample mean and its Poisson-bootstrap standard error.
fn bootstrap_mean(x: &[f64], replicates: usize, seed: u64) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if replicates < 2 {
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        return (mean, (var / n).sqrt());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let poisson = Poisson::new(1.0).expect("unit rate");
    let means: Vec<f64> = (0..replicates)
        .map(|_| {
            let (mut s, mut w) = (0.0, 0.0);
            for v in x {
                let k: f64 = poisson.sample(&mut rng);
                s += k * v;
                w += k;
            }
            s / w
        })
        .collect();
    let b = replicates as f64;
    let m = means.iter().sum::<f64>() / b;
    let var = means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (b - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characterize::{Verdict, ANALYTIC_TOLERANCE};
    use crate::model::{builtin_drift, InitialLaw};

    fn stationary(name: &str, params: &[f64], grid: &GridSpec, sigma: f64) -> (DiffusionSpec, DensityTimeSeries) {
        let drift = builtin_drift(name, params).unwrap();
        let p = stationary_density(drift.quasi_potential().unwrap(), sigma, grid).unwrap();
        let spec = DiffusionSpec::new(drift, sigma, InitialLaw::Grid(p.clone()), 1.0).unwrap();
        (spec, DensityTimeSeries::constant(p))
    }

    #[test]
    fn ou_stationary_analytic_checks_pass() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 2001).unwrap();
        let (spec, p) = stationary("ou", &[1.0], &grid, 1.0);
        let tol = ANALYTIC_TOLERANCE;
        let r = stationarity_check(&spec, &p, &[0.25, 0.75], tol).unwrap();
        assert_eq!(r.verdict, Verdict::Pass, "{r:?}");
        for r in [
            identity_residual(&spec, &p, 0.5, tol).unwrap(),
            dynamic_gradient_test(&spec, &p, 0.5, tol).unwrap(),
            newton_residual(&spec, &p, 0.5, tol).unwrap(),
        ] {
            assert_eq!(r.verdict, Verdict::Pass, "{}", r.to_json());
        }
    }

    #[test]
    fn rotational_is_classified_non_gradient_in_agreement_with_static() {
        let grid = GridSpec::cube(2, -3.5, 3.5, 121).unwrap();
        let (spec, p) = stationary("rotational_linear", &[], &grid, 1.0);
        let r = dynamic_gradient_test(&spec, &p, 0.0, ANALYTIC_TOLERANCE).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.classification.as_deref(), Some("non_gradient"));
        assert_eq!(r.diagnostics["agrees_with_static"], 1.0);
    }

    #[test]
    fn newton_requires_a_potential() {
        let grid = GridSpec::cube(2, -3.5, 3.5, 41).unwrap();
        let (spec, p) = stationary("rotational_linear", &[], &grid, 1.0);
        assert!(matches!(newton_residual(&spec, &p, 0.0, 1.0), Err(Error::Missing(_))));
    }

    #[test]
    fn reversibility_needs_a_stationary_start() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 401).unwrap();
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let spec = DiffusionSpec::new(ou, 1.0, InitialLaw::PointMass(vec![2.0]), 1.0).unwrap();
        let settings = ReversibilitySettings {
            n_paths: 100,
            n_steps: 20,
            seed: 0,
            chunk: 50,
            tolerance: 4.0,
        };
        let r = reversibility_check(&spec, &grid, &settings).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn path_statistics_cover_moments_and_lags() {
        let stats = path_statistics(2, 8);
        // 3 times × (2 means + 3 moments) + 2 starts × 4 lag products
        assert_eq!(stats.len(), 23);
        assert_eq!(stats.iter().filter(|s| s.is_cross()).count(), 4);
    }

    #[test]
    fn zero_gamma_gives_exact_zero() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let spec = DiffusionSpec::new(ou, 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        let settings = GirsanovSettings {
            observable: Observable::TerminalCoordinate { axis: 0 },
            eps: vec![1e-2, 2e-2],
            n_paths: 500,
            n_steps: 20,
            seed: 3,
            n_bootstrap: 8,
            chunk: 200,
            tolerance: 1.0,
        };
        let r = girsanov_variation_check(&spec, &VectorField::zero(1), &settings).unwrap();
        assert_eq!(r.diagnostics["lhs"], 0.0);
        assert_eq!(r.diagnostics["rhs"], 0.0);
        assert_eq!(r.residual_value("r5"), Some(0.0));
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn tiny_eps_is_inconclusive_and_sigma_must_be_one() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let mut settings = GirsanovSettings {
            observable: Observable::TerminalSquare,
            eps: vec![1e-10],
            n_paths: 10,
            n_steps: 5,
            seed: 0,
            n_bootstrap: 0,
            chunk: 10,
            tolerance: 1.0,
        };
        let spec = DiffusionSpec::new(ou.clone(), 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        let r = girsanov_variation_check(&spec, &ou, &settings).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        settings.eps = vec![1e-2];
        let spec = DiffusionSpec::new(ou.clone(), 2.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        assert!(girsanov_variation_check(&spec, &ou, &settings).is_err());
    }
}
