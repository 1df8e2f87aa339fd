//! Euler–Maruyama path ensembles, time reversal and common-noise perturbations.
//!
//! Path `i` draws its initial state and increments from
//! `ChaCha8Rng::seed_from_u64(seed)` on stream `i`, so an ensemble is
//! bit-reproducible regardless of thread count or how paths are chunked.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::density::{score, DensityTimeSeries, ScoreField};
use crate::error::{Error, Result};
use crate::model::{DiffusionSpec, InitialLaw, InitialSampler, VectorField};

/// States larger than this in absolute value abort the integration.
pub const BLOW_UP: f64 = 1e6;

/// How an ensemble was produced from the forward dynamics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    /// Time axis reversed by [`reverse_paths`].
    pub reversed: bool,
    /// Drift `b + eps·γ` integrated on the noise of the ensemble with this seed.
    pub perturbation: Option<(u64, f64)>,
}

/// Paths `states[path][step][axis]` with their Brownian increments.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    spec: DiffusionSpec,
    n_paths: usize,
    n_steps: usize,
    first_path: usize,
    dt: f64,
    states: Vec<f64>,
    noise: Arc<Vec<f64>>,
    seed: u64,
    provenance: Provenance,
}

impl PathEnsemble {
    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Global index of the first path (nonzero for ranges).
    pub fn first_path(&self) -> usize {
        self.first_path
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.spec.horizon
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn is_reversed(&self) -> bool {
        self.provenance.reversed
    }

    /// Flat `n_paths × (n_steps + 1) × d` states.
    pub fn states(&self) -> &[f64] {
        &self.states
    }

    /// Flat `n_paths × n_steps × d` increments `ΔW`.
    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn state(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim();
        let at = (path * (self.n_steps + 1) + step) * d;
        &self.states[at..at + d]
    }

    pub fn increment(&self, path: usize, step: usize) -> &[f64] {
        let d = self.dim();
        let at = (path * self.n_steps + step) * d;
        &self.noise[at..at + d]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let len = (self.n_steps + 1) * self.dim();
        &self.states[path * len..(path + 1) * len]
    }

    pub fn time(&self, step: usize) -> f64 {
        step as f64 * self.dt
    }

    /// Step nearest to `t`, clamped to `[0, n_steps]`.
    pub fn step_index(&self, t: f64) -> usize {
        ((t / self.dt).round().max(0.0) as usize).min(self.n_steps)
    }

    /// All states at `step`, flat `n_paths × d`.
    pub fn marginal(&self, step: usize) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(self.n_paths * d);
        for p in 0..self.n_paths {
            out.extend_from_slice(self.state(p, step));
        }
        out
    }

    /// Sample mean at `step`.
    pub fn mean(&self, step: usize) -> Vec<f64> {
        let d = self.dim();
        let mut m = vec![0.0; d];
        for p in 0..self.n_paths {
            for (a, x) in self.state(p, step).iter().enumerate() {
                m[a] += x;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n_paths as f64);
        m
    }

    /// Unbiased sample covariance at `step`, row-major.
    pub fn covariance(&self, step: usize) -> Vec<f64> {
        let d = self.dim();
        let m = self.mean(step);
        let mut c = vec![0.0; d * d];
        for p in 0..self.n_paths {
            let x = self.state(p, step);
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (x[i] - m[i]) * (x[j] - m[j]);
                }
            }
        }
        let denom = (self.n_paths.max(2) - 1) as f64;
        c.iter_mut().for_each(|v| *v /= denom);
        c
    }
}

fn check_counts(n_paths: usize, n_steps: usize) -> Result<()> {
    if n_paths == 0 || n_steps == 0 {
        return Err(Error::InvalidParameter("n_paths and n_steps must be at least 1".into()));
    }
    Ok(())
}

fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// One Euler–Maruyama path from `states[0..d]` with increments `noise`.
///
/// `drift(step, x, out)` supplies the drift at the start of each step.
fn integrate<F>(path: usize, states: &mut [f64], noise: &[f64], d: usize, dt: f64, sigma: f64, drift: &F) -> Result<()>
where
    F: Fn(usize, &[f64], &mut [f64]),
{
    let mut b = vec![0.0; d];
    for (k, dw) in noise.chunks_exact(d).enumerate() {
        let (head, tail) = states.split_at_mut((k + 1) * d);
        let x = &head[k * d..];
        drift(k, x, &mut b);
        let next = &mut tail[..d];
        for a in 0..d {
            next[a] = x[a] + b[a] * dt + sigma * dw[a];
        }
        if next.iter().any(|v| !v.is_finite() || v.abs() > BLOW_UP) {
            return Err(Error::BlowUp { path, step: k + 1 });
        }
    }
    Ok(())
}

/// Simulates paths `0..n_paths` of `X_{k+1} = X_k + b(X_k) dt + σ ΔW_k`.
pub fn euler_maruyama(spec: &DiffusionSpec, n_paths: usize, n_steps: usize, seed: u64) -> Result<PathEnsemble> {
    euler_maruyama_range(spec, 0, n_paths, n_steps, seed)
}

/// Simulates paths `first_path..first_path + n_paths` of the ensemble with
/// this seed; concatenating ranges reproduces the full ensemble exactly.
pub fn euler_maruyama_range(
    spec: &DiffusionSpec,
    first_path: usize,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let sampler = InitialSampler::new(&spec.initial);
    let drift = &spec.drift;
    simulate_with(spec, &sampler, first_path, n_paths, n_steps, seed, |_, x, out| {
        drift.eval(x, out)
    })
}

fn simulate_with<F>(
    spec: &DiffusionSpec,
    sampler: &InitialSampler,
    first_path: usize,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    drift: F,
) -> Result<PathEnsemble>
where
    F: Fn(usize, &[f64], &mut [f64]) + Sync,
{
    check_counts(n_paths, n_steps)?;
    let d = spec.dim();
    let dt = spec.horizon / n_steps as f64;
    let sqdt = dt.sqrt();
    let mut states = vec![0.0; n_paths * (n_steps + 1) * d];
    let mut noise = vec![0.0; n_paths * n_steps * d];
    states
        .par_chunks_mut((n_steps + 1) * d)
        .zip(noise.par_chunks_mut(n_steps * d))
        .enumerate()
        .try_for_each(|(i, (xs, dws))| {
            let path = first_path + i;
            let mut rng = path_rng(seed, path);
            sampler.sample(&mut rng, &mut xs[..d]);
            for w in dws.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = sqdt * z;
            }
            integrate(path, xs, dws, d, dt, spec.sigma, &drift)
        })?;
    Ok(PathEnsemble {
        spec: spec.clone(),
        n_paths,
        n_steps,
        first_path,
        dt,
        states,
        noise: Arc::new(noise),
        seed,
        provenance: Provenance {
            reversed: false,
            perturbation: None,
        },
    })
}

/// `X̄_t = X_{T−t}` for every path; increments are stored in reversed order.
pub fn reverse_paths(ensemble: &PathEnsemble) -> PathEnsemble {
    let m = ensemble.n_steps;
    let mut states = Vec::with_capacity(ensemble.states.len());
    let mut noise = Vec::with_capacity(ensemble.noise.len());
    for p in 0..ensemble.n_paths {
        for k in (0..=m).rev() {
            states.extend_from_slice(ensemble.state(p, k));
        }
        for k in (0..m).rev() {
            noise.extend_from_slice(ensemble.increment(p, k));
        }
    }
    let mut out = ensemble.clone();
    out.states = states;
    out.noise = Arc::new(noise);
    out.provenance.reversed = !ensemble.provenance.reversed;
    out
}

/// Re-integrates `base` with drift `b + eps·γ` on the same initial states and
/// the same Brownian increments.
pub fn perturbed_ensemble(base: &PathEnsemble, gamma: &VectorField, eps: f64) -> Result<PathEnsemble> {
    if base.is_reversed() {
        return Err(Error::InvalidParameter("cannot perturb a reversed ensemble".into()));
    }
    if gamma.dim() != base.dim() {
        return Err(Error::Dimension {
            expected: base.dim(),
            got: gamma.dim(),
        });
    }
    if !eps.is_finite() {
        return Err(Error::InvalidParameter("eps must be finite".into()));
    }
    let d = base.dim();
    let (m, dt, sigma) = (base.n_steps, base.dt, base.spec.sigma);
    let b = base.spec.drift.clone();
    let g = gamma.clone();
    let drift = VectorField::from_fn(d, format!("{}+{eps}*{}", b.descriptor(), g.descriptor()), {
        let (b, g) = (b.clone(), g.clone());
        move |x, out| perturbed_eval(&b, &g, eps, x, out)
    });
    let mut states = base.states.clone();
    states
        .par_chunks_mut((m + 1) * d)
        .zip(base.noise.par_chunks(m * d))
        .enumerate()
        .try_for_each(|(i, (xs, dws))| {
            integrate(
                base.first_path + i,
                xs,
                dws,
                d,
                dt,
                sigma,
                &|_, x: &[f64], out: &mut [f64]| perturbed_eval(&b, &g, eps, x, out),
            )
        })?;
    let mut spec = base.spec.clone();
    spec.drift = drift;
    Ok(PathEnsemble {
        spec,
        states,
        noise: Arc::clone(&base.noise),
        provenance: Provenance {
            reversed: false,
            perturbation: Some((base.seed, eps)),
        },
        ..base.clone()
    })
}

fn perturbed_eval(b: &VectorField, g: &VectorField, eps: f64, x: &[f64], out: &mut [f64]) {
    b.eval(x, out);
    if eps != 0.0 {
        let mut gv = vec![0.0; out.len()];
        g.eval(x, &mut gv);
        for (o, v) in out.iter_mut().zip(gv) {
            *o += eps * v;
        }
    }
}

/// Reversed drift `b̄(s, x) = −b(x) + σ² ∇log p_{T−s}(x)`.
///
/// Scores are interpolated bilinearly in space and linearly in time between
/// density slices.
#[derive(Debug, Clone)]
pub struct ReversedDrift {
    drift: VectorField,
    sigma: f64,
    horizon: f64,
    times: Vec<f64>,
    scores: Vec<ScoreField>,
}

pub fn reversed_drift(spec: &DiffusionSpec, density: &DensityTimeSeries) -> Result<ReversedDrift> {
    spec.require_positive_sigma()?;
    if density.grid().dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: density.grid().dim(),
        });
    }
    Ok(ReversedDrift {
        drift: spec.drift.clone(),
        sigma: spec.sigma,
        horizon: spec.horizon,
        times: density.times(),
        scores: density.slices().iter().map(score).collect(),
    })
}

impl ReversedDrift {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Slice pair and weight for forward time `t`.
    fn bracket(&self, t: f64) -> (usize, usize, f64) {
        let k = self.times.partition_point(|s| *s <= t);
        if k == 0 {
            (0, 0, 0.0)
        } else if k == self.times.len() {
            (k - 1, k - 1, 0.0)
        } else {
            let (t0, t1) = (self.times[k - 1], self.times[k]);
            (k - 1, k, (t - t0) / (t1 - t0))
        }
    }

    /// `b̄(s, x)`; fails outside the grid or where the density is below its floor.
    pub fn eval(&self, s: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        let (i, j, w) = self.bracket(self.horizon - s);
        let d = out.len();
        let mut si = vec![0.0; d];
        self.scores[i].interpolate(x, &mut si)?;
        if w > 0.0 {
            let mut sj = vec![0.0; d];
            self.scores[j].interpolate(x, &mut sj)?;
            for a in 0..d {
                si[a] += w * (sj[a] - si[a]);
            }
        }
        self.drift.eval(x, out);
        for a in 0..d {
            out[a] = -out[a] + self.sigma * self.sigma * si[a];
        }
        Ok(())
    }

    /// Like [`ReversedDrift::eval`] but never fails: the query point is clamped
    /// to the grid and invalid score nodes take the value of the nearest
    /// valid node along each axis.
    fn eval_extended(&self, filled: &[Vec<f64>], s: f64, x: &[f64], out: &mut [f64]) {
        let (i, j, w) = self.bracket(self.horizon - s);
        let grid = self.scores[0].grid();
        let d = out.len();
        let xc: Vec<f64> = (0..d).map(|a| x[a].clamp(grid.lower(a), grid.upper(a))).collect();
        let stencil = grid.stencil(&xc).expect("clamped point lies on the grid");
        let mut sc = vec![0.0; d];
        for (node, wt) in stencil {
            for a in 0..d {
                let vi = filled[i][node * d + a];
                let vj = filled[j][node * d + a];
                sc[a] += wt * (vi + w * (vj - vi));
            }
        }
        self.drift.eval(x, out);
        for a in 0..d {
            out[a] = -out[a] + self.sigma * self.sigma * sc[a];
        }
    }
}

/// Replaces invalid score nodes by the nearest valid value, sweeping axes in turn.
fn fill_invalid(score: &ScoreField) -> Vec<f64> {
    let grid = score.grid();
    let d = grid.dim();
    let mut values = score.values().to_vec();
    let mut valid = score.valid().to_vec();
    for axis in (0..d).rev() {
        let n = grid.nodes(axis);
        let s = grid.stride(axis);
        for start in (0..grid.n_nodes()).filter(|&k| grid.axis_index(k, axis) == 0) {
            let line: Vec<usize> = (0..n).map(|i| start + i * s).collect();
            let good: Vec<usize> = line.iter().copied().filter(|&k| valid[k]).collect();
            if good.is_empty() {
                continue;
            }
            for &k in &line {
                if valid[k] {
                    continue;
                }
                let src = *good.iter().min_by_key(|&&g| g.abs_diff(k)).expect("non-empty");
                for a in 0..d {
                    values[k * d + a] = values[src * d + a];
                }
            }
            for &k in &line {
                valid[k] = true;
            }
        }
    }
    values
}

/// Simulates the reversed diffusion `dY = b̄(s, Y) ds + σ dW` from `p_T`.
///
/// Paths that leave the density grid or its bulk use the extended score of
/// [`ReversedDrift`] so that a run never aborts on a tail excursion.
pub fn simulate_reversed(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    let rd = reversed_drift(spec, density)?;
    let filled: Vec<Vec<f64>> = rd.scores.iter().map(fill_invalid).collect();
    let start = spec.with_initial(InitialLaw::Grid(density.last().clone().normalized()?))?;
    let sampler = InitialSampler::new(&start.initial);
    let dt = spec.horizon / n_steps as f64;
    let mut ens = simulate_with(&start, &sampler, 0, n_paths, n_steps, seed, |k, x, out| {
        rd.eval_extended(&filled, k as f64 * dt, x, out)
    })?;
    let d = spec.dim();
    let rd_field = rd.clone();
    let filled = Arc::new(filled);
    ens.spec.drift = VectorField::from_fn(d, format!("reversed({})", spec.drift.descriptor()), move |x, out| {
        rd_field.eval_extended(&filled, 0.0, x, out)
    });
    Ok(ens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_drift;

    fn ou_spec(x0: f64, sigma: f64, horizon: f64) -> DiffusionSpec {
        DiffusionSpec::degenerate(
            builtin_drift("ou", &[1.0]).unwrap(),
            sigma,
            InitialLaw::PointMass(vec![x0]),
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn same_seed_reproduces_and_ranges_concatenate() {
        let spec = ou_spec(0.5, 1.0, 1.0);
        let a = euler_maruyama(&spec, 20, 50, 7).unwrap();
        let b = euler_maruyama(&spec, 20, 50, 7).unwrap();
        assert_eq!(a.states(), b.states());
        let r = euler_maruyama_range(&spec, 10, 10, 50, 7).unwrap();
        assert_eq!(r.path(3), a.path(13));
        let c = euler_maruyama(&spec, 20, 50, 8).unwrap();
        assert_ne!(a.states(), c.states());
    }

    #[test]
    fn deterministic_limit_has_first_order_error() {
        let mut errs = vec![];
        for m in [100, 200, 400] {
            let e = euler_maruyama(&ou_spec(1.0, 0.0, 1.0), 1, m, 0).unwrap();
            errs.push((e.state(0, m)[0] - (-1f64).exp()).abs());
        }
        assert!(errs[0] <= 1.0 / 100.0);
        for w in errs.windows(2) {
            let ratio = w[1] / w[0];
            assert!((0.45..0.55).contains(&ratio), "{errs:?}");
        }
    }

    #[test]
    fn reversal_is_an_involution() {
        let e = euler_maruyama(&ou_spec(0.0, 1.0, 1.0), 5, 10, 1).unwrap();
        let r = reverse_paths(&e);
        assert!(r.is_reversed());
        assert_eq!(r.state(2, 3), e.state(2, 7));
        assert_eq!(r.increment(2, 0), e.increment(2, 9));
        let rr = reverse_paths(&r);
        assert_eq!(rr.states(), e.states());
        assert_eq!(rr.noise(), e.noise());
        assert!(!rr.is_reversed());
    }

    #[test]
    fn zero_perturbation_is_bit_identical() {
        let e = euler_maruyama(&ou_spec(0.3, 1.0, 1.0), 8, 40, 3).unwrap();
        let gamma = VectorField::from_fn(1, "one", |_, out| out[0] = 1.0);
        let p = perturbed_ensemble(&e, &gamma, 0.0).unwrap();
        assert_eq!(p.states(), e.states());
        assert_eq!(p.provenance().perturbation, Some((3, 0.0)));
        let q = perturbed_ensemble(&e, &gamma, 1e-2).unwrap();
        assert_ne!(q.states(), e.states());
    }

    #[test]
    fn blow_up_is_reported() {
        let spec = DiffusionSpec::new(
            builtin_drift("custom_linear", &[1.0, 50.0]).unwrap(),
            1.0,
            InitialLaw::PointMass(vec![1.0]),
            1.0,
        )
        .unwrap();
        assert!(matches!(euler_maruyama(&spec, 4, 10, 0), Err(Error::BlowUp { .. })));
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(euler_maruyama(&ou_spec(0.0, 1.0, 1.0), 0, 10, 0).is_err());
        assert!(euler_maruyama(&ou_spec(0.0, 1.0, 1.0), 10, 0, 0).is_err());
    }
}
