use rayon::prelude::*;

use super::{DensityField, DensityTimeSeries, GridSpec};
use crate::error::{Error, Result};
use crate::model::DiffusionSpec;

/// Options for [`fokker_planck_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FokkerPlanckConfig {
    pub n_time_steps: usize,
    /// Number of recorded slices after `t = 0`; clamped to `n_time_steps`.
    pub n_slices: usize,
}

impl FokkerPlanckConfig {
    pub fn new(n_time_steps: usize) -> Self {
        FokkerPlanckConfig {
            n_time_steps,
            n_slices: 200,
        }
    }

    pub fn with_slices(mut self, n_slices: usize) -> Self {
        self.n_slices = n_slices;
        self
    }
}

/// Drift components at the faces between each node and its upper neighbour.
struct FaceDrift {
    /// `faces[axis][node]`: drift component at `x_node + h_axis / 2`.
    faces: Vec<Vec<f64>>,
    max_abs: Vec<f64>,
}

fn face_drift(spec: &DiffusionSpec, grid: &GridSpec) -> Result<FaceDrift> {
    let d = grid.dim();
    let mut faces = vec![vec![0.0; grid.n_nodes()]; d];
    let mut max_abs = vec![0.0f64; d];
    let mut b = vec![0.0; d];
    for node in 0..grid.n_nodes() {
        let x = grid.node_coords(node);
        for axis in 0..d {
            if grid.axis_index(node, axis) + 1 == grid.nodes(axis) {
                continue;
            }
            let mut xf = x.clone();
            xf[axis] += 0.5 * grid.spacing(axis);
            spec.drift.eval(&xf, &mut b);
            if !b[axis].is_finite() {
                return Err(Error::InvalidParameter(format!("drift is not finite at {xf:?}")));
            }
            faces[axis][node] = b[axis];
            max_abs[axis] = max_abs[axis].max(b[axis].abs());
        }
    }
    Ok(FaceDrift { faces, max_abs })
}

/// `z / (e^z - 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-10 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Scharfetter-Gummel flux from `lo` to `hi` across a face with drift `b`:
/// exact for the steady 1-D problem with constant drift on the face, centred
/// when `b h / diff` is small, upwind when it is large.
fn face_flux(b: f64, lo: f64, hi: f64, diff: f64, h: f64) -> f64 {
    if diff == 0.0 {
        return b.max(0.0) * lo + b.min(0.0) * hi;
    }
    let pe = b * h / diff;
    diff / h * (bernoulli(-pe) * lo - bernoulli(pe) * hi)
}

/// Largest explicit time step that keeps every update coefficient
/// non-negative. Each face flux draws at most `diff / h + |b|` per unit mass
/// from a node.
fn dt_max(grid: &GridSpec, sigma: f64, max_abs: &[f64]) -> f64 {
    let rate: f64 = (0..grid.dim())
        .map(|a| {
            let h = grid.spacing(a);
            2.0 * max_abs[a] / h + sigma * sigma / (h * h)
        })
        .sum();
    1.0 / rate
}

/// Smallest number of time steps over the spec horizon that satisfies the CFL bound.
pub fn cfl_time_steps(spec: &DiffusionSpec, grid: &GridSpec) -> Result<usize> {
    let f = face_drift(spec, grid)?;
    Ok((spec.horizon / dt_max(grid, spec.sigma, &f.max_abs)).ceil() as usize)
}

struct Operator<'a> {
    grid: &'a GridSpec,
    faces: &'a [Vec<f64>],
    diff: f64,
    strides: Vec<usize>,
    spacing: Vec<f64>,
    last: Vec<Vec<bool>>,
}

impl Operator<'_> {
    /// `out = p − dt · div F(p)`.
    fn euler(&self, p: &[f64], out: &mut [f64], dt: f64, flux: &mut [Vec<f64>]) {
        for (a, fa) in flux.iter_mut().enumerate() {
            let (s, h, faces, last) = (self.strides[a], self.spacing[a], &self.faces[a], &self.last[a]);
            fa.par_iter_mut().enumerate().for_each(|(n, f)| {
                *f = if last[n] {
                    0.0
                } else {
                    face_flux(faces[n], p[n], p[n + s], self.diff, h)
                };
            });
        }
        let flux = &*flux;
        out.par_iter_mut().enumerate().for_each(|(n, o)| {
            let mut div = 0.0;
            for (a, fa) in flux.iter().enumerate() {
                let s = self.strides[a];
                let below = if self.grid.axis_index(n, a) == 0 {
                    0.0
                } else {
                    fa[n - s]
                };
                div += (fa[n] - below) / self.spacing[a];
            }
            *o = p[n] - dt * div;
        });
    }
}

/// Solves `∂ₜp = −div(p b) + (σ²/2) Δp` on `grid` over `[0, T]`.
///
/// Finite volumes with exponentially fitted (Scharfetter-Gummel) face fluxes
/// and no-flux walls; Heun's method (SSP-RK2) in time. Each step clips negative values and
/// renormalises the trapezoidal mass to one.
pub fn fokker_planck_solve(
    spec: &DiffusionSpec,
    init: &DensityField,
    grid: &GridSpec,
    config: FokkerPlanckConfig,
) -> Result<DensityTimeSeries> {
    if spec.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: spec.dim(),
        });
    }
    if init.grid() != grid {
        return Err(Error::InvalidParameter(
            "initial density must live on the solver grid".into(),
        ));
    }
    let n_steps = config.n_time_steps;
    if n_steps == 0 {
        return Err(Error::InvalidParameter("n_time_steps must be positive".into()));
    }
    let drift = face_drift(spec, grid)?;
    let dt = spec.horizon / n_steps as f64;
    let limit = dt_max(grid, spec.sigma, &drift.max_abs);
    if dt > limit {
        return Err(Error::Cfl {
            n_steps,
            suggested: (spec.horizon / limit).ceil() as usize,
        });
    }

    let d = grid.dim();
    let op = Operator {
        grid,
        faces: &drift.faces,
        diff: 0.5 * spec.sigma * spec.sigma,
        strides: (0..d).map(|a| grid.stride(a)).collect(),
        spacing: (0..d).map(|a| grid.spacing(a)).collect(),
        last: (0..d)
            .map(|a| {
                (0..grid.n_nodes())
                    .map(|n| grid.axis_index(n, a) + 1 == grid.nodes(a))
                    .collect()
            })
            .collect(),
    };

    let n_slices = config.n_slices.clamp(1, n_steps);
    let record: Vec<usize> = (1..=n_slices)
        .map(|k| (k * n_steps + n_slices / 2) / n_slices)
        .collect();

    let mut p = init.clone().normalized()?.values().to_vec();
    let mut slices = vec![DensityField::new(grid.clone(), 0.0, p.clone())?];
    let mut flux = vec![vec![0.0; p.len()]; d];
    let mut stage1 = vec![0.0; p.len()];
    let mut stage2 = vec![0.0; p.len()];
    let mut rec = record.iter().peekable();
    for step in 1..=n_steps {
        // Heun's method as a convex combination of two Euler steps, so each
        // stage inherits the positivity of the Euler update.
        op.euler(&p, &mut stage1, dt, &mut flux);
        op.euler(&stage1, &mut stage2, dt, &mut flux);
        p.par_iter_mut()
            .zip(&stage2)
            .for_each(|(v, s2)| *v = (0.5 * (*v + s2)).max(0.0));
        let field = DensityField::new(grid.clone(), step as f64 * dt, p.clone())?.normalized()?;
        p.copy_from_slice(field.values());
        if rec.peek() == Some(&&step) {
            rec.next();
            slices.push(field);
        }
    }
    DensityTimeSeries::new(slices)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_drift, InitialLaw, VectorField};

    fn spec(drift: VectorField, horizon: f64) -> DiffusionSpec {
        DiffusionSpec::new(drift, 1.0, InitialLaw::PointMass(vec![0.0]), horizon).unwrap()
    }

    #[test]
    fn fitted_flux_limits() {
        let (lo, hi, h) = (0.3, 0.7, 0.1);
        let centred = -0.5 * (hi - lo) / h + 0.2 * 0.5 * (lo + hi);
        assert!((face_flux(0.2, lo, hi, 0.5, h) - centred).abs() < 1e-3);
        assert!((face_flux(1e4, lo, hi, 0.5, h) - 1e4 * lo).abs() < 1.0);
        assert!((face_flux(-1e4, lo, hi, 0.5, h) + 1e4 * hi).abs() < 1.0);
        // Steady state: p_hi / p_lo = exp(b h / diff) carries no flux.
        let (b, diff) = (1.3, 0.5);
        assert!(face_flux(b, 1.0, (b * h / diff).exp(), diff, h).abs() < 1e-12);
    }

    #[test]
    fn refuses_cfl_violation() {
        let grid = GridSpec::cube(1, -4.0, 4.0, 401).unwrap();
        let s = spec(VectorField::zero(1), 1.0);
        let init = DensityField::gaussian(grid.clone(), 0.0, &[0.0], &[0.25]).unwrap();
        let need = cfl_time_steps(&s, &grid).unwrap();
        match fokker_planck_solve(&s, &init, &grid, FokkerPlanckConfig::new(need / 2)) {
            Err(Error::Cfl { suggested, .. }) => assert_eq!(suggested, need),
            other => panic!("expected CFL refusal, got {other:?}"),
        }
    }

    #[test]
    fn mass_and_sign_preserved() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 301).unwrap();
        let s = spec(builtin_drift("double_well", &[]).unwrap(), 0.5);
        let init = DensityField::gaussian(grid.clone(), 0.0, &[0.5], &[0.1]).unwrap();
        let n = cfl_time_steps(&s, &grid).unwrap();
        let ts = fokker_planck_solve(&s, &init, &grid, FokkerPlanckConfig::new(n).with_slices(10)).unwrap();
        assert_eq!(ts.slices().len(), 11);
        assert!((ts.last().t() - 0.5).abs() < 1e-12);
        for sl in ts.slices() {
            assert!((sl.mass() - 1.0).abs() < 1e-12);
            assert!(sl.values().iter().all(|v| *v >= 0.0));
        }
    }
}
