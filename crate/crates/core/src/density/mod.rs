//! Marginal densities `p_t` on grids: Fokker–Planck solutions, kernel density
//! estimates, stationary Gibbs densities and their scores `∇log p_t`.

mod fokker_planck;
mod grid;
mod kde;
mod score;
pub(crate) mod smoothing;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Potential;

pub use fokker_planck::{cfl_time_steps, fokker_planck_solve, FokkerPlanckConfig};
pub use grid::{grid_derivative, grid_second_derivative, GridSpec};
pub use kde::{kde, kde_points, silverman_bandwidth, Bandwidth};
pub use score::{score, score_derivatives, ScoreDerivatives, ScoreField};

/// Nodes with `p >= BULK_FRACTION * max(p)` form the bulk region.
pub const BULK_FRACTION: f64 = 1e-3;
/// Nodes with `p < POSITIVITY_FLOOR * max(p)` are treated as zero density.
pub const POSITIVITY_FLOOR: f64 = 1e-12;
/// Mass tolerance accepted after normalisation.
pub const MASS_TOLERANCE: f64 = 1e-4;

/// A density sampled on the nodes of a grid at time `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityField {
    grid: GridSpec,
    t: f64,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(grid: GridSpec, t: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_nodes() {
            return Err(Error::Dimension {
                expected: grid.n_nodes(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "density values must be finite and nonnegative".into(),
            ));
        }
        Ok(DensityField { grid, t, values })
    }

    /// Samples `f` at the nodes and normalises the result.
    pub fn from_fn(grid: GridSpec, t: f64, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = grid.coords().iter().map(|c| f(c)).collect();
        DensityField::new(grid, t, values)?.normalized()
    }

    /// The Gaussian `N(mean, cov)` sampled on `grid`, renormalised on the grid.
    pub fn gaussian(grid: GridSpec, t: f64, mean: &[f64], cov: &[f64]) -> Result<Self> {
        let d = grid.dim();
        if mean.len() != d || cov.len() != d * d {
            return Err(Error::Dimension {
                expected: d,
                got: mean.len(),
            });
        }
        let m = nalgebra::DMatrix::from_row_slice(d, d, cov);
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::InvalidParameter("singular covariance".into()))?;
        DensityField::from_fn(grid, t, |x| {
            let mut q = 0.0;
            for i in 0..d {
                for j in 0..d {
                    q += (x[i] - mean[i]) * inv[(i, j)] * (x[j] - mean[j]);
                }
            }
            (-0.5 * q).exp()
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.t = t;
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Trapezoidal mass.
    pub fn mass(&self) -> f64 {
        self.grid
            .trapezoid_weights()
            .iter()
            .zip(&self.values)
            .map(|(w, p)| w * p)
            .sum()
    }

    pub fn normalized(mut self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidParameter(format!("cannot normalise mass {m}")));
        }
        self.values.iter_mut().for_each(|v| *v /= m);
        Ok(self)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn floor(&self) -> f64 {
        POSITIVITY_FLOOR * self.max()
    }

    /// Nodes where the density exceeds the positivity floor.
    pub fn positive_mask(&self) -> Vec<bool> {
        let floor = self.floor();
        self.values.iter().map(|p| *p >= floor && *p > 0.0).collect()
    }

    pub fn bulk_mask(&self) -> Vec<bool> {
        let cut = BULK_FRACTION * self.max();
        self.values.iter().map(|p| *p >= cut && *p > 0.0).collect()
    }

    pub fn l1_distance(&self, other: &DensityField) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::InvalidParameter("densities live on different grids".into()));
        }
        Ok(self
            .grid
            .trapezoid_weights()
            .iter()
            .zip(self.values.iter().zip(&other.values))
            .map(|(w, (a, b))| w * (a - b).abs())
            .sum())
    }

    pub fn mean(&self) -> Vec<f64> {
        let w = self.grid.trapezoid_weights();
        let m = self.mass();
        let mut out = vec![0.0; self.grid.dim()];
        for (n, (p, w)) in self.values.iter().zip(&w).enumerate() {
            for (a, c) in self.grid.node_coords(n).iter().enumerate() {
                out[a] += w * p * c / m;
            }
        }
        out
    }

    /// Row-major covariance matrix.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let mean = self.mean();
        let w = self.grid.trapezoid_weights();
        let m = self.mass();
        let mut out = vec![0.0; d * d];
        for (n, (p, w)) in self.values.iter().zip(&w).enumerate() {
            let c = self.grid.node_coords(n);
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] += w * p * (c[i] - mean[i]) * (c[j] - mean[j]) / m;
                }
            }
        }
        out
    }

    /// Node of maximal density.
    pub fn mode(&self) -> usize {
        self.values
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, v)| if *v > bv { (i, *v) } else { (bi, bv) },
            )
            .0
    }

    /// Local maxima over the 1-D neighbourhood (1-D grids only).
    pub fn local_maxima(&self) -> Vec<usize> {
        let v = &self.values;
        (1..v.len().saturating_sub(1))
            .filter(|&i| v[i] > v[i - 1] && v[i] >= v[i + 1] && v[i] >= BULK_FRACTION * self.max())
            .collect()
    }

    /// Multilinear interpolation of the density at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.grid.stencil(x)?.iter().map(|(n, w)| w * self.values[*n]).sum())
    }
}

/// Density slices `p_{t_0}, …, p_{t_K}` on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityTimeSeries {
    slices: Vec<DensityField>,
}

impl DensityTimeSeries {
    pub fn new(slices: Vec<DensityField>) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::InvalidParameter("empty density time series".into()));
        }
        for w in slices.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(Error::InvalidParameter("slice times must increase strictly".into()));
            }
            if w[1].grid != w[0].grid {
                return Err(Error::InvalidParameter("slices must share one grid".into()));
            }
        }
        Ok(DensityTimeSeries { slices })
    }

    /// A single slice, used for stationary densities.
    pub fn constant(field: DensityField) -> Self {
        DensityTimeSeries { slices: vec![field] }
    }

    pub fn slices(&self) -> &[DensityField] {
        &self.slices
    }

    pub fn grid(&self) -> &GridSpec {
        self.slices[0].grid()
    }

    pub fn times(&self) -> Vec<f64> {
        self.slices.iter().map(|s| s.t).collect()
    }

    pub fn first(&self) -> &DensityField {
        &self.slices[0]
    }

    pub fn last(&self) -> &DensityField {
        self.slices.last().expect("non-empty")
    }

    pub fn is_constant(&self) -> bool {
        self.slices.len() == 1
    }

    /// Index of the slice nearest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        self.slices
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bd), (i, s)| {
                let d = (s.t - t).abs();
                if d < bd {
                    (i, d)
                } else {
                    (bi, bd)
                }
            })
            .0
    }
}

/// Normalised Gibbs density `c⁻¹ exp(2U/σ²)` on `grid`.
///
/// Fails when more than `1e-3` of the mass sits in the boundary layer (the
/// outermost 1% of each axis, at least one cell), i.e. the grid truncates
/// the law.
pub fn stationary_density(potential: &Potential, sigma: f64, grid: &GridSpec) -> Result<DensityField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
    }
    let coords = grid.coords();
    let log_w: Vec<f64> = coords
        .iter()
        .map(|c| 2.0 * potential.value(c) / (sigma * sigma))
        .collect();
    let top = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(Error::InvalidParameter("potential is not finite on the grid".into()));
    }
    let values: Vec<f64> = log_w.iter().map(|l| (l - top).exp()).collect();
    let field = DensityField::new(grid.clone(), 0.0, values)?.normalized()?;

    let weights = grid.trapezoid_weights();
    let layer: Vec<usize> = (0..grid.dim())
        .map(|a| ((0.01 * (grid.nodes(a) - 1) as f64).ceil() as usize).max(1))
        .collect();
    let edge_mass: f64 = (0..grid.n_nodes())
        .filter(|&n| {
            (0..grid.dim()).any(|a| {
                let i = grid.axis_index(n, a);
                i < layer[a] || i + layer[a] >= grid.nodes(a)
            })
        })
        .map(|n| weights[n] * field.values[n])
        .sum();
    if edge_mass > 1e-3 {
        return Err(Error::GridTooSmall(format!(
            "{edge_mass:.3e} of the stationary mass lies on the grid boundary"
        )));
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_drift;

    #[test]
    fn ou_stationary_is_gaussian() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let grid = GridSpec::cube(1, -4.0, 4.0, 801).unwrap();
        let p = stationary_density(ou.potential().unwrap(), 1.0, &grid).unwrap();
        let exact = |x: f64| (-x * x).exp() / std::f64::consts::PI.sqrt();
        let err = grid
            .coords()
            .iter()
            .zip(p.values())
            .fold(0.0f64, |m, (c, v)| m.max((v - exact(c[0])).abs()));
        assert!(err <= 1e-6, "L∞ error {err}");
    }

    #[test]
    fn repulsive_potential_is_rejected() {
        let f = builtin_drift("custom_linear", &[1.0, 1.0]).unwrap();
        let grid = GridSpec::cube(1, -3.0, 3.0, 601).unwrap();
        assert!(matches!(
            stationary_density(f.potential().unwrap(), 1.0, &grid),
            Err(Error::GridTooSmall(_))
        ));
    }

    #[test]
    fn double_well_is_bimodal() {
        let dw = builtin_drift("double_well", &[]).unwrap();
        let grid = GridSpec::cube(1, -3.0, 3.0, 601).unwrap();
        let p = stationary_density(dw.potential().unwrap(), 1.0, &grid).unwrap();
        let modes = p.local_maxima();
        assert_eq!(modes.len(), 2);
        let h = grid.spacing(0);
        let xs: Vec<f64> = modes.iter().map(|&n| grid.node_coords(n)[0]).collect();
        assert!((xs[0] + 1.0).abs() <= h && (xs[1] - 1.0).abs() <= h, "{xs:?}");
    }

    #[test]
    fn gaussian_field_moments() {
        let grid = GridSpec::cube(2, -5.0, 5.0, 161).unwrap();
        let p = DensityField::gaussian(grid, 0.0, &[0.5, -0.25], &[1.0, 0.3, 0.3, 0.5]).unwrap();
        assert!((p.mass() - 1.0).abs() < 1e-12);
        let m = p.mean();
        let c = p.covariance();
        assert!((m[0] - 0.5).abs() < 1e-4 && (m[1] + 0.25).abs() < 1e-4, "{m:?}");
        for (a, b) in c.iter().zip([1.0, 0.3, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-3, "{c:?}");
        }
    }

    #[test]
    fn time_series_validation() {
        let grid = GridSpec::cube(1, -1.0, 1.0, 32).unwrap();
        let a = DensityField::from_fn(grid.clone(), 0.0, |_| 1.0).unwrap();
        let b = a.clone().with_time(0.5);
        assert!(DensityTimeSeries::new(vec![a.clone(), b.clone()]).is_ok());
        assert!(DensityTimeSeries::new(vec![b, a]).is_err());
        assert!(DensityTimeSeries::new(vec![]).is_err());
    }
}
