use serde::{Deserialize, Serialize};

use super::smoothing::{bin_linear, gaussian_smooth};
use super::{DensityField, GridSpec};
use crate::error::{Error, Result};
use crate::simulate::PathEnsemble;

/// Kernel bandwidth per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Silverman's rule on each axis.
    Auto,
    Fixed(Vec<f64>),
}

/// Silverman's rule `(4/(d+2))^{1/(d+4)} σ̂ n^{−1/(d+4)}` per axis.
///
/// An axis with zero sample spread falls back to the grid spacing.
pub fn silverman_bandwidth(points: &[f64], dim: usize, grid: &GridSpec) -> Vec<f64> {
    let n = points.len() / dim;
    let factor = (4.0 / (dim as f64 + 2.0)).powf(1.0 / (dim as f64 + 4.0)) * (n as f64).powf(-1.0 / (dim as f64 + 4.0));
    (0..dim)
        .map(|a| {
            let xs = points.iter().skip(a).step_by(dim);
            let mean = xs.clone().sum::<f64>() / n as f64;
            let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
            let h = factor * var.sqrt();
            if h > 0.0 {
                h
            } else {
                grid.spacing(a)
            }
        })
        .collect()
}

pub(crate) fn resolve_bandwidth(
    bandwidth: &Bandwidth,
    points: &[f64],
    dim: usize,
    grid: &GridSpec,
) -> Result<Vec<f64>> {
    match bandwidth {
        Bandwidth::Auto => Ok(silverman_bandwidth(points, dim, grid)),
        Bandwidth::Fixed(h) => {
            if h.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: h.len(),
                });
            }
            if h.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidParameter("bandwidth must be positive".into()));
            }
            Ok(h.clone())
        }
    }
}

/// Gaussian kernel density estimate of the ensemble marginal at the step
/// nearest to `t`, normalised on `grid`.
pub fn kde(ensemble: &PathEnsemble, t: f64, grid: &GridSpec, bandwidth: &Bandwidth) -> Result<DensityField> {
    if ensemble.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: ensemble.dim(),
        });
    }
    let step = ensemble.step_index(t);
    let points = ensemble.marginal(step);
    kde_points(&points, grid, bandwidth, ensemble.time(step))
}

/// [`kde`] on a flat `n × d` sample.
pub fn kde_points(points: &[f64], grid: &GridSpec, bandwidth: &Bandwidth, t: f64) -> Result<DensityField> {
    let d = grid.dim();
    if points.is_empty() {
        return Err(Error::InsufficientSamples("empty ensemble".into()));
    }
    let h = resolve_bandwidth(bandwidth, points, d, grid)?;
    let ones = vec![1.0; points.len() / d];
    let binned = bin_linear(grid, points, &[&ones]);
    let smooth = gaussian_smooth(grid, &binned[0], &h);
    DensityField::new(grid.clone(), t, smooth)?
        .normalized()
        .map_err(|_| Error::InsufficientSamples("no sample mass falls on the grid".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silverman_matches_formula_in_1d() {
        let pts: Vec<f64> = (0..1000).map(|i| (i as f64 / 999.0) * 2.0 - 1.0).collect();
        let grid = GridSpec::cube(1, -2.0, 2.0, 64).unwrap();
        let h = silverman_bandwidth(&pts, 1, &grid)[0];
        let mean = 0.0;
        let sd = (pts.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 999.0).sqrt();
        assert!((h - 1.0592238410488122 * sd * 1000f64.powf(-0.2)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_sample_uses_spacing() {
        let grid = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        let pts = vec![0.3, -0.2, 0.3, -0.2];
        let h = silverman_bandwidth(&pts, 2, &grid);
        assert_eq!(h, vec![0.1, 0.1]);
        let p = kde_points(&pts, &grid, &Bandwidth::Auto, 0.0).unwrap();
        let x = grid.node_coords(p.mode());
        assert!((x[0] - 0.3).abs() <= 0.1 && (x[1] + 0.2).abs() <= 0.1);
    }

    #[test]
    fn rejects_empty_and_bad_bandwidth() {
        let grid = GridSpec::cube(1, -1.0, 1.0, 21).unwrap();
        assert!(matches!(
            kde_points(&[], &grid, &Bandwidth::Auto, 0.0),
            Err(Error::InsufficientSamples(_))
        ));
        assert!(kde_points(&[0.0], &grid, &Bandwidth::Fixed(vec![-1.0]), 0.0).is_err());
    }
}
