use serde::{Deserialize, Serialize};

use super::{grid_derivative, grid_second_derivative, DensityField, GridSpec};
use crate::error::{Error, Result};

/// `∇log p` on the grid, interleaved per node (`values[node * d + i]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreField {
    grid: GridSpec,
    t: f64,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl ScoreField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn at(&self, node: usize) -> Option<&[f64]> {
        let d = self.grid.dim();
        self.valid[node].then(|| &self.values[node * d..(node + 1) * d])
    }

    /// Multilinear interpolation; fails if any stencil node is invalid.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let d = self.grid.dim();
        out.iter_mut().for_each(|v| *v = 0.0);
        for (node, w) in self.grid.stencil(x)? {
            if w == 0.0 {
                continue;
            }
            if !self.valid[node] {
                return Err(Error::NonPositiveDensity { node });
            }
            for i in 0..d {
                out[i] += w * self.values[node * d + i];
            }
        }
        Ok(())
    }

    /// Component `i` as a flat grid function.
    pub fn component(&self, i: usize) -> Vec<f64> {
        let d = self.grid.dim();
        self.values.iter().skip(i).step_by(d).copied().collect()
    }
}

/// Central-difference gradient of `log p` (one-sided at the boundary).
///
/// Nodes below the positivity floor, and nodes whose stencil touches one, are
/// flagged invalid instead of extrapolated.
pub fn score(density: &DensityField) -> ScoreField {
    let grid = density.grid().clone();
    let d = grid.dim();
    let positive = density.positive_mask();
    let log_p: Vec<f64> = density
        .values()
        .iter()
        .zip(&positive)
        .map(|(p, ok)| if *ok { p.ln() } else { 0.0 })
        .collect();
    let mut values = vec![0.0; grid.n_nodes() * d];
    let mut valid = positive.clone();
    for axis in 0..d {
        let (g, ok) = grid_derivative(&grid, &log_p, &positive, axis);
        for node in 0..grid.n_nodes() {
            values[node * d + axis] = g[node];
            valid[node] &= ok[node];
        }
    }
    ScoreField {
        grid,
        t: density.t(),
        values,
        valid,
    }
}

/// Spatial derivatives of a score field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDerivatives {
    /// `jacobian[node * d * d + i * d + j] = ∂_j s^i`.
    pub jacobian: Vec<f64>,
    /// `laplacian[node * d + i] = Δ s^i`.
    pub laplacian: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScoreDerivatives {
    /// Largest Frobenius norm of the score Jacobian over valid nodes in `mask`.
    pub fn max_jacobian_norm(&self, mask: &[bool]) -> f64 {
        let dd = self.jacobian.len() / self.valid.len();
        (0..self.valid.len())
            .filter(|&n| self.valid[n] && mask[n])
            .map(|n| {
                self.jacobian[n * dd..(n + 1) * dd]
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Largest Frobenius norm of the second derivatives `∂ₖ∂ⱼ sⁱ` over nodes
    /// in `mask` where every stencil is valid, by differencing the Jacobian.
    pub fn max_hessian_norm(&self, grid: &GridSpec, mask: &[bool]) -> f64 {
        let (n, d) = (self.valid.len(), grid.dim());
        let mut sq = vec![0.0; n];
        let mut ok: Vec<bool> = (0..n).map(|m| self.valid[m] && mask[m]).collect();
        for ij in 0..d * d {
            let entry: Vec<f64> = (0..n).map(|m| self.jacobian[m * d * d + ij]).collect();
            for k in 0..d {
                let (g, valid) = grid_derivative(grid, &entry, &self.valid, k);
                for m in 0..n {
                    sq[m] += g[m] * g[m];
                    ok[m] &= valid[m];
                }
            }
        }
        (0..n).filter(|&m| ok[m]).map(|m| sq[m].sqrt()).fold(0.0, f64::max)
    }
}

pub fn score_derivatives(s: &ScoreField) -> ScoreDerivatives {
    let grid = &s.grid;
    let d = grid.dim();
    let n = grid.n_nodes();
    let mut jacobian = vec![0.0; n * d * d];
    let mut laplacian = vec![0.0; n * d];
    let mut valid = s.valid.clone();
    for i in 0..d {
        let comp = s.component(i);
        for j in 0..d {
            let (g, ok) = grid_derivative(grid, &comp, &s.valid, j);
            for node in 0..n {
                jacobian[node * d * d + i * d + j] = g[node];
                valid[node] &= ok[node];
            }
            let (g2, ok2) = grid_second_derivative(grid, &comp, &s.valid, j);
            for node in 0..n {
                laplacian[node * d + i] += g2[node];
                valid[node] &= ok2[node];
            }
        }
    }
    ScoreDerivatives {
        jacobian,
        laplacian,
        valid,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_score_1d() {
        let grid = GridSpec::cube(1, -4.0, 4.0, 512).unwrap();
        let p = DensityField::from_fn(grid.clone(), 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let s = score(&p);
        for node in 0..grid.n_nodes() {
            let x = grid.node_coords(node)[0];
            if x.abs() <= 2.0 {
                assert!((s.at(node).unwrap()[0] + 2.0 * x).abs() <= 1e-3);
            }
        }
    }

    #[test]
    fn gaussian_score_2d_and_derivatives() {
        let grid = GridSpec::cube(2, -3.0, 3.0, 61).unwrap();
        let p = DensityField::from_fn(grid.clone(), 0.0, |x| (-x[0] * x[0] - x[1] * x[1]).exp()).unwrap();
        let s = score(&p);
        let ds = score_derivatives(&s);
        for node in 0..grid.n_nodes() {
            let x = grid.node_coords(node);
            let v = s.at(node).unwrap();
            assert!((v[0] + 2.0 * x[0]).abs() < 1e-9 && (v[1] + 2.0 * x[1]).abs() < 1e-9);
            assert!(ds.valid[node]);
            let j = &ds.jacobian[node * 4..node * 4 + 4];
            for (a, b) in j.iter().zip([-2.0, 0.0, 0.0, -2.0]) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!(ds.laplacian[node * 2].abs() < 1e-6);
        }
        assert!(ds.max_hessian_norm(&grid, &vec![true; grid.n_nodes()]) < 1e-6);
    }

    #[test]
    fn uniform_score_is_zero() {
        let grid = GridSpec::cube(1, 0.0, 1.0, 32).unwrap();
        let p = DensityField::from_fn(grid, 0.0, |_| 1.0).unwrap();
        let s = score(&p);
        assert!(s.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn tails_below_floor_are_flagged() {
        let grid = GridSpec::cube(1, -10.0, 10.0, 201).unwrap();
        let p = DensityField::from_fn(grid.clone(), 0.0, |x| (-x[0] * x[0]).exp()).unwrap();
        let s = score(&p);
        assert!(s.at(0).is_none());
        assert!(s.at(100).is_some());
        let mut out = [0.0];
        assert!(s.interpolate(&[-9.95], &mut out).is_err());
        s.interpolate(&[0.55], &mut out).unwrap();
        assert!((out[0] + 1.1).abs() < 1e-9);
    }
}
