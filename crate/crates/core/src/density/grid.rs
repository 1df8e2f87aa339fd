use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform tensor grid in one or two dimensions. Axis 0 varies slowest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    lower: Vec<f64>,
    upper: Vec<f64>,
    nodes: Vec<usize>,
}

impl GridSpec {
    pub const MIN_NODES: usize = 16;

    pub fn new(lower: Vec<f64>, upper: Vec<f64>, nodes: Vec<usize>) -> Result<Self> {
        let d = lower.len();
        if !(1..=2).contains(&d) || upper.len() != d || nodes.len() != d {
            return Err(Error::InvalidParameter(format!(
                "grid must be 1- or 2-dimensional with matching bounds, got {d}"
            )));
        }
        for a in 0..d {
            if !(lower[a].is_finite() && upper[a].is_finite() && upper[a] > lower[a]) {
                return Err(Error::InvalidParameter(format!("axis {a}: need finite lower < upper")));
            }
            if nodes[a] < Self::MIN_NODES {
                return Err(Error::InvalidParameter(format!(
                    "axis {a}: at least {} nodes required, got {}",
                    Self::MIN_NODES,
                    nodes[a]
                )));
            }
        }
        Ok(GridSpec { lower, upper, nodes })
    }

    /// Same bounds and node count on every axis.
    pub fn cube(dim: usize, lower: f64, upper: f64, nodes: usize) -> Result<Self> {
        GridSpec::new(vec![lower; dim], vec![upper; dim], vec![nodes; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.lower[axis]
    }

    pub fn upper(&self, axis: usize) -> f64 {
        self.upper[axis]
    }

    pub fn nodes(&self, axis: usize) -> usize {
        self.nodes[axis]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.nodes[axis] - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Flat-index step between neighbours along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.nodes[axis + 1..].iter().product()
    }

    pub fn axis_index(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.nodes[axis]
    }

    pub fn axis_coord(&self, axis: usize, i: usize) -> f64 {
        self.lower[axis] + i as f64 * self.spacing(axis)
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        (0..self.dim())
            .map(|a| self.axis_coord(a, self.axis_index(node, a)))
            .collect()
    }

    pub fn coords(&self) -> Vec<Vec<f64>> {
        (0..self.n_nodes()).map(|n| self.node_coords(n)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(a, v)| *v >= self.lower[a] && *v <= self.upper[a])
    }

    /// Quadrature weights of the tensor trapezoidal rule.
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|n| {
                (0..self.dim())
                    .map(|a| {
                        let i = self.axis_index(n, a);
                        let h = self.spacing(a);
                        if i == 0 || i + 1 == self.nodes[a] {
                            0.5 * h
                        } else {
                            h
                        }
                    })
                    .product()
            })
            .collect()
    }

    /// Nearest node to `x` (coordinates clamped to the grid).
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        (0..self.dim())
            .map(|a| {
                let f = ((x[a] - self.lower[a]) / self.spacing(a)).round();
                (f.max(0.0) as usize).min(self.nodes[a] - 1) * self.stride(a)
            })
            .sum()
    }

    /// Multilinear interpolation stencil: `(node, weight)` pairs.
    pub fn stencil(&self, x: &[f64]) -> Result<Vec<(usize, f64)>> {
        if x.len() != self.dim() || !self.contains(x) {
            return Err(Error::OutsideGrid { coord: x.to_vec() });
        }
        let mut out = vec![(0usize, 1.0f64)];
        for a in 0..self.dim() {
            let f = (x[a] - self.lower[a]) / self.spacing(a);
            let i = (f.floor() as usize).min(self.nodes[a] - 2);
            let w = f - i as f64;
            let s = self.stride(a);
            out = out
                .into_iter()
                .flat_map(|(n, wt)| [(n + i * s, wt * (1.0 - w)), (n + (i + 1) * s, wt * w)])
                .collect();
        }
        Ok(out)
    }

    /// Number of grid spacings from `node` to the nearest boundary, per axis minimum.
    pub fn distance_to_boundary(&self, node: usize) -> usize {
        (0..self.dim())
            .map(|a| {
                let i = self.axis_index(node, a);
                i.min(self.nodes[a] - 1 - i)
            })
            .min()
            .unwrap_or(0)
    }
}

/// Five-point centred stencil along an axis, if it fits and is fully valid.
fn wide_stencil(node: usize, i: usize, n: usize, s: usize, valid: &[bool]) -> Option<[usize; 5]> {
    if i < 2 || i + 2 >= n {
        return None;
    }
    let idx = [node - 2 * s, node - s, node, node + s, node + 2 * s];
    idx.iter().all(|&k| valid[k]).then_some(idx)
}

/// Derivative along `axis` of a grid function with validity propagation.
///
/// Fourth-order central differences where a five-point stencil of valid nodes
/// fits, second-order central or one-sided formulas otherwise. A node is valid
/// only if it and every node of its stencil are valid.
pub fn grid_derivative(grid: &GridSpec, f: &[f64], valid: &[bool], axis: usize) -> (Vec<f64>, Vec<bool>) {
    let n = grid.nodes(axis);
    let s = grid.stride(axis);
    let h = grid.spacing(axis);
    let mut out = vec![0.0; f.len()];
    let mut ok = vec![false; f.len()];
    for node in 0..f.len() {
        let i = grid.axis_index(node, axis);
        if let Some(k) = wide_stencil(node, i, n, s, valid) {
            out[node] = (f[k[0]] - 8.0 * f[k[1]] + 8.0 * f[k[3]] - f[k[4]]) / (12.0 * h);
            ok[node] = true;
            continue;
        }
        let (idx, coef): ([usize; 3], [f64; 3]) = if i == 0 {
            ([node, node + s, node + 2 * s], [-1.5, 2.0, -0.5])
        } else if i + 1 == n {
            ([node, node - s, node - 2 * s], [1.5, -2.0, 0.5])
        } else {
            ([node - s, node + s, node], [-0.5, 0.5, 0.0])
        };
        if valid[node] && idx.iter().zip(coef).all(|(k, c)| c == 0.0 || valid[*k]) {
            out[node] = idx.iter().zip(coef).map(|(k, c)| c * f[*k]).sum::<f64>() / h;
            ok[node] = true;
        }
    }
    (out, ok)
}

/// Second derivative along `axis`; five-point centred where it fits, else
/// three-point centred, four-point one-sided at the boundary.
pub fn grid_second_derivative(grid: &GridSpec, f: &[f64], valid: &[bool], axis: usize) -> (Vec<f64>, Vec<bool>) {
    let n = grid.nodes(axis);
    let s = grid.stride(axis);
    let h2 = grid.spacing(axis).powi(2);
    let mut out = vec![0.0; f.len()];
    let mut ok = vec![false; f.len()];
    for node in 0..f.len() {
        let i = grid.axis_index(node, axis);
        if let Some(k) = wide_stencil(node, i, n, s, valid) {
            out[node] = (-f[k[0]] + 16.0 * f[k[1]] - 30.0 * f[k[2]] + 16.0 * f[k[3]] - f[k[4]]) / (12.0 * h2);
            ok[node] = true;
            continue;
        }
        let (idx, coef): ([usize; 4], [f64; 4]) = if i == 0 {
            ([node, node + s, node + 2 * s, node + 3 * s], [2.0, -5.0, 4.0, -1.0])
        } else if i + 1 == n {
            ([node, node - s, node - 2 * s, node - 3 * s], [2.0, -5.0, 4.0, -1.0])
        } else {
            ([node - s, node, node + s, node], [1.0, -2.0, 1.0, 0.0])
        };
        if valid[node] && idx.iter().zip(coef).all(|(k, c)| c == 0.0 || valid[*k]) {
            out[node] = idx.iter().zip(coef).map(|(k, c)| c * f[*k]).sum::<f64>() / h2;
            ok[node] = true;
        }
    }
    (out, ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivatives_are_exact_on_quartics() {
        let g = GridSpec::cube(1, -2.0, 2.0, 41).unwrap();
        let f: Vec<f64> = g.coords().iter().map(|c| c[0].powi(4) - c[0]).collect();
        let valid = vec![true; f.len()];
        let (d1, ok1) = grid_derivative(&g, &f, &valid, 0);
        let (d2, ok2) = grid_second_derivative(&g, &f, &valid, 0);
        for node in 2..39 {
            let x = g.node_coords(node)[0];
            assert!(ok1[node] && ok2[node]);
            assert!((d1[node] - (4.0 * x.powi(3) - 1.0)).abs() < 1e-10);
            assert!((d2[node] - 12.0 * x * x).abs() < 1e-9);
        }
        // Next to an invalid node the narrow stencil takes over.
        let mut holes = valid.clone();
        holes[10] = false;
        let (_, ok) = grid_derivative(&g, &f, &holes, 0);
        assert!(ok[8] && ok[12] && !ok[9] && !ok[10] && !ok[11]);
    }

    #[test]
    fn validation() {
        assert!(GridSpec::cube(1, 0.0, 1.0, 15).is_err());
        assert!(GridSpec::cube(1, 1.0, 0.0, 32).is_err());
        assert!(GridSpec::cube(3, 0.0, 1.0, 32).is_err());
        let g = GridSpec::cube(2, -1.0, 1.0, 21).unwrap();
        assert_eq!(g.n_nodes(), 441);
        assert!((g.spacing(0) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn node_layout() {
        let g = GridSpec::new(vec![0.0, 10.0], vec![1.0, 11.0], vec![16, 32]).unwrap();
        assert_eq!(g.stride(0), 32);
        assert_eq!(g.stride(1), 1);
        let c = g.node_coords(33);
        assert!((c[0] - 1.0 / 15.0).abs() < 1e-15 && (c[1] - (10.0 + 1.0 / 31.0)).abs() < 1e-14);
        assert_eq!(g.nearest_node(&c), 33);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = GridSpec::cube(2, -1.0, 2.0, 17).unwrap();
        let w = g.trapezoid_weights();
        let integral: f64 = g
            .coords()
            .iter()
            .zip(&w)
            .map(|(c, w)| (1.0 + c[0] + 2.0 * c[1]) * w)
            .sum();
        // ∫∫ (1 + x + 2y) over [-1,2]² = 9 + 3·1.5 + 2·3·1.5
        assert!((integral - 22.5).abs() < 1e-12);
    }

    #[test]
    fn stencil_interpolates_bilinear_exactly() {
        let g = GridSpec::cube(2, -1.0, 1.0, 16).unwrap();
        let f: Vec<f64> = g.coords().iter().map(|c| 2.0 * c[0] - c[1] + 0.5).collect();
        let x = [0.123, -0.77];
        let v: f64 = g.stencil(&x).unwrap().iter().map(|(n, w)| w * f[*n]).sum();
        assert!((v - (2.0 * 0.123 + 0.77 + 0.5)).abs() < 1e-13);
        assert!(g.stencil(&[1.5, 0.0]).is_err());
    }

    #[test]
    fn derivatives_exact_on_quadratics() {
        let g = GridSpec::cube(1, -2.0, 2.0, 33).unwrap();
        let f: Vec<f64> = g.coords().iter().map(|c| 3.0 * c[0] * c[0] - c[0]).collect();
        let valid = vec![true; f.len()];
        let (d1, ok1) = grid_derivative(&g, &f, &valid, 0);
        let (d2, ok2) = grid_second_derivative(&g, &f, &valid, 0);
        for (k, c) in g.coords().iter().enumerate() {
            assert!(ok1[k] && ok2[k]);
            assert!((d1[k] - (6.0 * c[0] - 1.0)).abs() < 1e-10);
            assert!((d2[k] - 6.0).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_nodes_propagate() {
        let g = GridSpec::cube(1, 0.0, 1.0, 16).unwrap();
        let f = vec![1.0; 16];
        let mut valid = vec![true; 16];
        valid[5] = false;
        let (_, ok) = grid_derivative(&g, &f, &valid, 0);
        assert!(!ok[4] && !ok[6] && !ok[5] && ok[3]);
    }
}
