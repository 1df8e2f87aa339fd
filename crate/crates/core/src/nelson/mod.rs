//! Nelson forward and backward derivatives `D₊X`, `D₋X`, their second-order
//! versions and the complex derivative `𝒟 = (D₊+D₋)/2 + i(D₊−D₋)/2`.
//!
//! For `dX = b dt + σ dW` with marginal densities `p_t`:
//!
//! * `D₊X = b` and `D₋X = g := b − σ² ∇log p_t`;
//! * `D±f(X) = ∂ₜf + (∂f) D±X ± (σ²/2) Δf` for smooth `f`.
//!
//! The cross terms `D₊D₋X` and `D₋D₊X` are realised by the composition
//! formula applied to the opposite-direction drift.

mod empirical;
mod second_order;

use serde::{Deserialize, Serialize};

use crate::density::{score, DensityField, GridSpec};
use crate::error::{Error, Result};
use crate::model::DiffusionSpec;

pub use empirical::{empirical_derivative, kernel_regression, EmpiricalDerivative, EmpiricalOptions};
pub use second_order::{analytic_second_order, complex_derivative, second_order_fields, SecondOrderFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Forward => 1.0,
            Direction::Backward => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeKind {
    Dplus,
    Dminus,
    Dplus2,
    Dminus2,
    DplusDminus,
    DminusDplus,
    Dcomplex,
    Dcomplex2,
    /// `D±f` of a test function.
    Composed,
}

impl DerivativeKind {
    pub fn is_complex(self) -> bool {
        matches!(self, DerivativeKind::Dcomplex | DerivativeKind::Dcomplex2)
    }
}

/// Per-node vectors on a grid. Complex kinds store `(re, im)` pairs per
/// component, so `width = 2 · components`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeField {
    kind: DerivativeKind,
    grid: GridSpec,
    t: f64,
    components: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
}

impl DerivativeField {
    pub fn new(
        kind: DerivativeKind,
        grid: GridSpec,
        t: f64,
        components: usize,
        values: Vec<f64>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let width = if kind.is_complex() { 2 * components } else { components };
        if values.len() != grid.n_nodes() * width || mask.len() != grid.n_nodes() {
            return Err(Error::Dimension {
                expected: grid.n_nodes() * width,
                got: values.len(),
            });
        }
        // Masked nodes carry no information; keep them zero so exports are clean.
        let mut values = values;
        for (node, ok) in mask.iter().enumerate() {
            let v = &mut values[node * width..(node + 1) * width];
            if !ok || v.iter().any(|x| !x.is_finite()) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
        }
        let mask = mask
            .iter()
            .enumerate()
            .map(|(n, ok)| *ok && values[n * width..(n + 1) * width].iter().all(|x| x.is_finite()))
            .collect();
        Ok(DerivativeField {
            kind,
            grid,
            t,
            components,
            values,
            mask,
        })
    }

    pub fn kind(&self) -> DerivativeKind {
        self.kind
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Number of reals stored per node.
    pub fn width(&self) -> usize {
        if self.kind.is_complex() {
            2 * self.components
        } else {
            self.components
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn at(&self, node: usize) -> Option<&[f64]> {
        let w = self.width();
        self.mask[node].then(|| &self.values[node * w..(node + 1) * w])
    }

    /// Value at the grid node nearest to `x`.
    pub fn nearest(&self, x: &[f64]) -> Option<&[f64]> {
        self.at(self.grid.nearest_node(x))
    }

    /// Real and imaginary parts of a complex field.
    pub fn split_complex(&self) -> Option<(DerivativeField, DerivativeField)> {
        if !self.kind.is_complex() {
            return None;
        }
        let c = self.components;
        let part = |offset: usize| {
            let values = self
                .values
                .chunks_exact(2 * c)
                .flat_map(|v| (0..c).map(move |i| v[2 * i + offset]))
                .collect();
            DerivativeField {
                kind: DerivativeKind::Composed,
                grid: self.grid.clone(),
                t: self.t,
                components: c,
                values,
                mask: self.mask.clone(),
            }
        };
        Some((part(0), part(1)))
    }

    /// Restricts the mask to `mask`.
    pub fn masked(mut self, mask: &[bool]) -> Self {
        let w = self.width();
        for (node, m) in mask.iter().enumerate() {
            if !m && self.mask[node] {
                self.mask[node] = false;
                self.values[node * w..(node + 1) * w].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        self
    }

    /// `max |v|` over valid nodes and all stored reals.
    pub fn sup_norm(&self) -> f64 {
        let w = self.width();
        (0..self.grid.n_nodes())
            .filter(|&n| self.mask[n])
            .flat_map(|n| self.values[n * w..(n + 1) * w].iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |self − other|` over nodes valid in both.
    pub fn sup_distance(&self, other: &DerivativeField) -> Result<f64> {
        Ok(self.combine(other, |a, b| a - b)?.sup_norm())
    }

    /// Node-wise `f(self, other)` on the common mask.
    pub fn combine(&self, other: &DerivativeField, f: impl Fn(f64, f64) -> f64) -> Result<DerivativeField> {
        if self.grid != other.grid || self.width() != other.width() {
            return Err(Error::InvalidParameter("fields have different layouts".into()));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect();
        let mask = self.mask.iter().zip(&other.mask).map(|(a, b)| *a && *b).collect();
        DerivativeField::new(
            DerivativeKind::Composed,
            self.grid.clone(),
            self.t,
            self.components,
            values,
            mask,
        )
    }

    /// Fraction of `reference` nodes that are valid here.
    pub fn coverage(&self, reference: &[bool]) -> f64 {
        let total = reference.iter().filter(|m| **m).count();
        if total == 0 {
            return 0.0;
        }
        let hit = reference.iter().zip(&self.mask).filter(|(r, m)| **r && **m).count();
        hit as f64 / total as f64
    }
}

/// `D₊X = b` at every node.
pub fn analytic_forward(spec: &DiffusionSpec, grid: &GridSpec) -> Result<DerivativeField> {
    check_dim(spec, grid)?;
    let d = spec.dim();
    let mut values = vec![0.0; grid.n_nodes() * d];
    for (node, out) in values.chunks_exact_mut(d).enumerate() {
        spec.drift.eval(&grid.node_coords(node), out);
    }
    DerivativeField::new(
        DerivativeKind::Dplus,
        grid.clone(),
        0.0,
        d,
        values,
        vec![true; grid.n_nodes()],
    )
}

/// `D₋X = b − σ² ∇log p` on the bulk of `density`.
pub fn analytic_backward(spec: &DiffusionSpec, density: &DensityField) -> Result<DerivativeField> {
    spec.require_positive_sigma()?;
    let grid = density.grid();
    check_dim(spec, grid)?;
    let d = spec.dim();
    let s = score(density);
    let bulk = density.bulk_mask();
    let s2 = spec.sigma * spec.sigma;
    let mut values = vec![0.0; grid.n_nodes() * d];
    let mut mask = vec![false; grid.n_nodes()];
    for (node, out) in values.chunks_exact_mut(d).enumerate() {
        let Some(sc) = s.at(node).filter(|_| bulk[node]) else {
            continue;
        };
        spec.drift.eval(&grid.node_coords(node), out);
        for a in 0..d {
            out[a] -= s2 * sc[a];
        }
        mask[node] = true;
    }
    if !mask.iter().any(|m| *m) {
        return Err(Error::NonPositiveDensity { node: 0 });
    }
    DerivativeField::new(DerivativeKind::Dminus, grid.clone(), density.t(), d, values, mask)
}

fn check_dim(spec: &DiffusionSpec, grid: &GridSpec) -> Result<()> {
    if spec.dim() != grid.dim() {
        return Err(Error::Dimension {
            expected: grid.dim(),
            got: spec.dim(),
        });
    }
    Ok(())
}

/// A time-homogeneous test function `f: R^d → R^m` with first and second derivatives.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn out_dim(&self) -> usize;
    /// Row-major `m × d`, `out[k * d + j] = ∂_j f^k`.
    fn jacobian(&self, x: &[f64], out: &mut [f64]);
    fn laplacian(&self, x: &[f64], out: &mut [f64]);
}

/// `f(x) = x`.
#[derive(Debug, Clone, Copy)]
pub struct Identity(pub usize);

impl TestFunction for Identity {
    fn dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        self.0
    }
    fn jacobian(&self, _x: &[f64], out: &mut [f64]) {
        let d = self.0;
        for k in 0..d {
            for j in 0..d {
                out[k * d + j] = if k == j { 1.0 } else { 0.0 };
            }
        }
    }
    fn laplacian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// `f(x) = |x|²`.
#[derive(Debug, Clone, Copy)]
pub struct SquaredNorm(pub usize);

impl TestFunction for SquaredNorm {
    fn dim(&self) -> usize {
        self.0
    }
    fn out_dim(&self) -> usize {
        1
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }
    fn laplacian(&self, _x: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * self.0 as f64;
    }
}

/// Either the drift of `D₊X` (the field `b`) or of `D₋X` (needs a density).
pub fn compose(
    f: &dyn TestFunction,
    spec: &DiffusionSpec,
    grid: &GridSpec,
    density: Option<&DensityField>,
    direction: Direction,
) -> Result<DerivativeField> {
    if f.dim() != spec.dim() {
        return Err(Error::Dimension {
            expected: spec.dim(),
            got: f.dim(),
        });
    }
    let velocity = match direction {
        Direction::Forward => analytic_forward(spec, grid)?,
        Direction::Backward => {
            let density = density.ok_or_else(|| Error::Missing("density for backward composition".into()))?;
            if density.grid() != grid {
                return Err(Error::InvalidParameter("density must live on the target grid".into()));
            }
            analytic_backward(spec, density)?
        }
    };
    let d = spec.dim();
    let m = f.out_dim();
    let half = 0.5 * spec.sigma * spec.sigma * direction.sign();
    let mut jac = vec![0.0; m * d];
    let mut lap = vec![0.0; m];
    let mut values = vec![0.0; grid.n_nodes() * m];
    for node in 0..grid.n_nodes() {
        let Some(v) = velocity.at(node) else {
            continue;
        };
        let x = grid.node_coords(node);
        f.jacobian(&x, &mut jac);
        f.laplacian(&x, &mut lap);
        for k in 0..m {
            let row = &jac[k * d..(k + 1) * d];
            let drift: f64 = row.iter().zip(v).map(|(j, v)| j * v).sum();
            values[node * m + k] = if lap[k] == 0.0 { drift } else { drift + half * lap[k] };
        }
    }
    DerivativeField::new(
        DerivativeKind::Composed,
        grid.clone(),
        velocity.t(),
        m,
        values,
        velocity.mask().to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::stationary_density;
    use crate::model::{builtin_drift, InitialLaw};

    fn stationary(name: &str, params: &[f64], grid: &GridSpec) -> (DiffusionSpec, DensityField) {
        let drift = builtin_drift(name, params).unwrap();
        let p = stationary_density(drift.quasi_potential().unwrap(), 1.0, grid).unwrap();
        let spec = DiffusionSpec::new(drift, 1.0, InitialLaw::Grid(p.clone()), 1.0).unwrap();
        (spec, p)
    }

    #[test]
    fn forward_equals_drift() {
        let grid = GridSpec::cube(2, -2.0, 2.0, 41).unwrap();
        let spec = DiffusionSpec::new(
            builtin_drift("rotational_linear", &[]).unwrap(),
            1.0,
            InitialLaw::PointMass(vec![0.0, 0.0]),
            1.0,
        )
        .unwrap();
        let f = analytic_forward(&spec, &grid).unwrap();
        assert_eq!(f.nearest(&[1.0, 1.0]).unwrap(), &[-2.0, 0.0]);
    }

    #[test]
    fn backward_of_stationary_ou_reverses_sign() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
        let (spec, p) = stationary("ou", &[1.0], &grid);
        let back = analytic_backward(&spec, &p).unwrap();
        for node in 0..grid.n_nodes() {
            if let Some(v) = back.at(node) {
                let x = grid.node_coords(node)[0];
                assert!((v[0] - x).abs() < 1e-9, "{x} {v:?}");
            }
        }
    }

    #[test]
    fn composition_examples() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
        let (spec, p) = stationary("ou", &[1.0], &grid);
        let fwd = compose(&SquaredNorm(1), &spec, &grid, None, Direction::Forward).unwrap();
        let bwd = compose(&SquaredNorm(1), &spec, &grid, Some(&p), Direction::Backward).unwrap();
        for node in (0..grid.n_nodes()).step_by(50) {
            let x = grid.node_coords(node)[0];
            assert!((fwd.at(node).unwrap()[0] - (1.0 - 2.0 * x * x)).abs() < 1e-12);
            if let Some(v) = bwd.at(node) {
                assert!((v[0] - (2.0 * x * x - 1.0)).abs() < 1e-8);
            }
        }
        assert!(matches!(
            compose(&Identity(1), &spec, &grid, None, Direction::Backward),
            Err(Error::Missing(_))
        ));
    }

    #[test]
    fn identity_composition_reproduces_first_order() {
        let grid = GridSpec::cube(2, -3.0, 3.0, 61).unwrap();
        let (spec, p) = stationary("rotational_linear", &[], &grid);
        let f = compose(&Identity(2), &spec, &grid, None, Direction::Forward).unwrap();
        assert_eq!(f.values(), analytic_forward(&spec, &grid).unwrap().values());
        let b = compose(&Identity(2), &spec, &grid, Some(&p), Direction::Backward).unwrap();
        let a = analytic_backward(&spec, &p).unwrap();
        assert_eq!(b.values(), a.values());
        assert_eq!(b.mask(), a.mask());
        let v = a.nearest(&[1.0, 1.0]).unwrap();
        assert!((v[0] - 0.0).abs() < 1e-9 && (v[1] - 2.0).abs() < 1e-9);
    }
}
