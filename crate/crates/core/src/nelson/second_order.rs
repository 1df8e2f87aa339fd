use super::{DerivativeField, DerivativeKind};
use crate::density::{score, score_derivatives, DensityTimeSeries, GridSpec, ScoreField};
use crate::error::{Error, Result};
use crate::model::DiffusionSpec;

/// A drift-like field with its derivatives at one node, and the sign of the
/// diffusion term of the Nelson operator it generates.
struct NodeField<'a> {
    value: &'a [f64],
    jac: &'a [f64],
    lap: &'a [f64],
    dt: &'a [f64],
    sign: f64,
}

/// `∂ₜF + (∂F) v ± (σ²/2) ΔF`: the derivative of `F` under the operator of `op`.
fn cross(f: &NodeField, op: &NodeField, half_s2: f64, out: &mut [f64]) {
    let d = f.value.len();
    for i in 0..d {
        let transport: f64 = (0..d).map(|j| f.jac[i * d + j] * op.value[j]).sum();
        out[i] = f.dt[i] + transport + op.sign * half_s2 * f.lap[i];
    }
}

/// `b`, `g = b − σ²∇log p_t` and their derivatives on the bulk of `p_t`.
#[derive(Debug, Clone)]
pub struct SecondOrderFields {
    grid: GridSpec,
    t: f64,
    d: usize,
    sigma: f64,
    b: Vec<f64>,
    jb: Vec<f64>,
    lapb: Vec<f64>,
    g: Vec<f64>,
    jg: Vec<f64>,
    lapg: Vec<f64>,
    /// `∂ₜb`, zero for time-homogeneous drifts.
    bt: Vec<f64>,
    gt: Vec<f64>,
    score: ScoreField,
    score_jacobian_norm: f64,
    score_hessian_norm: f64,
    mask: Vec<bool>,
}

/// Evaluates the ingredients of all second-order derivatives at time `t`.
///
/// A single-slice series is treated as stationary. Otherwise `t` must be a
/// slice time and `∂ₜg = −σ² ∂ₜ∇log p` is taken by centred differences over
/// adjacent slices (one-sided at the ends).
pub fn second_order_fields(spec: &DiffusionSpec, density: &DensityTimeSeries, t: f64) -> Result<SecondOrderFields> {
    spec.require_positive_sigma()?;
    let grid = density.grid().clone();
    let d = grid.dim();
    if spec.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: spec.dim(),
        });
    }
    let k = density.nearest(t);
    let times = density.times();
    let slice = &density.slices()[k];
    if !density.is_constant() {
        let spacing = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if (times[k] - t).abs() > 1e-6 * spacing {
            return Err(Error::OffGrid { t, dt: spacing });
        }
    }
    let s = score(slice);
    let ds = score_derivatives(&s);
    let n = grid.n_nodes();
    let s2 = spec.sigma * spec.sigma;
    let bulk = slice.bulk_mask();
    let mut mask: Vec<bool> = (0..n).map(|i| bulk[i] && ds.valid[i]).collect();

    let mut gt = vec![0.0; n * d];
    if !density.is_constant() {
        let (lo, hi) = (k.saturating_sub(1), (k + 1).min(times.len() - 1));
        let (s_lo, s_hi) = (score(&density.slices()[lo]), score(&density.slices()[hi]));
        let span = times[hi] - times[lo];
        for node in 0..n {
            match (s_lo.at(node), s_hi.at(node)) {
                (Some(a), Some(b)) => {
                    for i in 0..d {
                        gt[node * d + i] = -s2 * (b[i] - a[i]) / span;
                    }
                }
                _ => mask[node] = false,
            }
        }
    }

    let mut b = vec![0.0; n * d];
    let mut jb = vec![0.0; n * d * d];
    let mut lapb = vec![0.0; n * d];
    for node in 0..n {
        let x = grid.node_coords(node);
        spec.drift.eval(&x, &mut b[node * d..(node + 1) * d]);
        spec.drift.jacobian(&x, &mut jb[node * d * d..(node + 1) * d * d]);
        spec.drift.laplacian(&x, &mut lapb[node * d..(node + 1) * d]);
    }
    let g: Vec<f64> = (0..n * d).map(|k| b[k] - s2 * s.values()[k]).collect();
    let jg: Vec<f64> = (0..n * d * d).map(|k| jb[k] - s2 * ds.jacobian[k]).collect();
    let lapg: Vec<f64> = (0..n * d).map(|k| lapb[k] - s2 * ds.laplacian[k]).collect();
    let score_jacobian_norm = ds.max_jacobian_norm(&mask);
    let score_hessian_norm = ds.max_hessian_norm(&grid, &mask);

    if !mask.iter().any(|m| *m) {
        return Err(Error::NonPositiveDensity { node: 0 });
    }
    Ok(SecondOrderFields {
        grid,
        t: slice.t(),
        d,
        sigma: spec.sigma,
        b,
        jb,
        lapb,
        g,
        jg,
        lapg,
        bt: vec![0.0; n * d],
        gt,
        score: s,
        score_jacobian_norm,
        score_hessian_norm,
        mask,
    })
}

impl SecondOrderFields {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn score(&self) -> &ScoreField {
        &self.score
    }

    /// Largest Frobenius norm of `∂∇log p` on the bulk (a regularity diagnostic).
    pub fn score_jacobian_norm(&self) -> f64 {
        self.score_jacobian_norm
    }

    /// Largest norm of the second derivatives of `∇log p` on the bulk.
    pub fn score_hessian_norm(&self) -> f64 {
        self.score_hessian_norm
    }

    fn forward(&self, node: usize) -> NodeField<'_> {
        let (d, r) = (self.d, node * self.d..(node + 1) * self.d);
        NodeField {
            value: &self.b[r.clone()],
            jac: &self.jb[node * d * d..(node + 1) * d * d],
            lap: &self.lapb[r.clone()],
            dt: &self.bt[r],
            sign: 1.0,
        }
    }

    fn backward(&self, node: usize) -> NodeField<'_> {
        let (d, r) = (self.d, node * self.d..(node + 1) * self.d);
        NodeField {
            value: &self.g[r.clone()],
            jac: &self.jg[node * d * d..(node + 1) * d * d],
            lap: &self.lapg[r.clone()],
            dt: &self.gt[r],
            sign: -1.0,
        }
    }

    fn build(&self, kind: DerivativeKind, width: usize, f: impl Fn(usize, &mut [f64])) -> DerivativeField {
        let n = self.grid.n_nodes();
        let mut values = vec![0.0; n * width];
        for node in 0..n {
            if self.mask[node] {
                f(node, &mut values[node * width..(node + 1) * width]);
            }
        }
        DerivativeField::new(kind, self.grid.clone(), self.t, self.d, values, self.mask.clone())
            .expect("layout matches grid")
    }

    fn half_s2(&self) -> f64 {
        0.5 * self.sigma * self.sigma
    }

    /// `D₊²X = ∂ₜb + (∂b) b + (σ²/2) Δb`.
    pub fn dplus2(&self) -> DerivativeField {
        self.build(DerivativeKind::Dplus2, self.d, |n, out| {
            cross(&self.forward(n), &self.forward(n), self.half_s2(), out)
        })
    }

    /// `D₋²X = ∂ₜg + (∂g) g − (σ²/2) Δg`.
    pub fn dminus2(&self) -> DerivativeField {
        self.build(DerivativeKind::Dminus2, self.d, |n, out| {
            cross(&self.backward(n), &self.backward(n), self.half_s2(), out)
        })
    }

    /// `D₊D₋X = ∂ₜg + (∂g) b + (σ²/2) Δg`.
    pub fn dplus_dminus(&self) -> DerivativeField {
        self.build(DerivativeKind::DplusDminus, self.d, |n, out| {
            cross(&self.backward(n), &self.forward(n), self.half_s2(), out)
        })
    }

    /// `D₋D₊X = ∂ₜb + (∂b) g − (σ²/2) Δb`.
    pub fn dminus_dplus(&self) -> DerivativeField {
        self.build(DerivativeKind::DminusDplus, self.d, |n, out| {
            cross(&self.forward(n), &self.backward(n), self.half_s2(), out)
        })
    }

    /// `(D₊D₋X + D₋D₊X)/2`, written symmetrically in the two drifts.
    fn mean_acceleration(&self, p: &NodeField, q: &NodeField, out: &mut [f64]) {
        let d = self.d;
        let (mut pq, mut qp) = (vec![0.0; d], vec![0.0; d]);
        cross(p, q, self.half_s2(), &mut pq);
        cross(q, p, self.half_s2(), &mut qp);
        for i in 0..d {
            out[i] = 0.5 * (pq[i] + qp[i]);
        }
    }

    /// Real part of `𝒟²X` computed with the roles of `b` and `g` as given,
    /// exposed so that the symmetry in the two drifts can be checked.
    pub fn mean_acceleration_field(&self, swap: bool) -> DerivativeField {
        self.build(DerivativeKind::Composed, self.d, |n, out| {
            let (f, b) = (self.forward(n), self.backward(n));
            if swap {
                self.mean_acceleration(&b, &f, out)
            } else {
                self.mean_acceleration(&f, &b, out)
            }
        })
    }

    /// `𝒟X` (order 1) or `𝒟²X` (order 2) as `(re, im)` pairs.
    pub fn complex(&self, order: u8) -> Result<DerivativeField> {
        let d = self.d;
        match order {
            1 => Ok(self.build(DerivativeKind::Dcomplex, 2 * d, |n, out| {
                let (f, b) = (self.forward(n), self.backward(n));
                for i in 0..d {
                    out[2 * i] = 0.5 * (f.value[i] + b.value[i]);
                    out[2 * i + 1] = 0.5 * (f.value[i] - b.value[i]);
                }
            })),
            2 => Ok(self.build(DerivativeKind::Dcomplex2, 2 * d, |n, out| {
                let (f, b) = (self.forward(n), self.backward(n));
                let (mut re, mut p2, mut m2) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
                self.mean_acceleration(&f, &b, &mut re);
                cross(&f, &f, self.half_s2(), &mut p2);
                cross(&b, &b, self.half_s2(), &mut m2);
                for i in 0..d {
                    out[2 * i] = re[i];
                    out[2 * i + 1] = 0.5 * (p2[i] - m2[i]);
                }
            })),
            _ => Err(Error::InvalidParameter(format!("order must be 1 or 2, got {order}"))),
        }
    }
}

/// `(D₊²X, D₋²X)` at time `t` on the bulk of `p_t`.
pub fn analytic_second_order(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    t: f64,
) -> Result<(DerivativeField, DerivativeField)> {
    let f = second_order_fields(spec, density, t)?;
    Ok((f.dplus2(), f.dminus2()))
}

pub fn complex_derivative(
    spec: &DiffusionSpec,
    density: &DensityTimeSeries,
    t: f64,
    order: u8,
) -> Result<DerivativeField> {
    second_order_fields(spec, density, t)?.complex(order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{stationary_density, DensityField};
    use crate::model::{builtin_drift, InitialLaw};

    fn stationary(name: &str, params: &[f64], grid: &GridSpec, sigma: f64) -> (DiffusionSpec, DensityTimeSeries) {
        let drift = builtin_drift(name, params).unwrap();
        let p = stationary_density(drift.quasi_potential().unwrap(), sigma, grid).unwrap();
        let spec = DiffusionSpec::new(drift, sigma, InitialLaw::Grid(p.clone()), 1.0).unwrap();
        (spec, DensityTimeSeries::constant(p))
    }

    #[test]
    fn ou_second_order_fields_coincide() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
        let (spec, p) = stationary("ou", &[1.0], &grid, 1.0);
        let (p2, m2) = analytic_second_order(&spec, &p, 0.0).unwrap();
        for node in 0..grid.n_nodes() {
            if let (Some(a), Some(b)) = (p2.at(node), m2.at(node)) {
                let x = grid.node_coords(node)[0];
                assert!((a[0] - x).abs() < 1e-9 && (b[0] - x).abs() < 1e-6, "{x}: {a:?} {b:?}");
            }
        }
    }

    #[test]
    fn rotational_closed_forms() {
        let grid = GridSpec::cube(2, -3.0, 3.0, 61).unwrap();
        let (spec, p) = stationary("rotational_linear", &[], &grid, 1.0);
        let (p2, m2) = analytic_second_order(&spec, &p, 0.0).unwrap();
        let a = p2.nearest(&[1.0, 1.0]).unwrap();
        let b = m2.nearest(&[1.0, 1.0]).unwrap();
        assert!((a[0] - 2.0).abs() < 1e-9 && (a[1] + 2.0).abs() < 1e-9, "{a:?}");
        assert!((b[0] + 2.0).abs() < 1e-6 && (b[1] - 2.0).abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn complex_first_order_of_stationary_ou() {
        let grid = GridSpec::cube(1, -5.0, 5.0, 1001).unwrap();
        let (spec, p) = stationary("ou", &[1.0], &grid, 1.0);
        let c = complex_derivative(&spec, &p, 0.0, 1).unwrap();
        let v = c.nearest(&[0.7]).unwrap();
        assert!(v[0].abs() < 1e-9 && (v[1] + 0.7).abs() < 1e-9, "{v:?}");
        assert!(complex_derivative(&spec, &p, 0.0, 3).is_err());
    }

    #[test]
    fn mean_acceleration_is_symmetric() {
        let grid = GridSpec::cube(2, -3.0, 3.0, 41).unwrap();
        let (spec, p) = stationary("swirl", &[0.5, 1.5], &grid, 0.8);
        let f = second_order_fields(&spec, &p, 0.0).unwrap();
        assert_eq!(
            f.mean_acceleration_field(false).values(),
            f.mean_acceleration_field(true).values()
        );
        let re = f.complex(2).unwrap().split_complex().unwrap().0;
        assert_eq!(re.values(), f.mean_acceleration_field(false).values());
    }

    #[test]
    fn nonstationary_requires_slice_time() {
        let grid = GridSpec::cube(1, -4.0, 4.0, 201).unwrap();
        let slices: Vec<DensityField> = [0.5, 0.6, 0.7]
            .iter()
            .map(|&t| DensityField::gaussian(grid.clone(), t, &[0.0], &[t]).unwrap())
            .collect();
        let series = DensityTimeSeries::new(slices).unwrap();
        let spec = DiffusionSpec::new(
            crate::model::VectorField::zero(1),
            1.0,
            InitialLaw::PointMass(vec![0.0]),
            1.0,
        )
        .unwrap();
        assert!(matches!(
            second_order_fields(&spec, &series, 0.55),
            Err(Error::OffGrid { .. })
        ));
        // Heat flow: g = x/t, ∂ₜg = −x/t², D₋²X = −x/t² + x/t² = 0.
        let (_, m2) = analytic_second_order(&spec, &series, 0.6).unwrap();
        let v = m2.nearest(&[0.5]).unwrap()[0];
        assert!(v.abs() < 5e-2, "{v}");
    }
}
