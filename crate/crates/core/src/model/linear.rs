use nalgebra::DMatrix;

use super::{FieldFn, Potential, ScalarFn, VectorField};

/// `b(x) = A x` with row-major `A`.
#[derive(Debug, Clone)]
pub struct LinearField {
    dim: usize,
    a: Vec<f64>,
}

impl LinearField {
    pub fn new(dim: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), dim * dim, "matrix must be {dim}x{dim}");
        LinearField { dim, a }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| (0..i).all(|j| self.a[i * d + j] == self.a[j * d + i]))
    }

    /// Wraps the map as a [`VectorField`], attaching `U = x^T A x / 2` when `A`
    /// is symmetric and the Gaussian quasi-potential when `A` is stable.
    pub fn into_field(self, descriptor: String) -> VectorField {
        let potential = self
            .is_symmetric()
            .then(|| Potential::new(Quadratic::new(self.dim, self.a.clone(), 0.5)));
        let quasi = lyapunov_unit(self.dim, &self.a).and_then(|sigma1| {
            let m = DMatrix::from_row_slice(self.dim, self.dim, &sigma1);
            let inv = m.try_inverse()?;
            let inv: Vec<f64> = (0..self.dim * self.dim)
                .map(|k| inv[(k / self.dim, k % self.dim)])
                .collect();
            // V = -x^T Σ₁⁻¹ x / 4
            Some(Potential::new(Quadratic::new(self.dim, inv, -0.25)))
        });
        let mut field = VectorField::new(self, descriptor);
        if let Some(u) = potential {
            field = field.with_potential(u);
        }
        // For symmetric stable A the Lyapunov form coincides with U; keep the
        // quadratic one since it is also defined when A is not symmetric.
        if let Some(v) = quasi {
            field = field.with_quasi_potential(v);
        }
        field
    }
}

impl FieldFn for LinearField {
    fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.a[i * d..(i + 1) * d];
            out[i] = row.iter().zip(x).map(|(a, x)| a * x).sum();
        }
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out[..self.a.len()].copy_from_slice(&self.a);
        true
    }

    fn hessian(&self, _x: &[f64], out: &mut [f64]) -> bool {
        out[..self.dim.pow(3)].iter_mut().for_each(|v| *v = 0.0);
        true
    }
}

/// `c · x^T M x`.
struct Quadratic {
    dim: usize,
    m: Vec<f64>,
    c: f64,
}

impl Quadratic {
    fn new(dim: usize, m: Vec<f64>, c: f64) -> Self {
        Quadratic { dim, m, c }
    }
}

impl ScalarFn for Quadratic {
    fn value(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        let mut acc = 0.0;
        for i in 0..d {
            for j in 0..d {
                acc += x[i] * self.m[i * d + j] * x[j];
            }
        }
        self.c * acc
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for k in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += (self.m[k * d + j] + self.m[j * d + k]) * x[j];
            }
            out[k] = self.c * acc;
        }
    }
}

/// Solves `A Σ + Σ A^T + I = 0`.
///
/// Returns `None` unless the solution is symmetric positive definite, which
/// happens exactly when `A` is Hurwitz-stable. The stationary covariance of
/// `dX = AX dt + σ dW` is then `σ² Σ`.
pub fn lyapunov_unit(dim: usize, a: &[f64]) -> Option<Vec<f64>> {
    let d = dim;
    let a = DMatrix::from_row_slice(d, d, a);
    let eye = DMatrix::<f64>::identity(d, d);
    // vec(AΣ + ΣA^T) = (I ⊗ A + A ⊗ I) vec(Σ) for column-major vec.
    let k = eye.kronecker(&a) + a.kronecker(&eye);
    let rhs = -DMatrix::<f64>::identity(d, d);
    let rhs = nalgebra::DVector::from_column_slice(rhs.as_slice());
    let sol = k.lu().solve(&rhs)?;
    let sigma = DMatrix::from_column_slice(d, d, sol.as_slice());
    let sym = (&sigma + sigma.transpose()) * 0.5;
    sym.clone().cholesky()?;
    Some((0..d * d).map(|k| sym[(k / d, k % d)]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lyapunov_rotational_is_half_identity() {
        let s = lyapunov_unit(2, &[-1.0, -1.0, 1.0, -1.0]).unwrap();
        for (a, b) in s.iter().zip([0.5, 0.0, 0.0, 0.5]) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn lyapunov_rejects_unstable() {
        assert!(lyapunov_unit(1, &[1.0]).is_none());
        assert!(lyapunov_unit(2, &[0.0, 1.0, -1.0, 0.0]).is_none());
    }

    #[test]
    fn lyapunov_residual_shear() {
        let a = [-1.0, 2.0, 0.0, -1.0];
        let s = lyapunov_unit(2, &a).unwrap();
        let am = DMatrix::from_row_slice(2, 2, &a);
        let sm = DMatrix::from_row_slice(2, 2, &s);
        let r = &am * &sm + &sm * am.transpose() + DMatrix::<f64>::identity(2, 2);
        assert!(r.amax() < 1e-13);
    }

    #[test]
    fn quasi_potential_of_symmetric_matches_potential() {
        let f = LinearField::new(2, vec![-2.0, 0.5, 0.5, -1.0]).into_field("A".into());
        let u = f.potential().unwrap();
        let v = f.quasi_potential().unwrap();
        for x in [[0.3, -0.7], [1.5, 2.0]] {
            assert!((u.value(&x) - v.value(&x)).abs() < 1e-12);
        }
    }
}
