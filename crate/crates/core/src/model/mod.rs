//! Drift fields, diffusion specifications and the antisymmetric part of the
//! drift Jacobian.
//!
//! Conventions used throughout the crate:
//!
//! * Jacobians are row-major with `jac[i * d + j] = ∂_j b^i`.
//! * Hessians are stored as `hess[(i * d + j) * d + k] = ∂_j ∂_k b^i`.
//! * The antisymmetric part is stored row-wise, `g[i * d + j] = G_i^j = ∂_i b^j - ∂_j b^i`,
//!   so that row `i` is the vector field `G_i` entering `div(p G_i)`.

mod families;
mod linear;
mod sampling;

use std::fmt;
use std::sync::Arc;

use crate::density::DensityField;
use crate::error::{Error, Result};

pub use families::{builtin_drift, DriftFamily, DriftRegistry};
pub use linear::{lyapunov_unit, LinearField};
pub use sampling::InitialSampler;

/// Pointwise evaluation of a drift `b: R^d -> R^d`.
///
/// Only `dim` and `eval` are mandatory. Implementations that know their
/// derivatives return `true` from `jacobian`/`hessian` after filling `out`;
/// the default implementations report that no analytic form is available.
pub trait FieldFn: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    fn jacobian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
    fn hessian(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// A scalar function with its gradient, used for potentials `U` with `b = ∇U`.
pub trait ScalarFn: Send + Sync {
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
}

#[derive(Clone)]
pub struct Potential(Arc<dyn ScalarFn>);

impl Potential {
    pub fn new(f: impl ScalarFn + 'static) -> Self {
        Potential(Arc::new(f))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.0.value(x)
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.0.gradient(x, out)
    }
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Potential(..)")
    }
}

struct ScaledPotential {
    inner: Potential,
    c: f64,
}

impl ScalarFn for ScaledPotential {
    fn value(&self, x: &[f64]) -> f64 {
        self.c * self.inner.value(x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.inner.gradient(x, out);
        out.iter_mut().for_each(|v| *v *= self.c);
    }
}

/// How the Jacobian of a field is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JacobianSource {
    Exact,
    /// Central differences with step `1e-5 * max(1, |x|)`.
    FiniteDifference,
}

/// A time-homogeneous drift field.
///
/// `potential` is attached only when `b = ∇U` exactly. `quasi_potential` is a
/// function `V` whose Gibbs weight `exp(2V/σ²)` is invariant for every `σ`; it
/// equals `U` for gradient fields and is also known for stable linear fields
/// and for radial gradients perturbed by a rotation.
#[derive(Clone)]
pub struct VectorField {
    inner: Arc<dyn FieldFn>,
    descriptor: String,
    potential: Option<Potential>,
    quasi_potential: Option<Potential>,
    scale: f64,
}

impl fmt::Debug for VectorField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorField")
            .field("descriptor", &self.descriptor)
            .field("dim", &self.dim())
            .field("potential", &self.potential.is_some())
            .finish()
    }
}

impl VectorField {
    pub fn new(inner: impl FieldFn + 'static, descriptor: impl Into<String>) -> Self {
        VectorField {
            inner: Arc::new(inner),
            descriptor: descriptor.into(),
            potential: None,
            quasi_potential: None,
            scale: 1.0,
        }
    }

    /// A field given only by its values; derivatives fall back to finite differences.
    pub fn from_fn<F>(dim: usize, descriptor: impl Into<String>, f: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        struct Closure<F> {
            dim: usize,
            f: F,
        }
        impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FieldFn for Closure<F> {
            fn dim(&self) -> usize {
                self.dim
            }
            fn eval(&self, x: &[f64], out: &mut [f64]) {
                (self.f)(x, out)
            }
        }
        VectorField::new(Closure { dim, f }, descriptor)
    }

    /// The zero drift in dimension `dim`.
    pub fn zero(dim: usize) -> Self {
        LinearField::new(dim, vec![0.0; dim * dim]).into_field(format!("zero(d={dim})"))
    }

    pub fn with_potential(mut self, u: Potential) -> Self {
        self.quasi_potential.get_or_insert_with(|| u.clone());
        self.potential = Some(u);
        self
    }

    pub fn with_quasi_potential(mut self, v: Potential) -> Self {
        self.quasi_potential = Some(v);
        self
    }

    /// `c·b`; the potential (if any) is rescaled along with the field.
    ///
    /// The quasi-potential is dropped unless the field is a gradient, since
    /// rescaling a rotational part changes the invariant law.
    pub fn scaled(&self, c: f64) -> Self {
        let scale_potential = |p: &Potential| Potential::new(ScaledPotential { inner: p.clone(), c });
        let potential = self.potential.as_ref().map(scale_potential);
        VectorField {
            inner: self.inner.clone(),
            descriptor: format!("{}*{}", c, self.descriptor),
            quasi_potential: potential.clone(),
            potential,
            scale: self.scale * c,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim()
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn potential(&self) -> Option<&Potential> {
        self.potential.as_ref()
    }

    pub fn quasi_potential(&self) -> Option<&Potential> {
        self.quasi_potential.as_ref()
    }

    #[inline]
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        self.inner.eval(x, out);
        if self.scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(x, &mut out);
        out
    }

    pub fn jacobian_source(&self) -> JacobianSource {
        let d = self.dim();
        let mut probe = vec![0.0; d * d];
        if self.inner.jacobian(&vec![0.0; d], &mut probe) {
            JacobianSource::Exact
        } else {
            JacobianSource::FiniteDifference
        }
    }

    /// Row-major Jacobian `out[i*d + j] = ∂_j b^i`.
    pub fn jacobian(&self, x: &[f64], out: &mut [f64]) {
        if !self.inner.jacobian(x, out) {
            self.fd_jacobian(x, out);
            return;
        }
        if self.scale != 1.0 {
            out.iter_mut().for_each(|v| *v *= self.scale);
        }
    }

    pub fn jacobian_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.jacobian(x, &mut out);
        out
    }

    /// Central finite-difference Jacobian with step `1e-5 * max(1, |x|)`.
    pub fn fd_jacobian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let step = 1e-5 * norm(x).max(1.0);
        let mut xp = x.to_vec();
        let mut fp = vec![0.0; d];
        let mut fm = vec![0.0; d];
        for j in 0..d {
            xp[j] = x[j] + step;
            self.eval(&xp, &mut fp);
            xp[j] = x[j] - step;
            self.eval(&xp, &mut fm);
            xp[j] = x[j];
            for i in 0..d {
                out[i * d + j] = (fp[i] - fm[i]) / (2.0 * step);
            }
        }
    }

    /// Second derivatives `out[(i*d + j)*d + k] = ∂_j ∂_k b^i`.
    pub fn hessian(&self, x: &[f64], out: &mut [f64]) {
        if self.inner.hessian(x, out) {
            if self.scale != 1.0 {
                out.iter_mut().for_each(|v| *v *= self.scale);
            }
            return;
        }
        let d = self.dim();
        let step = 1e-4 * norm(x).max(1.0);
        let mut xp = x.to_vec();
        let mut jp = vec![0.0; d * d];
        let mut jm = vec![0.0; d * d];
        for k in 0..d {
            xp[k] = x[k] + step;
            self.jacobian(&xp, &mut jp);
            xp[k] = x[k] - step;
            self.jacobian(&xp, &mut jm);
            xp[k] = x[k];
            for i in 0..d {
                for j in 0..d {
                    out[(i * d + j) * d + k] = (jp[i * d + j] - jm[i * d + j]) / (2.0 * step);
                }
            }
        }
    }

    /// Componentwise Laplacian `(Δb^i)_i`.
    pub fn laplacian(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut h = vec![0.0; d * d * d];
        self.hessian(x, &mut h);
        for i in 0..d {
            out[i] = (0..d).map(|j| h[(i * d + j) * d + j]).sum();
        }
    }
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `G = (∂b)^T - (∂b)` of a drift, row `i` being the field `G_i`.
#[derive(Debug, Clone)]
pub struct AntisymmetricPart {
    field: VectorField,
}

pub fn antisymmetric_part(field: &VectorField) -> AntisymmetricPart {
    AntisymmetricPart { field: field.clone() }
}

impl AntisymmetricPart {
    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    /// Row-major `out[i*d + j] = G_i^j = ∂_i b^j - ∂_j b^i`.
    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let jac = self.field.jacobian_vec(x);
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = jac[j * d + i] - jac[i * d + j];
            }
        }
    }

    pub fn eval_vec(&self, x: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.eval(x, &mut out);
        out
    }

    /// `(div G_i)_i` with `div G_i = Σ_j ∂_j G_i^j = ∂_i div b - Δb^i`.
    pub fn divergence(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim();
        let mut h = vec![0.0; d * d * d];
        self.field.hessian(x, &mut h);
        for i in 0..d {
            out[i] = (0..d).map(|j| h[(j * d + j) * d + i] - h[(i * d + j) * d + j]).sum();
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StaticVerdict {
    Gradient,
    NonGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticTest {
    pub verdict: StaticVerdict,
    /// `max_x ||G(x)||_∞` over the probes.
    pub max_residual: f64,
}

/// Curl test: `b` is declared a gradient iff `max ||G||_∞ <= tol` over `probes`.
pub fn gradient_test_static(field: &VectorField, probes: &[Vec<f64>], tol: f64) -> Result<StaticTest> {
    if probes.is_empty() {
        return Err(Error::InvalidParameter("probe set is empty".into()));
    }
    let g = antisymmetric_part(field);
    let d = field.dim();
    let mut buf = vec![0.0; d * d];
    let mut max_residual: f64 = 0.0;
    for p in probes {
        if p.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("non-finite probe".into()));
        }
        g.eval(p, &mut buf);
        max_residual = buf.iter().fold(max_residual, |m, v| m.max(v.abs()));
    }
    let verdict = if max_residual <= tol {
        StaticVerdict::Gradient
    } else {
        StaticVerdict::NonGradient
    };
    Ok(StaticTest { verdict, max_residual })
}

/// Deterministic probe points, uniform in `[-half_width, half_width]^d`.
pub fn probe_box(dim: usize, half_width: f64, count: usize, seed: u64) -> Vec<Vec<f64>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.gen_range(-half_width..=half_width)).collect())
        .collect()
}

/// Law of `X_0`.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    PointMass(Vec<f64>),
    /// Covariance is row-major `d x d`, symmetric positive semi-definite.
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
    Grid(DensityField),
}

impl InitialLaw {
    pub fn dim(&self) -> usize {
        match self {
            InitialLaw::PointMass(x) => x.len(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
            InitialLaw::Grid(f) => f.grid().dim(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            InitialLaw::PointMass(x) if x.iter().any(|v| !v.is_finite()) => {
                Err(Error::InvalidParameter("non-finite point mass".into()))
            }
            InitialLaw::Gaussian { mean, cov } => {
                let d = mean.len();
                if cov.len() != d * d {
                    return Err(Error::Dimension {
                        expected: d * d,
                        got: cov.len(),
                    });
                }
                if mean.iter().chain(cov).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidParameter("non-finite gaussian".into()));
                }
                Ok(())
            }
            InitialLaw::Grid(f) => {
                let mass = f.mass();
                if (mass - 1.0).abs() > 1e-6 {
                    return Err(Error::InvalidParameter(format!("initial grid density has mass {mass}")));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `dX = b(X) dt + σ dW` on `[0, T]` with constant scalar `σ`.
#[derive(Debug, Clone)]
pub struct DiffusionSpec {
    pub drift: VectorField,
    pub sigma: f64,
    pub initial: InitialLaw,
    pub horizon: f64,
}

impl DiffusionSpec {
    pub fn new(drift: VectorField, sigma: f64, initial: InitialLaw, horizon: f64) -> Result<Self> {
        Self::with_sigma_allowed(drift, sigma, initial, horizon, false)
    }

    /// Like [`DiffusionSpec::new`] but accepts `σ = 0`, the deterministic limit
    /// used by simulation oracles. Density-based operations still refuse it.
    pub fn degenerate(drift: VectorField, sigma: f64, initial: InitialLaw, horizon: f64) -> Result<Self> {
        Self::with_sigma_allowed(drift, sigma, initial, horizon, true)
    }

    fn with_sigma_allowed(
        drift: VectorField,
        sigma: f64,
        initial: InitialLaw,
        horizon: f64,
        allow_zero: bool,
    ) -> Result<Self> {
        let sigma_ok = sigma.is_finite() && (sigma > 0.0 || (allow_zero && sigma == 0.0));
        if !sigma_ok {
            return Err(Error::InvalidParameter(format!("sigma must be > 0, got {sigma}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidParameter(format!("horizon must be > 0, got {horizon}")));
        }
        if initial.dim() != drift.dim() {
            return Err(Error::Dimension {
                expected: drift.dim(),
                got: initial.dim(),
            });
        }
        initial.validate()?;
        Ok(DiffusionSpec {
            drift,
            sigma,
            initial,
            horizon,
        })
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn descriptor(&self) -> String {
        format!("{} sigma={} T={}", self.drift.descriptor(), self.sigma, self.horizon)
    }

    pub fn require_positive_sigma(&self) -> Result<()> {
        if self.sigma > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter("operation requires sigma > 0".into()))
        }
    }

    pub fn with_initial(&self, initial: InitialLaw) -> Result<Self> {
        Self::with_sigma_allowed(self.drift.clone(), self.sigma, initial, self.horizon, true)
    }
}
