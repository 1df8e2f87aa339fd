//! Named drift families, addressable from scenario configs.

use std::sync::LazyLock;

use super::{FieldFn, LinearField, Potential, ScalarFn, VectorField};
use crate::error::{Error, Result};

/// A parametrised family of drifts.
pub trait DriftFamily: Send + Sync {
    fn name(&self) -> &'static str;
    /// One line: formula and parameter list.
    fn summary(&self) -> &'static str;
    fn build(&self, params: &[f64]) -> Result<VectorField>;
}

pub struct DriftRegistry {
    families: Vec<Box<dyn DriftFamily>>,
}

static BUILTIN: LazyLock<DriftRegistry> = LazyLock::new(|| {
    let mut r = DriftRegistry::empty();
    r.register(Box::new(Ou));
    r.register(Box::new(DoubleWellFamily));
    r.register(Box::new(TiltedDoubleWell));
    r.register(Box::new(RotationalLinear));
    r.register(Box::new(Shear));
    r.register(Box::new(CustomLinear));
    r.register(Box::new(AnharmonicFamily));
    r.register(Box::new(SwirlFamily));
    r.register(Box::new(CoupledQuarticFamily));
    r
});

impl DriftRegistry {
    pub fn empty() -> Self {
        DriftRegistry { families: Vec::new() }
    }

    pub fn builtin() -> &'static DriftRegistry {
        &BUILTIN
    }

    /// Later registrations shadow earlier ones with the same name.
    pub fn register(&mut self, family: Box<dyn DriftFamily>) {
        self.families.retain(|f| f.name() != family.name());
        self.families.push(family);
    }

    pub fn get(&self, name: &str) -> Option<&dyn DriftFamily> {
        self.families.iter().find(|f| f.name() == name).map(|f| f.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.families.iter().map(|f| f.name())
    }

    pub fn build(&self, name: &str, params: &[f64]) -> Result<VectorField> {
        let family = self.get(name).ok_or_else(|| Error::Unknown {
            kind: "drift family",
            name: name.to_string(),
        })?;
        if let Some(bad) = params.iter().find(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite parameter {bad} for `{name}`"
            )));
        }
        family.build(params)
    }
}

/// Instantiates a builtin family by name.
pub fn builtin_drift(name: &str, params: &[f64]) -> Result<VectorField> {
    DriftRegistry::builtin().build(name, params)
}

fn arity(family: &str, params: &[f64], expected: usize) -> Result<()> {
    if params.len() == expected {
        Ok(())
    } else {
        Err(Error::Arity {
            family: family.to_string(),
            expected: expected.to_string(),
            got: params.len(),
        })
    }
}

fn dimension_param(family: &str, v: f64) -> Result<usize> {
    if v.fract() == 0.0 && (1.0..=16.0).contains(&v) {
        Ok(v as usize)
    } else {
        Err(Error::InvalidParameter(format!(
            "`{family}` dimension must be an integer in 1..=16, got {v}"
        )))
    }
}

struct Ou;

impl DriftFamily for Ou {
    fn name(&self) -> &'static str {
        "ou"
    }
    fn summary(&self) -> &'static str {
        "b(x) = -x, U = -|x|^2/2; params [d]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 1)?;
        let d = dimension_param(self.name(), params[0])?;
        let mut a = vec![0.0; d * d];
        (0..d).for_each(|i| a[i * d + i] = -1.0);
        Ok(LinearField::new(d, a).into_field(format!("ou(d={d})")))
    }
}

struct RotationalLinear;

impl DriftFamily for RotationalLinear {
    fn name(&self) -> &'static str {
        "rotational_linear"
    }
    fn summary(&self) -> &'static str {
        "b(x) = A x, A = [[-1,-1],[1,-1]], no potential; params []"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 0)?;
        Ok(LinearField::new(2, vec![-1.0, -1.0, 1.0, -1.0]).into_field("rotational_linear".into()))
    }
}

struct Shear;

impl DriftFamily for Shear {
    fn name(&self) -> &'static str {
        "shear"
    }
    fn summary(&self) -> &'static str {
        "b(x, y) = (-x + k y, -y); gradient iff k = 0; params [k]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 1)?;
        let k = params[0];
        Ok(LinearField::new(2, vec![-1.0, k, 0.0, -1.0]).into_field(format!("shear(k={k})")))
    }
}

struct CustomLinear;

impl DriftFamily for CustomLinear {
    fn name(&self) -> &'static str {
        "custom_linear"
    }
    fn summary(&self) -> &'static str {
        "b(x) = A x, U = x^T A x / 2 iff A symmetric; params [d, A row-major]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        let Some(&d) = params.first() else {
            return Err(Error::Arity {
                family: self.name().into(),
                expected: "1 + d^2".into(),
                got: 0,
            });
        };
        let d = dimension_param(self.name(), d)?;
        if params.len() != 1 + d * d {
            return Err(Error::Arity {
                family: self.name().into(),
                expected: format!("{}", 1 + d * d),
                got: params.len(),
            });
        }
        let a = params[1..].to_vec();
        let desc = format!("custom_linear(d={d}, A={a:?})");
        Ok(LinearField::new(d, a).into_field(desc))
    }
}

/// `b(x) = x - x³ + f`.
struct DoubleWell {
    tilt: f64,
}

impl FieldFn for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[0] - x[0] * x[0] * x[0] + self.tilt;
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = 1.0 - 3.0 * x[0] * x[0];
        true
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        out[0] = -6.0 * x[0];
        true
    }
}

impl ScalarFn for DoubleWell {
    fn value(&self, x: &[f64]) -> f64 {
        let x = x[0];
        0.5 * x * x - 0.25 * x.powi(4) + self.tilt * x
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.eval(x, out)
    }
}

struct DoubleWellFamily;

impl DriftFamily for DoubleWellFamily {
    fn name(&self) -> &'static str {
        "double_well"
    }
    fn summary(&self) -> &'static str {
        "b(x) = x - x^3, U = x^2/2 - x^4/4 (d = 1); params []"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 0)?;
        Ok(VectorField::new(DoubleWell { tilt: 0.0 }, "double_well")
            .with_potential(Potential::new(DoubleWell { tilt: 0.0 })))
    }
}

struct TiltedDoubleWell;

impl DriftFamily for TiltedDoubleWell {
    fn name(&self) -> &'static str {
        "tilted_double_well"
    }
    fn summary(&self) -> &'static str {
        "b(x) = x - x^3 + f, U = x^2/2 - x^4/4 + f x (d = 1); params [f]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 1)?;
        let tilt = params[0];
        Ok(
            VectorField::new(DoubleWell { tilt }, format!("tilted_double_well(f={tilt})"))
                .with_potential(Potential::new(DoubleWell { tilt })),
        )
    }
}

/// `b(x) = -x - c|x|² x + ω J x` (the rotation term only in d = 2).
#[derive(Clone, Copy)]
struct Swirl {
    dim: usize,
    c: f64,
    omega: f64,
}

impl FieldFn for Swirl {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..self.dim {
            out[i] = -x[i] - self.c * r2 * x[i];
        }
        if self.omega != 0.0 {
            out[0] -= self.omega * x[1];
            out[1] += self.omega * x[0];
        }
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for i in 0..d {
            for j in 0..d {
                let delta = if i == j { 1.0 } else { 0.0 };
                out[i * d + j] = -delta - self.c * (r2 * delta + 2.0 * x[i] * x[j]);
            }
        }
        if self.omega != 0.0 {
            out[1] -= self.omega;
            out[d] += self.omega;
        }
        true
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let d = self.dim;
        let delta = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    out[(i * d + j) * d + k] =
                        -2.0 * self.c * (x[k] * delta(i, j) + x[j] * delta(i, k) + x[i] * delta(j, k));
                }
            }
        }
        true
    }
}

/// `U = -|x|²/2 - c|x|⁴/4`.
struct Radial {
    c: f64,
}

impl ScalarFn for Radial {
    fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        -0.5 * r2 - 0.25 * self.c * r2 * r2
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        for (o, xi) in out.iter_mut().zip(x) {
            *o = -xi - self.c * r2 * xi;
        }
    }
}

struct AnharmonicFamily;

impl DriftFamily for AnharmonicFamily {
    fn name(&self) -> &'static str {
        "anharmonic"
    }
    fn summary(&self) -> &'static str {
        "b(x) = -x - c|x|^2 x, U = -|x|^2/2 - c|x|^4/4; params [d, c >= 0]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 2)?;
        let dim = dimension_param(self.name(), params[0])?;
        let c = params[1];
        if c < 0.0 {
            return Err(Error::InvalidParameter("anharmonic c must be >= 0".into()));
        }
        let f = Swirl { dim, c, omega: 0.0 };
        Ok(VectorField::new(f, format!("anharmonic(d={dim}, c={c})")).with_potential(Potential::new(Radial { c })))
    }
}

struct SwirlFamily;

impl DriftFamily for SwirlFamily {
    fn name(&self) -> &'static str {
        "swirl"
    }
    fn summary(&self) -> &'static str {
        "b(x) = -x - c|x|^2 x + omega (-y, x) (d = 2); gradient iff omega = 0; params [c >= 0, omega]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 2)?;
        let (c, omega) = (params[0], params[1]);
        if c < 0.0 {
            return Err(Error::InvalidParameter("swirl c must be >= 0".into()));
        }
        let f = VectorField::new(Swirl { dim: 2, c, omega }, format!("swirl(c={c}, omega={omega})"));
        // The rotation is tangent to the level sets of the radial potential
        // and divergence free, so exp(2U/σ²) stays invariant.
        let radial = Potential::new(Radial { c });
        Ok(if omega == 0.0 {
            f.with_potential(radial)
        } else {
            f.with_quasi_potential(radial)
        })
    }
}

/// `U = -(x² + y²)/2 - c x² y² / 2`.
struct CoupledQuartic {
    c: f64,
}

impl FieldFn for CoupledQuartic {
    fn dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (a, b) = (x[0], x[1]);
        out[0] = -a - self.c * a * b * b;
        out[1] = -b - self.c * a * a * b;
    }
    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (a, b, c) = (x[0], x[1], self.c);
        out[0] = -1.0 - c * b * b;
        out[1] = -2.0 * c * a * b;
        out[2] = -2.0 * c * a * b;
        out[3] = -1.0 - c * a * a;
        true
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) -> bool {
        let (a, b, c) = (x[0], x[1], self.c);
        // b¹: ∂xx, ∂xy, ∂yx, ∂yy
        out[0] = 0.0;
        out[1] = -2.0 * c * b;
        out[2] = -2.0 * c * b;
        out[3] = -2.0 * c * a;
        // b²
        out[4] = -2.0 * c * b;
        out[5] = -2.0 * c * a;
        out[6] = -2.0 * c * a;
        out[7] = 0.0;
        true
    }
}

impl ScalarFn for CoupledQuartic {
    fn value(&self, x: &[f64]) -> f64 {
        let (a, b) = (x[0], x[1]);
        -0.5 * (a * a + b * b) - 0.5 * self.c * a * a * b * b
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        self.eval(x, out)
    }
}

struct CoupledQuarticFamily;

impl DriftFamily for CoupledQuarticFamily {
    fn name(&self) -> &'static str {
        "coupled_quartic"
    }
    fn summary(&self) -> &'static str {
        "b = grad U, U = -(x^2 + y^2)/2 - c x^2 y^2 / 2 (d = 2); params [c >= 0]"
    }
    fn build(&self, params: &[f64]) -> Result<VectorField> {
        arity(self.name(), params, 1)?;
        let c = params[0];
        if c < 0.0 {
            return Err(Error::InvalidParameter("coupled_quartic c must be >= 0".into()));
        }
        Ok(
            VectorField::new(CoupledQuartic { c }, format!("coupled_quartic(c={c})"))
                .with_potential(Potential::new(CoupledQuartic { c })),
        )
    }
}
