use std::sync::{Arc, LazyLock};

use serde::{Deserialize, Serialize};

use super::checks::{
    dynamic_gradient_test, dynamic_gradient_test_empirical, girsanov_variation_check, identity_residual,
    newton_residual, reversibility_check, stationarity_check, stationarity_check_empirical, GirsanovSettings,
    Observable, ReversibilitySettings,
};
use super::context::CheckContext;
use super::{CheckReport, Verdict, ANALYTIC_TOLERANCE};
use crate::density::Bandwidth;
use crate::error::{Error, Result};
use crate::model::{antisymmetric_part, VectorField};
use crate::nelson::EmpiricalOptions;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Analytic,
    Empirical,
}

/// Perturbation direction `γ` for the variation identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GammaSpec {
    #[default]
    Zero,
    Constant {
        value: Vec<f64>,
    },
    /// Row `Gᵢ` of the antisymmetric part of the drift's Jacobian.
    AntisymmetricRow {
        row: usize,
    },
}

impl GammaSpec {
    pub fn build(&self, drift: &VectorField) -> Result<VectorField> {
        let d = drift.dim();
        match self {
            GammaSpec::Zero => Ok(VectorField::zero(d)),
            GammaSpec::Constant { value } => {
                if value.len() != d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: value.len(),
                    });
                }
                let v = value.clone();
                Ok(VectorField::from_fn(d, format!("const{v:?}"), move |_, out| {
                    out.copy_from_slice(&v)
                }))
            }
            &GammaSpec::AntisymmetricRow { row } => {
                if row >= d {
                    return Err(Error::InvalidParameter(format!("row {row} out of range for d = {d}")));
                }
                let g = antisymmetric_part(drift);
                Ok(VectorField::from_fn(d, format!("G_{row}"), move |x, out| {
                    out.copy_from_slice(&g.eval_vec(x)[row * d..(row + 1) * d])
                }))
            }
        }
    }
}

fn default_eps() -> Vec<f64> {
    vec![1e-2, 2e-2]
}

fn default_bootstrap() -> usize {
    32
}

fn default_chunk() -> usize {
    20_000
}

fn default_min_effective() -> f64 {
    50.0
}

/// One requested check with its settings. Unset values take per-check defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckConfig {
    pub check: String,
    #[serde(default)]
    pub mode: Mode,
    /// Density source for this check, overriding the scenario's.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    /// Evaluation times; single-time checks use the first.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Lag of the empirical quotients; 0.01 for first order, 0.1 for nested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_lag: Option<f64>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub observable: Observable,
    #[serde(default)]
    pub gamma: GammaSpec,
    #[serde(default = "default_bootstrap")]
    pub n_bootstrap: usize,
    /// Paths simulated at a time by the sampling checks.
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default = "default_min_effective")]
    pub min_effective: f64,
    /// Verdict the scenario expects; a matching verdict counts as success.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expect: Option<Verdict>,
}

impl CheckConfig {
    pub fn new(check: &str) -> Self {
        CheckConfig {
            check: check.to_string(),
            mode: Mode::Analytic,
            density: None,
            tolerance: None,
            times: None,
            h_lag: None,
            eps: default_eps(),
            observable: Observable::default(),
            gamma: GammaSpec::default(),
            n_bootstrap: default_bootstrap(),
            chunk: default_chunk(),
            min_effective: default_min_effective(),
            expect: None,
        }
    }

    /// Whether the check reads the context's density series.
    pub fn needs_density(&self) -> bool {
        match self.check.as_str() {
            "reversibility_check" | "girsanov_variation_check" => false,
            "stationarity_check" | "dynamic_gradient_test" => self.mode == Mode::Analytic,
            _ => true,
        }
    }

    fn times_or(&self, default: Vec<f64>) -> Vec<f64> {
        self.times.clone().unwrap_or(default)
    }

    fn time_or_mid(&self, ctx: &CheckContext) -> f64 {
        self.times
            .as_ref()
            .and_then(|t| t.first().copied())
            .unwrap_or(0.5 * ctx.spec().horizon)
    }

    fn quarter_times(ctx: &CheckContext) -> Vec<f64> {
        let t = ctx.spec().horizon;
        vec![0.25 * t, 0.5 * t, 0.75 * t]
    }

    fn empirical_options(&self, ctx: &CheckContext) -> EmpiricalOptions {
        EmpiricalOptions {
            bandwidth: Bandwidth::Auto,
            control_variate: true,
            n_bootstrap: self.n_bootstrap,
            bootstrap_seed: ctx.simulation().seed.wrapping_add(1),
            min_effective: self.min_effective,
        }
    }
}

/// A named characterization check.
pub trait Check: Send + Sync {
    fn name(&self) -> &'static str;
    /// The relation being tested, as plain text.
    fn formula(&self) -> &'static str;
    /// Where the relation comes from and what a failure means.
    fn background(&self) -> &'static str;
    fn modes(&self) -> &'static [Mode] {
        &[Mode::Analytic]
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport>;
}

pub struct CheckRegistry {
    checks: Vec<Arc<dyn Check>>,
}

static BUILTIN: LazyLock<CheckRegistry> = LazyLock::new(|| {
    let mut r = CheckRegistry::empty();
    r.register(Arc::new(Stationarity));
    r.register(Arc::new(Identity));
    r.register(Arc::new(DynamicGradient));
    r.register(Arc::new(Reversibility));
    r.register(Arc::new(Newton));
    r.register(Arc::new(Girsanov));
    r
});

impl CheckRegistry {
    pub fn empty() -> Self {
        CheckRegistry { checks: Vec::new() }
    }

    pub fn builtin() -> &'static CheckRegistry {
        &BUILTIN
    }

    pub fn register(&mut self, check: Arc<dyn Check>) {
        self.checks.retain(|c| c.name() != check.name());
        self.checks.push(check);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn Check>> {
        self.checks
            .iter()
            .find(|c| c.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                kind: "check",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.checks.iter().map(|c| c.name())
    }

    /// Looks up `config.check`, validates the mode and runs it.
    pub fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let check = self.get(&config.check)?;
        if !check.modes().contains(&config.mode) {
            return Err(Error::InvalidParameter(format!(
                "`{}` has no {:?} mode",
                check.name(),
                config.mode
            )));
        }
        if let Some(tol) = config.tolerance {
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(Error::InvalidParameter(format!("tolerance must be >= 0, got {tol}")));
            }
        }
        check.run(ctx, config)
    }
}

struct Stationarity;

impl Check for Stationarity {
    fn name(&self) -> &'static str {
        "stationarity_check"
    }
    fn formula(&self) -> &'static str {
        "r1 = sup_bulk |D+X + D-X| = sup_bulk |2b - sigma^2 grad log p_t|, with the L1 drift of p_t between times"
    }
    fn background(&self) -> &'static str {
        "A diffusion with homogeneous gradient drift started from its invariant law satisfies D+X = -D-X at all \
         times; a nonzero residual rules out a stationary gradient regime."
    }
    fn modes(&self) -> &'static [Mode] {
        &[Mode::Analytic, Mode::Empirical]
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let times = config.times_or(CheckConfig::quarter_times(ctx));
        match config.mode {
            Mode::Analytic => {
                let tol = config.tolerance.unwrap_or(ANALYTIC_TOLERANCE);
                stationarity_check(ctx.spec(), &*ctx.density()?, &times, tol)
            }
            Mode::Empirical => {
                let tol = config.tolerance.unwrap_or(0.15);
                let options = config.empirical_options(ctx);
                stationarity_check_empirical(
                    &*ctx.ensemble()?,
                    ctx.grid(),
                    &times,
                    config.h_lag.unwrap_or(0.01),
                    tol,
                    &options,
                )
            }
        }
    }
}

struct Identity;

impl Check for Identity {
    fn name(&self) -> &'static str {
        "identity_residual"
    }
    fn formula(&self) -> &'static str {
        "(D-^2 X - D+^2 X)^i = div(p G_i) / p = sigma^2 (<grad log p, G_i> + div G_i), G_i^j = d_i b^j - d_j b^i"
    }
    fn background(&self) -> &'static str {
        "Divergence identity for the second-order Nelson derivatives: the gap between the backward and forward \
         accelerations is carried entirely by the antisymmetric part of the drift Jacobian. It holds for every \
         drift, so a residual above tolerance indicates discretization error, not a property of the drift. In \
         one dimension both sides vanish."
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let tol = config.tolerance.unwrap_or(ANALYTIC_TOLERANCE);
        identity_residual(ctx.spec(), &*ctx.density()?, config.time_or_mid(ctx), tol)
    }
}

struct DynamicGradient;

impl Check for DynamicGradient {
    fn name(&self) -> &'static str {
        "dynamic_gradient_test"
    }
    fn formula(&self) -> &'static str {
        "r3 = sup_bulk |D+^2 X - D-^2 X|; gradient iff r3 <= tol"
    }
    fn background(&self) -> &'static str {
        "For a diffusion with smooth positive marginals, the forward and backward second derivatives of the \
         process coincide if and only if the drift is a gradient. The verdict is cross-checked against a \
         static curl test of the drift on bulk nodes."
    }
    fn modes(&self) -> &'static [Mode] {
        &[Mode::Analytic, Mode::Empirical]
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let t = config.time_or_mid(ctx);
        match config.mode {
            Mode::Analytic => {
                let tol = config.tolerance.unwrap_or(ANALYTIC_TOLERANCE);
                dynamic_gradient_test(ctx.spec(), &*ctx.density()?, t, tol)
            }
            Mode::Empirical => {
                let tol = config.tolerance.unwrap_or(0.3);
                let options = config.empirical_options(ctx);
                let h = config.h_lag.unwrap_or(0.1);
                dynamic_gradient_test_empirical(&*ctx.ensemble()?, ctx.grid(), t, h, tol, &options)
            }
        }
    }
}

struct Reversibility;

impl Check for Reversibility {
    fn name(&self) -> &'static str {
        "reversibility_check"
    }
    fn formula(&self) -> &'static str {
        "r4 = max over path statistics of |mean(S(X) - S(reversed X))| / SE; reversible iff r4 <= 4"
    }
    fn background(&self) -> &'static str {
        "Kolmogorov's criterion: a stationary diffusion has the same law as its time reversal if and only if \
         its drift is a gradient. Only meaningful from a stationary start; other starts are inconclusive."
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let sim = ctx.simulation();
        let settings = ReversibilitySettings {
            n_paths: sim.n_paths,
            n_steps: sim.n_steps,
            seed: sim.seed,
            chunk: config.chunk,
            tolerance: config.tolerance.unwrap_or(4.0),
        };
        reversibility_check(ctx.spec(), ctx.grid(), &settings)
    }
}

struct Newton;

impl Check for Newton {
    fn name(&self) -> &'static str {
        "newton_residual"
    }
    fn formula(&self) -> &'static str {
        "DD X + grad U with DD = complex second derivative; Im = (D+^2 X - D-^2 X)/2 gated, Re reported"
    }
    fn background(&self) -> &'static str {
        "Stochastic embedding of Newton's equation through the complex Nelson derivative. For gradient drift \
         the imaginary part vanishes; the real part is printed for inspection without a pass/fail claim."
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let tol = config.tolerance.unwrap_or(ANALYTIC_TOLERANCE);
        newton_residual(ctx.spec(), &*ctx.density()?, config.time_or_mid(ctx), tol)
    }
}

struct Girsanov;

impl Check for Girsanov {
    fn name(&self) -> &'static str {
        "girsanov_variation_check"
    }
    fn formula(&self) -> &'static str {
        "d/de E[phi(X^e)] at e=0 = E[phi(X) int <gamma(X_s), dW_s>], X^e with drift b + e gamma"
    }
    fn background(&self) -> &'static str {
        "Girsanov variation formula for a drift perturbation, the mechanism behind the gradient \
         characterization. The left side is a Richardson-extrapolated central difference on common noise, the \
         right side a discrete stochastic integral; r5 = |LHS - RHS| / (3 SE)."
    }
    fn run(&self, ctx: &CheckContext, config: &CheckConfig) -> Result<CheckReport> {
        let sim = ctx.simulation();
        let gamma = config.gamma.build(&ctx.spec().drift)?;
        let settings = GirsanovSettings {
            observable: config.observable,
            eps: config.eps.clone(),
            n_paths: sim.n_paths,
            n_steps: sim.n_steps,
            seed: sim.seed,
            n_bootstrap: config.n_bootstrap,
            chunk: config.chunk,
            tolerance: config.tolerance.unwrap_or(1.0),
        };
        girsanov_variation_check(ctx.spec(), &gamma, &settings)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characterize::SimulationSettings;
    use crate::density::GridSpec;
    use crate::model::{builtin_drift, DiffusionSpec, InitialLaw};

    #[test]
    fn registry_lists_every_check() {
        let names: Vec<_> = CheckRegistry::builtin().names().collect();
        assert_eq!(
            names,
            [
                "stationarity_check",
                "identity_residual",
                "dynamic_gradient_test",
                "reversibility_check",
                "newton_residual",
                "girsanov_variation_check"
            ]
        );
    }

    #[test]
    fn unknown_check_and_unsupported_mode_are_rejected() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let spec = DiffusionSpec::new(ou, 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        let grid = GridSpec::cube(1, -4.0, 4.0, 161).unwrap();
        let ctx = CheckContext::new(spec, grid, "stationary", SimulationSettings::default()).unwrap();
        let reg = CheckRegistry::builtin();
        assert!(matches!(
            reg.run(&ctx, &CheckConfig::new("nope")),
            Err(Error::Unknown { .. })
        ));
        let mut c = CheckConfig::new("identity_residual");
        c.mode = Mode::Empirical;
        assert!(matches!(reg.run(&ctx, &c), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn antisymmetric_gamma_of_a_gradient_is_zero() {
        let dw = builtin_drift("double_well", &[]).unwrap();
        let g = GammaSpec::AntisymmetricRow { row: 0 }.build(&dw).unwrap();
        assert_eq!(g.eval_vec(&[0.7]), vec![0.0]);
        let rot = builtin_drift("rotational_linear", &[]).unwrap();
        let g = GammaSpec::AntisymmetricRow { row: 0 }.build(&rot).unwrap();
        assert_eq!(g.eval_vec(&[0.3, -1.0]), vec![0.0, 2.0]);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let ok: CheckConfig = serde_json::from_str(r#"{"check": "identity_residual", "tolerance": 0.01}"#).unwrap();
        assert_eq!(ok.tolerance, Some(0.01));
        assert!(serde_json::from_str::<CheckConfig>(r#"{"check": "x", "tolerence": 1}"#).is_err());
    }
}
