//! Gradient-drift diagnostics built on the Nelson derivatives.
//!
//! Every check returns a [`CheckReport`]: named residuals with their
//! tolerances, optional diagnostics and residual fields, and a verdict.
//! Checks are also available through the name-keyed [`CheckRegistry`], which
//! is how scenario configs select them.

mod checks;
mod context;
mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::nelson::DerivativeField;

pub use checks::{
    dynamic_gradient_test, dynamic_gradient_test_empirical, girsanov_variation_check, identity_residual,
    newton_residual, reversibility_check, stationarity_check, stationarity_check_empirical, GirsanovSettings,
    Observable, ReversibilitySettings,
};
pub use context::{CheckContext, DensityRegistry, DensitySource, SimulationSettings};
pub use registry::{Check, CheckConfig, CheckRegistry, GammaSpec, Mode};

/// Tolerance for analytic-mode residuals.
pub const ANALYTIC_TOLERANCE: f64 = 5e-3;
/// Minimum fraction of the bulk a residual must cover to be conclusive.
pub const MIN_COVERAGE: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub name: String,
    pub value: f64,
    /// `None` for residuals reported without a pass/fail claim.
    pub tolerance: Option<f64>,
    /// How the residual is measured, e.g. `sup over bulk`.
    pub norm: String,
}

impl Residual {
    fn passes(&self) -> bool {
        match self.tolerance {
            Some(tol) => self.value.is_finite() && self.value <= tol,
            None => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub spec: String,
    pub verdict: Verdict,
    pub residuals: Vec<Residual>,
    pub diagnostics: BTreeMap<String, f64>,
    /// Fraction of the density bulk on which the residuals were evaluated.
    pub coverage: Option<f64>,
    /// Classification drawn from the residuals, for checks that make one.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub classification: Option<String>,
    pub seeds: Vec<u64>,
    pub notes: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub runtime_seconds: Option<f64>,
    /// Per-node residual fields, exported separately.
    #[serde(skip)]
    pub fields: Vec<(String, DerivativeField)>,
}

impl CheckReport {
    pub fn new(check: &str, spec: String) -> Self {
        CheckReport {
            check: check.to_string(),
            spec,
            verdict: Verdict::Inconclusive,
            residuals: Vec::new(),
            diagnostics: BTreeMap::new(),
            coverage: None,
            classification: None,
            seeds: Vec::new(),
            notes: Vec::new(),
            runtime_seconds: None,
            fields: Vec::new(),
        }
    }

    pub fn residual(&mut self, name: impl Into<String>, value: f64, tolerance: f64, norm: &str) -> &mut Self {
        self.residuals.push(Residual {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            norm: norm.to_string(),
        });
        self
    }

    /// A residual reported for inspection only.
    pub fn reported(&mut self, name: impl Into<String>, value: f64, norm: &str) -> &mut Self {
        self.residuals.push(Residual {
            name: name.into(),
            value,
            tolerance: None,
            norm: norm.to_string(),
        });
        self
    }

    pub fn diagnostic(&mut self, name: impl Into<String>, value: f64) -> &mut Self {
        self.diagnostics.insert(name.into(), value);
        self
    }

    pub fn note(&mut self, text: impl Into<String>) -> &mut Self {
        self.notes.push(text.into());
        self
    }

    pub fn field(&mut self, name: impl Into<String>, field: DerivativeField) -> &mut Self {
        self.fields.push((name.into(), field));
        self
    }

    /// Sets the verdict from the residuals: inconclusive below the coverage
    /// floor, pass iff every gated residual is within tolerance.
    pub fn conclude(mut self, coverage: Option<f64>) -> Self {
        self.coverage = coverage;
        self.verdict = match coverage {
            Some(c) if c < MIN_COVERAGE => {
                self.notes
                    .push(format!("residual covers {:.0}% of the bulk", 100.0 * c));
                Verdict::Inconclusive
            }
            _ if self.residuals.iter().all(Residual::passes) => Verdict::Pass,
            _ => Verdict::Fail,
        };
        self
    }

    pub fn inconclusive(mut self, reason: impl Into<String>) -> Self {
        self.notes.push(reason.into());
        self.verdict = Verdict::Inconclusive;
        self
    }

    pub fn residual_value(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|r| r.name == name).map(|r| r.value)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialise")
    }
}
