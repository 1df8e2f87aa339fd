//! Scenario runner for the nelsonlab diffusion laboratory.
//!
//! A scenario is a TOML file naming a drift, noise level, initial law, grid
//! and a list of checks. `run` resolves it (drawing and recording a seed if
//! none is given), runs the checks and writes JSON reports, CSV residual
//! fields, the resolved config and a manifest.

pub mod bundled;
pub mod error;
pub mod export;
pub mod run;
pub mod scenario;

use std::fmt::Write;

use nelsonlab_core::characterize::{CheckRegistry, Mode};
use nelsonlab_core::model::DriftRegistry;

pub use error::CliError;
pub use run::{run_scenario, RunOptions, RunSummary};
pub use scenario::{Scenario, ScenarioConfig};

/// Text for `describe`: a check's relation and background, or a drift
/// family's formula.
pub fn describe(name: &str) -> Result<String, CliError> {
    let mut out = String::new();
    if let Ok(check) = CheckRegistry::builtin().get(name) {
        let modes: Vec<&str> = check
            .modes()
            .iter()
            .map(|m| match m {
                Mode::Analytic => "analytic",
                Mode::Empirical => "empirical",
            })
            .collect();
        writeln!(out, "{}", check.name()).unwrap();
        writeln!(out, "  modes:      {}", modes.join(", ")).unwrap();
        writeln!(out, "  relation:   {}", check.formula()).unwrap();
        writeln!(out, "  background: {}", check.background()).unwrap();
        return Ok(out);
    }
    if let Some(family) = DriftRegistry::builtin().get(name) {
        writeln!(out, "{} (drift family)", family.name()).unwrap();
        writeln!(out, "  {}", family.summary()).unwrap();
        return Ok(out);
    }
    let checks: Vec<_> = CheckRegistry::builtin().names().collect();
    Err(CliError::Config(format!(
        "unknown check `{name}`; known checks: {}",
        checks.join(", ")
    )))
}

/// Text for `list-scenarios`.
pub fn list_scenarios() -> String {
    let mut out = String::new();
    for name in bundled::names() {
        let description = bundled::load(name).map(|c| c.description).unwrap_or_default();
        writeln!(out, "{name:<16} {description}").unwrap();
    }
    out
}
