//! Scenario files: TOML, strictly validated, with every seed explicit after
//! resolution.

use std::path::PathBuf;

use nelsonlab_core::characterize::{CheckConfig, CheckRegistry, DensityRegistry, Mode, Observable, SimulationSettings};
use nelsonlab_core::density::{stationary_density, GridSpec};
use nelsonlab_core::model::{builtin_drift, DiffusionSpec, InitialLaw};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    /// The invariant law of the drift, discretised on the scenario grid.
    Stationary,
    PointMass {
        point: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        cov: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub nodes: Vec<usize>,
}

fn default_source() -> String {
    "stationary".into()
}

fn default_slices() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default = "default_source")]
    pub source: String,
    #[serde(default = "default_slices")]
    pub slices: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            source: default_source(),
            slices: default_slices(),
        }
    }
}

fn default_paths() -> usize {
    100_000
}

fn default_steps() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default = "default_steps")]
    pub n_steps: usize,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            n_paths: default_paths(),
            n_steps: default_steps(),
        }
    }
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Manifest seed; drawn once and recorded when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub sigma: f64,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default = "yes")]
    pub write_fields: bool,
    pub drift: DriftConfig,
    pub initial: InitialConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    pub checks: Vec<CheckConfig>,
}

/// A validated scenario ready to run.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub seed: u64,
    pub spec: DiffusionSpec,
    pub grid: GridSpec,
}

/// SplitMix64 finaliser: decorrelated per-check streams from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream index reserved for density sources that sample.
pub const DENSITY_STREAM: u64 = u64::MAX;
/// Stream index used by `export`.
pub const EXPORT_STREAM: u64 = u64::MAX - 1;

fn auto_seed() -> u64 {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos() as u64)
        .unwrap_or(0);
    derive_seed(nanos, std::process::id() as u64)
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Requirements a check places on the scenario that would otherwise only
/// surface mid-run.
fn check_preconditions(spec: &DiffusionSpec, config: &ScenarioConfig, c: &CheckConfig) -> Result<(), String> {
    let drift = &spec.drift;
    if c.needs_density() {
        let source = c.density.as_deref().unwrap_or(&config.density.source);
        match source {
            "stationary" if drift.quasi_potential().is_none() => {
                return Err(format!(
                    "`{}` has no known invariant law for the stationary source",
                    drift.descriptor()
                ))
            }
            "fokker_planck" if matches!(config.initial, InitialConfig::PointMass { .. }) => {
                return Err("the fokker_planck source needs a grid-representable initial law".into())
            }
            _ => {}
        }
    }
    match c.check.as_str() {
        "newton_residual" if drift.potential().is_none() => Err(format!("`{}` has no potential", drift.descriptor())),
        "girsanov_variation_check" => {
            if spec.sigma != 1.0 {
                return Err(format!("needs sigma = 1, got {}", spec.sigma));
            }
            if c.eps.is_empty() || c.eps.len() > 2 || c.eps.iter().any(|e| !(*e > 0.0)) {
                return Err("eps must be one or two positive steps".into());
            }
            if let Observable::TerminalCoordinate { axis } = c.observable {
                if axis >= spec.dim() {
                    return Err(format!("observable axis {axis} out of range"));
                }
            }
            c.gamma.build(drift).map(|_| ()).map_err(|e| e.to_string())
        }
        _ => Ok(()),
    }
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| invalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario configs serialise")
    }

    /// Validates everything that can be checked without running, and fixes
    /// the manifest seed.
    pub fn resolve(mut self, seed_override: Option<u64>) -> Result<Scenario, CliError> {
        let seed = seed_override.or(self.seed).unwrap_or_else(auto_seed);
        self.seed = Some(seed);

        let drift = builtin_drift(&self.drift.family, &self.drift.params).map_err(|e| invalid(e.to_string()))?;
        let g = &self.grid;
        let grid = GridSpec::new(g.lower.clone(), g.upper.clone(), g.nodes.clone())
            .map_err(|e| invalid(format!("grid: {e}")))?;
        if grid.dim() != drift.dim() {
            return Err(invalid(format!(
                "grid has dimension {} but the drift has dimension {}",
                grid.dim(),
                drift.dim()
            )));
        }
        let initial = match &self.initial {
            InitialConfig::Stationary => {
                let v = drift
                    .quasi_potential()
                    .ok_or_else(|| invalid(format!("`{}` has no known invariant law", drift.descriptor())))?;
                let sigma = self.sigma;
                let p = stationary_density(v, sigma, &grid).map_err(|e| invalid(format!("initial law: {e}")))?;
                InitialLaw::Grid(p)
            }
            InitialConfig::PointMass { point } => InitialLaw::PointMass(point.clone()),
            InitialConfig::Gaussian { mean, cov } => InitialLaw::Gaussian {
                mean: mean.clone(),
                cov: cov.clone(),
            },
        };
        let spec = DiffusionSpec::new(drift, self.sigma, initial, self.horizon).map_err(|e| invalid(e.to_string()))?;

        let sources = DensityRegistry::builtin();
        sources.get(&self.density.source).map_err(|e| invalid(e.to_string()))?;
        if self.density.slices == 0 {
            return Err(invalid("density.slices must be positive"));
        }
        if self.simulation.n_paths < 2 || self.simulation.n_steps == 0 {
            return Err(invalid("simulation needs n_paths >= 2 and n_steps >= 1"));
        }
        if self.checks.is_empty() {
            return Err(invalid("no checks requested"));
        }
        let registry = CheckRegistry::builtin();
        for (i, c) in self.checks.iter().enumerate() {
            let check = registry
                .get(&c.check)
                .map_err(|e| invalid(format!("checks[{i}]: {e}")))?;
            if !check.modes().contains(&c.mode) {
                return Err(invalid(format!("checks[{i}]: `{}` has no {:?} mode", c.check, c.mode)));
            }
            if let Some(src) = &c.density {
                sources.get(src).map_err(|e| invalid(format!("checks[{i}]: {e}")))?;
            }
            if let Some(tol) = c.tolerance {
                if !(tol.is_finite() && tol >= 0.0) {
                    return Err(invalid(format!("checks[{i}]: tolerance must be >= 0")));
                }
            }
            if let Some(h) = c.h_lag {
                if !(h > 0.0 && h < self.horizon) {
                    return Err(invalid(format!("checks[{i}]: h_lag must lie in (0, horizon)")));
                }
            }
            for t in c.times.iter().flatten() {
                if !(0.0..=self.horizon).contains(t) {
                    return Err(invalid(format!("checks[{i}]: time {t} outside [0, {}]", self.horizon)));
                }
            }
            if c.mode == Mode::Empirical && c.min_effective < 1.0 {
                return Err(invalid(format!("checks[{i}]: min_effective must be >= 1")));
            }
            check_preconditions(&spec, &self, c).map_err(|e| invalid(format!("checks[{i}] ({}): {e}", c.check)))?;
        }
        Ok(Scenario {
            config: self,
            seed,
            spec,
            grid,
        })
    }
}

impl Scenario {
    /// Simulation settings on seed stream `stream` (the check index for checks).
    pub fn simulation(&self, stream: u64) -> SimulationSettings {
        SimulationSettings {
            n_paths: self.config.simulation.n_paths,
            n_steps: self.config.simulation.n_steps,
            seed: derive_seed(self.seed, stream),
        }
    }

    pub fn check_seeds(&self) -> Vec<u64> {
        (0..self.config.checks.len() as u64)
            .map(|i| derive_seed(self.seed, i))
            .collect()
    }

    /// Density source used by `check`.
    pub fn source_of<'a>(&'a self, check: &'a CheckConfig) -> &'a str {
        check.density.as_deref().unwrap_or(&self.config.density.source)
    }
}
