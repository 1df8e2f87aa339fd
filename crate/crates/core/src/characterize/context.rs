use std::sync::{Arc, LazyLock, OnceLock};

use serde::{Deserialize, Serialize};

use crate::density::{
    cfl_time_steps, fokker_planck_solve, kde, stationary_density, Bandwidth, DensityField, DensityTimeSeries,
    FokkerPlanckConfig, GridSpec,
};
use crate::error::{Error, Result};
use crate::model::{DiffusionSpec, InitialLaw};
use crate::simulate::{euler_maruyama, PathEnsemble};

/// Ensemble size and seed shared by the sampling-based checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for SimulationSettings {
    fn default() -> Self {
        SimulationSettings {
            n_paths: 100_000,
            n_steps: 100,
            seed: 0,
        }
    }
}

/// A way of obtaining the marginal densities `p_t` of a spec on a grid.
pub trait DensitySource: Send + Sync {
    fn name(&self) -> &'static str;
    fn summary(&self) -> &'static str;
    fn build(&self, ctx: &CheckContext) -> Result<DensityTimeSeries>;
}

pub struct DensityRegistry {
    sources: Vec<Arc<dyn DensitySource>>,
}

static BUILTIN: LazyLock<DensityRegistry> = LazyLock::new(|| {
    let mut r = DensityRegistry::empty();
    r.register(Arc::new(Stationary));
    r.register(Arc::new(FokkerPlanck));
    r.register(Arc::new(Kde));
    r
});

impl DensityRegistry {
    pub fn empty() -> Self {
        DensityRegistry { sources: Vec::new() }
    }

    pub fn builtin() -> &'static DensityRegistry {
        &BUILTIN
    }

    pub fn register(&mut self, source: Arc<dyn DensitySource>) {
        self.sources.retain(|s| s.name() != source.name());
        self.sources.push(source);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn DensitySource>> {
        self.sources
            .iter()
            .find(|s| s.name() == name)
            .cloned()
            .ok_or_else(|| Error::Unknown {
                kind: "density source",
                name: name.to_string(),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.sources.iter().map(|s| s.name())
    }
}

struct Stationary;

impl DensitySource for Stationary {
    fn name(&self) -> &'static str {
        "stationary"
    }
    fn summary(&self) -> &'static str {
        "Gibbs density exp(2V/sigma^2) of the drift's quasi-potential, constant in time"
    }
    fn build(&self, ctx: &CheckContext) -> Result<DensityTimeSeries> {
        let v = ctx.spec().drift.quasi_potential().ok_or_else(|| {
            Error::Missing(format!(
                "`{}` has no known invariant law",
                ctx.spec().drift.descriptor()
            ))
        })?;
        let p = stationary_density(v, ctx.spec().sigma, ctx.grid())?;
        Ok(DensityTimeSeries::constant(p))
    }
}

struct FokkerPlanck;

impl DensitySource for FokkerPlanck {
    fn name(&self) -> &'static str {
        "fokker_planck"
    }
    fn summary(&self) -> &'static str {
        "explicit finite-volume Fokker-Planck evolution of the initial law"
    }
    fn build(&self, ctx: &CheckContext) -> Result<DensityTimeSeries> {
        let init = initial_density(&ctx.spec().initial, ctx.grid())?;
        let steps = (cfl_time_steps(ctx.spec(), ctx.grid())? as f64 * 1.1).ceil() as usize;
        let config = FokkerPlanckConfig::new(steps.max(1)).with_slices(ctx.density_slices());
        fokker_planck_solve(ctx.spec(), &init, ctx.grid(), config)
    }
}

struct Kde;

impl DensitySource for Kde {
    fn name(&self) -> &'static str {
        "kde"
    }
    fn summary(&self) -> &'static str {
        "Gaussian kernel density estimates of the simulated ensemble"
    }
    fn build(&self, ctx: &CheckContext) -> Result<DensityTimeSeries> {
        let ens = ctx.ensemble()?;
        let m = ens.n_steps();
        let stride = m.div_ceil(ctx.density_slices().max(1)).max(1);
        let mut slices = Vec::new();
        for step in (0..=m).step_by(stride) {
            slices.push(kde(&ens, ens.time(step), ctx.grid(), &Bandwidth::Auto)?);
        }
        DensityTimeSeries::new(slices)
    }
}

/// Grid density of an initial law. Point masses have none.
pub(crate) fn initial_density(law: &InitialLaw, grid: &GridSpec) -> Result<DensityField> {
    match law {
        InitialLaw::Gaussian { mean, cov } => DensityField::gaussian(grid.clone(), 0.0, mean, cov),
        InitialLaw::Grid(f) if f.grid() == grid => Ok(f.clone().with_time(0.0)),
        InitialLaw::Grid(f) => DensityField::from_fn(grid.clone(), 0.0, |x| f.interpolate(x).unwrap_or(0.0)),
        InitialLaw::PointMass(_) => Err(Error::Missing("a point-mass initial law has no grid density".into())),
    }
}

/// Inputs shared by the checks of one scenario. The density series and the
/// ensemble are computed on first use and cached.
pub struct CheckContext {
    spec: DiffusionSpec,
    grid: GridSpec,
    source: Arc<dyn DensitySource>,
    simulation: SimulationSettings,
    density_slices: usize,
    density: OnceLock<Result<Arc<DensityTimeSeries>>>,
    ensemble: OnceLock<Result<Arc<PathEnsemble>>>,
}

impl CheckContext {
    pub fn new(spec: DiffusionSpec, grid: GridSpec, source: &str, simulation: SimulationSettings) -> Result<Self> {
        if spec.dim() != grid.dim() {
            return Err(Error::Dimension {
                expected: spec.dim(),
                got: grid.dim(),
            });
        }
        Ok(CheckContext {
            spec,
            grid,
            source: DensityRegistry::builtin().get(source)?,
            simulation,
            density_slices: 200,
            density: OnceLock::new(),
            ensemble: OnceLock::new(),
        })
    }

    /// Uses `series` instead of building one from the source.
    pub fn with_density(self, series: impl Into<Arc<DensityTimeSeries>>) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(Ok(series.into()));
        CheckContext { density: cell, ..self }
    }

    pub fn with_density_slices(mut self, n: usize) -> Self {
        self.density_slices = n;
        self
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn simulation(&self) -> SimulationSettings {
        self.simulation
    }

    pub fn source_name(&self) -> &'static str {
        self.source.name()
    }

    pub fn density_slices(&self) -> usize {
        self.density_slices
    }

    pub fn density(&self) -> Result<Arc<DensityTimeSeries>> {
        self.density
            .get_or_init(|| self.source.build(self).map(Arc::new))
            .clone()
    }

    pub fn ensemble(&self) -> Result<Arc<PathEnsemble>> {
        self.ensemble
            .get_or_init(|| {
                let s = self.simulation;
                euler_maruyama(&self.spec, s.n_paths, s.n_steps, s.seed).map(Arc::new)
            })
            .clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_drift;

    #[test]
    fn sources_are_registered_by_name() {
        let names: Vec<_> = DensityRegistry::builtin().names().collect();
        assert_eq!(names, ["stationary", "fokker_planck", "kde"]);
        assert!(matches!(
            DensityRegistry::builtin().get("nope"),
            Err(Error::Unknown { .. })
        ));
    }

    #[test]
    fn density_is_cached() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let spec = DiffusionSpec::new(ou, 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        let grid = GridSpec::cube(1, -4.0, 4.0, 161).unwrap();
        let ctx = CheckContext::new(spec, grid, "stationary", SimulationSettings::default()).unwrap();
        let a = ctx.density().unwrap();
        let b = ctx.density().unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert!(a.is_constant());
    }

    #[test]
    fn point_mass_has_no_fokker_planck_start() {
        let ou = builtin_drift("ou", &[1.0]).unwrap();
        let spec = DiffusionSpec::new(ou, 1.0, InitialLaw::PointMass(vec![0.0]), 1.0).unwrap();
        let grid = GridSpec::cube(1, -4.0, 4.0, 161).unwrap();
        let ctx = CheckContext::new(spec, grid, "fokker_planck", SimulationSettings::default()).unwrap();
        assert!(matches!(ctx.density(), Err(Error::Missing(_))));
    }
}
