//! `export`: ensembles and densities of a scenario as flat files.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nelsonlab_core::characterize::CheckContext;
use nelsonlab_core::io::{write_density_binary, write_density_csv, write_ensemble_binary, write_ensemble_summary_csv};
use nelsonlab_core::simulate::euler_maruyama;

use crate::error::CliError;
use crate::scenario::{derive_seed, ScenarioConfig, DENSITY_STREAM, EXPORT_STREAM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// All simulated paths.
    Ensemble,
    /// Per-step mean and covariance of the ensemble.
    EnsembleSummary,
    /// The scenario's density source at one time.
    Density,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Binary,
}

#[derive(Debug, Clone)]
pub struct ExportOptions {
    pub kind: ExportKind,
    pub format: Format,
    pub out: PathBuf,
    pub seed_override: Option<u64>,
    /// Density time; defaults to the horizon.
    pub time: Option<f64>,
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(CliError::io(format!("creating {}", path.display())))
}

/// Writes the requested artifact and returns the seed it was generated with.
pub fn export(config: ScenarioConfig, options: &ExportOptions) -> Result<u64, CliError> {
    let scenario = config.resolve(options.seed_override)?;
    match (options.kind, options.format) {
        (ExportKind::Ensemble, Format::Csv) => {
            return Err(CliError::Config(
                "ensembles export as binary; use ensemble-summary for CSV".into(),
            ))
        }
        (ExportKind::EnsembleSummary, Format::Binary) => {
            return Err(CliError::Config("the ensemble summary is CSV only".into()))
        }
        _ => {}
    }
    if let Some(t) = options.time {
        if !(0.0..=scenario.spec.horizon).contains(&t) {
            return Err(CliError::Config(format!(
                "time {t} outside [0, {}]",
                scenario.spec.horizon
            )));
        }
    }
    let mut w = create(&options.out)?;
    let seed = match options.kind {
        ExportKind::Ensemble | ExportKind::EnsembleSummary => {
            let sim = scenario.simulation(EXPORT_STREAM);
            let ensemble = euler_maruyama(&scenario.spec, sim.n_paths, sim.n_steps, sim.seed)?;
            if options.kind == ExportKind::Ensemble {
                write_ensemble_binary(&ensemble, &mut w)?;
            } else {
                write_ensemble_summary_csv(&ensemble, &mut w)?;
            }
            sim.seed
        }
        ExportKind::Density => {
            let source = &scenario.config.density.source;
            let ctx = CheckContext::new(
                scenario.spec.clone(),
                scenario.grid.clone(),
                source,
                scenario.simulation(DENSITY_STREAM),
            )?
            .with_density_slices(scenario.config.density.slices);
            let series = ctx.density()?;
            let slice = &series.slices()[series.nearest(options.time.unwrap_or(scenario.spec.horizon))];
            match options.format {
                Format::Csv => write_density_csv(slice, &mut w)?,
                Format::Binary => write_density_binary(slice, &mut w)?,
            }
            derive_seed(scenario.seed, DENSITY_STREAM)
        }
    };
    w.flush()
        .map_err(CliError::io(format!("writing {}", options.out.display())))?;
    Ok(seed)
}
