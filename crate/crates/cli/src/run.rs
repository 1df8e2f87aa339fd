//! Scenario orchestration: densities first, then every check concurrently,
//! then serialized artifact writing.

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nelsonlab_core::characterize::{CheckContext, CheckRegistry, CheckReport, Verdict};
use nelsonlab_core::density::DensityTimeSeries;
use nelsonlab_core::io::write_field_csv;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;
use crate::scenario::{derive_seed, Scenario, ScenarioConfig, DENSITY_STREAM};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed_override: Option<u64>,
    /// Omit wall-clock data so reruns are byte-identical.
    pub canonical: bool,
    pub threads: Option<usize>,
}

/// How a check's verdict counts toward the exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Passed, or produced the verdict the scenario expected.
    Ok,
    Fail,
    Inconclusive,
    Error,
}

impl Outcome {
    pub fn of(verdict: Verdict, expected: Option<Verdict>) -> Self {
        match (verdict, expected) {
            (v, Some(e)) if v == e => Outcome::Ok,
            (Verdict::Inconclusive, _) => Outcome::Inconclusive,
            (Verdict::Pass, None) => Outcome::Ok,
            _ => Outcome::Fail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub index: usize,
    pub check: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Verdict>,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// First gated residual, for the console summary.
    #[serde(skip)]
    pub headline: Option<(String, f64, f64)>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub scenario: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub results: Vec<CheckResult>,
    pub exit_code: i32,
}

/// 70 if any check errored, else 2 for any unexpected failure, else 3 for any
/// unexpected inconclusive verdict, else 0.
pub fn exit_code(results: &[CheckResult]) -> i32 {
    let has = |o: Outcome| results.iter().any(|r| r.outcome == o);
    if has(Outcome::Error) {
        70
    } else if has(Outcome::Fail) {
        2
    } else if has(Outcome::Inconclusive) {
        3
    } else {
        0
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    config_file: &'static str,
    config_sha256: String,
    seed: u64,
    check_seeds: Vec<u64>,
    density_seed: u64,
    versions: BTreeMap<&'static str, &'static str>,
    config: &'a ScenarioConfig,
    results: &'a [CheckResult],
    exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    created_unix: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runtime_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<usize>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Thread count from the flag, then `NELSONLAB_THREADS`, then rayon's default.
pub fn thread_pool(threads: Option<usize>) -> Result<rayon::ThreadPool, CliError> {
    let threads =
        match threads {
            Some(n) => Some(n),
            None => match std::env::var("NELSONLAB_THREADS") {
                Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
                    CliError::Config(format!("NELSONLAB_THREADS must be a positive integer, got `{v}`"))
                })?),
                Err(_) => None,
            },
        };
    if threads == Some(0) {
        return Err(CliError::Config("thread count must be positive".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

pub fn run_scenario(config: ScenarioConfig, options: &RunOptions) -> Result<RunSummary, CliError> {
    let started = Instant::now();
    let scenario = config.resolve(options.seed_override)?;
    let pool = thread_pool(options.threads)?;
    let out_dir = options
        .out
        .clone()
        .or_else(|| scenario.config.output.clone())
        .unwrap_or_else(|| Path::new("runs").join(&scenario.config.name));

    let reports = pool.install(|| execute(&scenario, options.canonical));

    let mut resolved = scenario.config.clone();
    resolved.output = None;
    let resolved_toml = resolved.to_toml();

    let reports_dir = out_dir.join("reports");
    fs::create_dir_all(&reports_dir).map_err(CliError::io(format!("creating {}", reports_dir.display())))?;
    let seeds = scenario.check_seeds();
    let mut results = Vec::with_capacity(reports.len());
    for (index, (check, report)) in scenario.config.checks.iter().zip(reports).enumerate() {
        let mut result = CheckResult {
            index,
            check: check.check.clone(),
            seed: seeds[index],
            verdict: None,
            expected: check.expect,
            outcome: Outcome::Error,
            report: None,
            error: None,
            headline: None,
        };
        match report {
            Ok(report) => {
                let name = format!("{index:02}_{}.json", check.check);
                write_text(&reports_dir.join(&name), &report.to_json())?;
                if scenario.config.write_fields {
                    write_fields(&out_dir, index, &report)?;
                }
                result.verdict = Some(report.verdict);
                result.outcome = Outcome::of(report.verdict, check.expect);
                result.report = Some(format!("reports/{name}"));
                result.headline = report
                    .residuals
                    .iter()
                    .find_map(|r| r.tolerance.map(|tol| (r.name.clone(), r.value, tol)));
            }
            Err(e) => result.error = Some(e.to_string()),
        }
        results.push(result);
    }
    let code = exit_code(&results);

    write_text(&out_dir.join("resolved.toml"), &resolved_toml)?;
    let manifest = Manifest {
        scenario: &resolved.name,
        config_file: "resolved.toml",
        config_sha256: sha256_hex(resolved_toml.as_bytes()),
        seed: scenario.seed,
        check_seeds: seeds,
        density_seed: derive_seed(scenario.seed, DENSITY_STREAM),
        versions: BTreeMap::from([
            ("nelsonlab", env!("CARGO_PKG_VERSION")),
            ("nelsonlab-core", nelsonlab_core::VERSION),
        ]),
        config: &resolved,
        results: &results,
        exit_code: code,
        created_unix: (!options.canonical).then(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        }),
        runtime_seconds: (!options.canonical).then(|| started.elapsed().as_secs_f64()),
        threads: (!options.canonical).then(|| pool.current_num_threads()),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifests serialise");
    write_text(&out_dir.join("manifest.json"), &json)?;

    Ok(RunSummary {
        scenario: resolved.name,
        out_dir,
        seed: scenario.seed,
        results,
        exit_code: code,
    })
}

/// Runs every check. Density series are built once per source and shared.
fn execute(scenario: &Scenario, canonical: bool) -> Vec<nelsonlab_core::Result<CheckReport>> {
    let config = &scenario.config;
    let mut sources: Vec<&str> = config
        .checks
        .iter()
        .filter(|c| c.needs_density())
        .map(|c| scenario.source_of(c))
        .collect();
    sources.sort_unstable();
    sources.dedup();
    let densities: BTreeMap<&str, nelsonlab_core::Result<Arc<DensityTimeSeries>>> = sources
        .par_iter()
        .map(|&name| {
            let series = context(scenario, name, DENSITY_STREAM).and_then(|ctx| ctx.density());
            (name, series)
        })
        .collect();

    let registry = CheckRegistry::builtin();
    config
        .checks
        .par_iter()
        .enumerate()
        .map(|(i, check)| {
            let source = scenario.source_of(check);
            let mut ctx = context(scenario, source, i as u64)?;
            if check.needs_density() {
                ctx = ctx.with_density(densities[source].clone()?);
            }
            let t0 = Instant::now();
            let mut report = registry.run(&ctx, check)?;
            if !canonical {
                report.runtime_seconds = Some(t0.elapsed().as_secs_f64());
            }
            Ok(report)
        })
        .collect()
}

fn context(scenario: &Scenario, source: &str, stream: u64) -> nelsonlab_core::Result<CheckContext> {
    Ok(CheckContext::new(
        scenario.spec.clone(),
        scenario.grid.clone(),
        source,
        scenario.simulation(stream),
    )?
    .with_density_slices(scenario.config.density.slices))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(CliError::io(format!("writing {}", path.display())))
}

fn write_fields(out_dir: &Path, index: usize, report: &CheckReport) -> Result<(), CliError> {
    if report.fields.is_empty() {
        return Ok(());
    }
    let dir = out_dir.join("fields");
    fs::create_dir_all(&dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
    for (name, field) in &report.fields {
        let path = dir.join(format!("{index:02}_{}_{name}.csv", report.check));
        let file = fs::File::create(&path).map_err(CliError::io(format!("creating {}", path.display())))?;
        write_field_csv(field, BufWriter::new(file))?;
    }
    Ok(())
}
