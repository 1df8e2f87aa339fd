use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nelsonlab::export::{export, ExportKind, ExportOptions, Format};
use nelsonlab::run::{run_scenario, Outcome, RunOptions, RunSummary};
use nelsonlab::{bundled, describe, list_scenarios, CliError, ScenarioConfig};

/// Nelson-derivative characterization lab for constant-noise diffusions.
#[derive(Parser)]
#[command(name = "nelsonlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Scenario file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled scenario name; see `list-scenarios`.
    #[arg(long)]
    scenario: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ScenarioConfig, CliError> {
        match (&self.config, &self.scenario) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("reading {}: {e}", path.display())))?;
                ScenarioConfig::parse(&text)
            }
            (None, Some(name)) => bundled::load(name),
            (None, None) => unreachable!("clap requires one source"),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write reports, fields and a manifest.
    Run {
        #[command(flatten)]
        source: Source,
        /// Output directory; defaults to the config's `output` or runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Leave timestamps, runtimes and thread counts out of the artifacts.
        #[arg(long)]
        canonical_output: bool,
        /// Worker threads; falls back to NELSONLAB_THREADS.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the bundled scenarios.
    ListScenarios,
    /// Print the relation behind a check (or a drift family's formula).
    Describe { name: String },
    /// Write a scenario's ensemble or density to a file.
    Export {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        kind: ExportKind,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        out: PathBuf,
        /// Density time; defaults to the horizon.
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        seed_override: Option<u64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn print_summary(summary: &RunSummary) {
    println!("scenario {} (seed {})", summary.scenario, summary.seed);
    for r in &summary.results {
        let verdict = r
            .verdict
            .map(|v| format!("{v:?}").to_lowercase())
            .unwrap_or_else(|| "error".into());
        let expected = r
            .expected
            .map(|e| format!(" (expected {e:?})").to_lowercase())
            .unwrap_or_default();
        let detail = match (&r.headline, &r.error) {
            (_, Some(e)) => e.clone(),
            (Some((name, value, tol)), _) => format!("{name} = {value:.3e}, tol {tol:.1e}"),
            _ => String::new(),
        };
        let mark = if r.outcome == Outcome::Ok { "ok " } else { "!! " };
        println!("  {mark}{:02} {:<26} {verdict}{expected}  {detail}", r.index, r.check);
    }
    println!("artifacts in {}", summary.out_dir.display());
}

fn execute(command: Command) -> Result<i32, CliError> {
    match command {
        Command::Run {
            source,
            out,
            seed_override,
            canonical_output,
            threads,
        } => {
            let options = RunOptions {
                out,
                seed_override,
                canonical: canonical_output,
                threads,
            };
            let summary = run_scenario(source.load()?, &options)?;
            print_summary(&summary);
            for r in summary.results.iter().filter(|r| r.error.is_some()) {
                eprintln!(
                    "error in check {} ({}): {}",
                    r.index,
                    r.check,
                    r.error.as_deref().unwrap_or("")
                );
            }
            Ok(summary.exit_code)
        }
        Command::ListScenarios => {
            print!("{}", list_scenarios());
            Ok(0)
        }
        Command::Describe { name } => {
            print!("{}", describe(&name)?);
            Ok(0)
        }
        Command::Export {
            source,
            kind,
            format,
            out,
            time,
            seed_override,
            threads,
        } => {
            let options = ExportOptions {
                kind,
                format,
                out,
                seed_override,
                time,
            };
            let config = source.load()?;
            let pool = nelsonlab::run::thread_pool(threads)?;
            let seed = pool.install(|| export(config, &options))?;
            println!("wrote {} (seed {seed})", options.out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 64 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("nelsonlab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
