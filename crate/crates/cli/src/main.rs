//! `kljn`: run scenarios, sweeps, plot extraction and the acceptance suite.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use kljn_sync::harness::{
    acceptance, bundled, bundled_names, emit_plot_data, run_scenario, sweep, sweep_table, RunReport,
    ScenarioConfig, SeedPolicy,
};

/// Reports go here unless the environment says otherwise.
const OUT_DIR_VAR: &str = "KLJN_OUT_DIR";

#[derive(Parser)]
#[command(name = "kljn", version, about = "KLJN clock synchronization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Seeds {
    Fixed,
    PerValue,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a TOML path or a bundled name) and write its report.
    Run { config: String },
    /// Run a scenario once per value of a numeric parameter.
    Sweep {
        config: String,
        /// Dotted field path, e.g. `clock.t0` or `attack.0.delta`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
        #[arg(long, value_enum, default_value = "fixed")]
        seed_policy: Seeds,
    },
    /// Print one series of a saved report as two-column text.
    Plot {
        report: PathBuf,
        #[arg(long)]
        series: String,
    },
    /// Run the acceptance suite, or one criterion of it.
    Verify {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=10))]
        criterion: Option<u8>,
    },
    /// List the bundled scenarios.
    List,
}

fn load(source: &str) -> Result<ScenarioConfig> {
    let path = Path::new(source);
    if path.exists() {
        let text = fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        return Ok(ScenarioConfig::from_toml(&text)?);
    }
    if bundled_names().any(|n| n == source) {
        return Ok(bundled(source)?);
    }
    bail!("`{source}` is neither a file nor a bundled scenario (try `kljn list`)")
}

fn out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from("out"), PathBuf::from)
}

fn write_report(report: &RunReport, file_name: &str) -> Result<PathBuf> {
    let dir = out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(file_name);
    fs::write(&path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn run(source: &str) -> Result<bool> {
    let config = load(source)?;
    let started = Instant::now();
    let report = run_scenario(&config)?;
    let elapsed = started.elapsed().as_secs_f64();
    let path = write_report(&report, &format!("{}.json", config.name))?;
    print!("{}", report.summary());
    println!("{:<18} {elapsed:.3} s", "wall clock");
    println!("{:<18} {}", "report", path.display());
    Ok(report.passed())
}

fn run_sweep(source: &str, param: &str, values: &[f64], seeds: Seeds) -> Result<bool> {
    let config = load(source)?;
    let policy = match seeds {
        Seeds::Fixed => SeedPolicy::Fixed,
        Seeds::PerValue => SeedPolicy::PerValue,
    };
    let rows = sweep(&config, param, values, policy)?;
    for (i, row) in rows.iter().enumerate() {
        write_report(&row.report, &format!("{}.sweep.{i}.json", config.name))?;
    }
    print!("{}", sweep_table(param, &rows));
    Ok(rows.iter().all(|r| r.report.passed()))
}

fn plot(report: &Path, series: &str) -> Result<bool> {
    let text = fs::read_to_string(report).with_context(|| format!("reading {}", report.display()))?;
    let report = RunReport::from_json(&text).with_context(|| format!("parsing {}", report.display()))?;
    print!("{}", emit_plot_data(&report, series)?);
    Ok(true)
}

fn verify(criterion: Option<u8>) -> bool {
    let ids: Vec<u8> = criterion.map_or_else(|| (1..=10).collect(), |c| vec![c]);
    let mut all = true;
    for id in ids {
        let report = acceptance::run_criterion(id).expect("criterion id in range");
        println!("{report}");
        all &= report.passed;
    }
    println!("acceptance: {}", if all { "PASS" } else { "FAIL" });
    all
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config } => run(&config),
        Command::Sweep { config, param, values, seed_policy } => run_sweep(&config, &param, &values, seed_policy),
        Command::Plot { report, series } => plot(&report, &series),
        Command::Verify { criterion } => Ok(verify(criterion)),
        Command::List => {
            bundled_names().for_each(|n| println!("{n}"));
            Ok(true)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
