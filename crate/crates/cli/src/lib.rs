//! Subcommands of the `opfield` binary, kept in a library so they can be
//! driven from tests with in-memory writers.

use clap::{Args, Parser, Subcommand};
use opfield::forms::PhiFunction;
use opfield::runner::{run_scenario, CheckKind, Report, RunConfig, Timings};
use opfield::scenarios::{build_named, Scenario, ScenarioEntry};
use opfield::Verdict;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] opfield::Error),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid OPFIELD_THREADS value `{0}`")]
    Threads(String),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "opfield", version, about = "Convergence checks for families of quadratic forms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the shipped scenarios.
    List {
        /// Emit JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Run checks on a named scenario or a scenario JSON file.
    Run(RunArgs),
    /// Write a scenario (shipped name or JSON file) as JSON.
    Export { scenario: String, path: PathBuf },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Scenario name, or a path to a scenario JSON file.
    pub scenario: String,
    /// Comma-separated subset of srs,mosco,g,fcalc,spectral,yosida,ms.
    #[arg(long, value_delimiter = ',')]
    pub checks: Option<Vec<String>>,
    /// Decay-rule tolerance; defaults to the scenario's own.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Report JSON path; a `.csv` and a `.meta.json` are written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub betas: Option<Vec<f64>>,
    /// Comma-separated names: inv1p, inv1p2, exp, bump[:cutoff].
    #[arg(long, value_delimiter = ',')]
    pub phis: Option<Vec<String>>,
}

/// Worker count from `OPFIELD_THREADS`, falling back to the machine.
pub fn threads_from_env(value: Option<&str>) -> CliResult<usize> {
    match value {
        None => Ok(RunConfig::default().threads),
        Some(v) => v.trim().parse::<usize>().ok().filter(|n| *n > 0).ok_or_else(|| CliError::Threads(v.to_string())),
    }
}

pub fn cmd_list(entries: &[ScenarioEntry], as_json: bool, out: &mut dyn Write) -> CliResult<()> {
    let stdout = Path::new("<stdout>");
    if as_json {
        let mut list = Vec::new();
        for e in entries {
            let s = (e.build)()?;
            list.push(json!({
                "name": e.name,
                "summary": e.summary,
                "labels": s.field.len(),
                "limit_dim": s.field.limit_fiber().dim(),
                "tol": s.tol,
                "expected": s.expected,
            }));
        }
        let text = serde_json::to_string_pretty(&serde_json::Value::Array(list)).map_err(opfield::Error::from)?;
        writeln!(out, "{text}").map_err(io_err(stdout))?;
        return Ok(());
    }
    for e in entries {
        let s = (e.build)()?;
        let expected: Vec<String> = s.expected.iter().map(|(c, v)| format!("{c}={v}")).collect();
        writeln!(out, "{:<24} {:<62} {}", e.name, e.summary, expected.join(" ")).map_err(io_err(stdout))?;
    }
    Ok(())
}

/// A path to an existing file or anything ending in `.json` is read from
/// disk; otherwise the argument names a shipped scenario or fixture.
pub fn load_scenario(arg: &str) -> CliResult<Scenario> {
    let path = Path::new(arg);
    if path.is_file() || arg.ends_with(".json") {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        return Ok(Scenario::from_json(&text)?);
    }
    Ok(build_named(arg)?)
}

pub fn run_config(args: &RunArgs, threads: usize) -> CliResult<RunConfig> {
    let mut cfg = RunConfig { tol: args.tol, seed: args.seed, threads, ..Default::default() };
    if let Some(c) = &args.checks {
        cfg.checks = Some(c.iter().map(|s| CheckKind::parse(s)).collect::<opfield::Result<_>>()?);
    }
    if let Some(l) = &args.lambdas {
        cfg.lambdas = l.clone();
    }
    if let Some(b) = &args.betas {
        cfg.betas = b.clone();
    }
    if let Some(p) = &args.phis {
        cfg.phis = p.iter().map(|s| PhiFunction::parse(s)).collect::<opfield::Result<_>>()?;
    }
    Ok(cfg)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

pub fn write_csv(report: &Report, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["scenario", "check", "param", "label", "value"])?;
    for (check, key, label, value) in report.trace_rows() {
        w.write_record([report.scenario.as_str(), check.name(), &key, &label.to_string(), &value.to_string()])?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_outputs(report: &Report, timings: &Timings, out: &Path) -> CliResult<()> {
    let (csv_path, meta) = (sibling(out, ".csv"), sibling(out, ".meta.json"));
    if csv_path == out || meta == out {
        let msg = format!("--out {} would be overwritten by its own .csv or .meta.json sibling", out.display());
        return Err(opfield::Error::ConfigParse(msg).into());
    }
    std::fs::write(out, report.to_json()?).map_err(io_err(out))?;
    write_csv(report, &csv_path)?;
    let text = serde_json::to_string_pretty(timings).map_err(opfield::Error::from)?;
    std::fs::write(&meta, text + "\n").map_err(io_err(&meta))?;
    Ok(())
}

/// Runs a scenario, writes outputs, prints one summary line per check to
/// `log`, and returns the overall verdict.
pub fn cmd_run(args: &RunArgs, threads: usize, out: &mut dyn Write, log: &mut dyn Write) -> CliResult<Verdict> {
    let cfg = run_config(args, threads)?;
    let scenario = load_scenario(&args.scenario)?;
    let (report, timings) = run_scenario(&scenario, &cfg)?;
    match &args.out {
        Some(path) => write_outputs(&report, &timings, path)?,
        None => out.write_all(report.to_json()?.as_bytes()).map_err(io_err(Path::new("<stdout>")))?,
    }
    let stderr = Path::new("<stderr>");
    for (check, o) in &report.checks {
        let mark = if o.matches { "ok" } else { "MISMATCH" };
        writeln!(log, "{:<9} {:<15} expected {:<15} {mark}", check.name(), o.report.verdict, o.expected)
            .map_err(io_err(stderr))?;
    }
    if let Some(eq) = &report.equivalence {
        writeln!(log, "equivalence agree: {}", eq.agree).map_err(io_err(stderr))?;
    }
    writeln!(log, "overall: {}", report.overall).map_err(io_err(stderr))?;
    Ok(report.overall)
}

pub fn cmd_export(scenario: &str, path: &Path) -> CliResult<()> {
    let s = load_scenario(scenario)?;
    std::fs::write(path, s.to_json()?).map_err(io_err(path))
}
