use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use dipolar_core::scenario::{load_config_text, run_scenario, Scenario, ScenarioName};
use dipolar_core::{Error, Result};

/// Scenario runner for dipolar-crystal gate design.
#[derive(Debug, Parser)]
#[command(name = "dipolar-sim", version)]
struct Cli {
    /// `key = value` config file, or a manifest written by a previous run.
    #[arg(long)]
    config: Option<PathBuf>,

    /// stark_spectrum, two_molecule_trap, chain_spectrum, marker_local_modes,
    /// pmi_two_molecule, gate_map or tweezer_window.
    #[arg(long)]
    scenario: Option<String>,

    /// Override a config key, e.g. `--set epsilon=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output prefix; files are written as `<prefix>_<name>.csv`.
    #[arg(long, default_value = "out/run")]
    out: PathBuf,

    /// Worker threads for sweeps (0 = all cores).
    #[arg(long, env = "DIPOLAR_SIM_WORKERS", default_value_t = 0)]
    workers: usize,
}

fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::Config { line: 0, reason: format!("--set expects KEY=VALUE, got `{s}`") })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn run(cli: &Cli) -> Result<i32> {
    let name = cli.scenario.as_deref().map(str::parse::<ScenarioName>).transpose()?;
    let text = match &cli.config {
        Some(path) => load_config_text(&std::fs::read_to_string(path)?)?,
        None => String::new(),
    };
    let overrides = cli.overrides.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    let base = if text.trim().is_empty() {
        Scenario::new(name.ok_or_else(|| Error::Config { line: 0, reason: "no scenario given".into() })?)
    } else {
        Scenario::from_config_str(&text, name)?
    };
    let scenario = base.with_overrides(&overrides)?;
    let manifest = run_scenario(&scenario, &cli.out, cli.workers)?;
    println!(
        "{}: {} files, {}/{} points ok",
        manifest.scenario,
        manifest.files.len() + 1,
        manifest.rows.ok,
        manifest.rows.total
    );
    if !manifest.passed() {
        eprintln!(
            "error: kind=sweep_failure msg=\"only {}/{} grid points succeeded\"",
            manifest.rows.ok, manifest.rows.total
        );
        return Ok(1);
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let msg = e.to_string().replace('\\', "\\\\").replace('"', "\\\"").replace('\n', " ");
            eprintln!("error: kind={} msg=\"{}\"", e.kind(), msg);
            ExitCode::from(2)
        }
    }
}
