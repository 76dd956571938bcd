//! `rsrgx`: spectra, rule tables, decimation runs, phase scans and density
//! flows for the monitored two-leg ladder.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod model;
mod output;
mod svg;

use config::Ini;
use output::{CliError, Emit, Output};

#[derive(Parser)]
#[command(name = "rsrgx", version, about = "Strong-disorder renormalization of monitored ladders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact Lindbladian spectra of small ladders, with invariant checks.
    Spectrum(Common),
    /// Full decimation rule table and the reference-row regression.
    Rules(Common),
    /// One decimation run: snapshots, event log, final state.
    Rsrg(Common),
    /// Runs over a grid of β and seeds, classified by phase.
    PhaseScan(Common),
    /// Finite-volume integration of the density flow equations.
    FlowPde(Common),
}

#[derive(Args)]
struct Common {
    /// Configuration file (sections [model], [run], [output]).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides [output] dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed; overrides [run] seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma list of csv, jsonl, svg; overrides [output] emit.
    #[arg(long)]
    emit: Option<String>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Spectrum(_) => "spectrum",
            Command::Rules(_) => "rules",
            Command::Rsrg(_) => "rsrg",
            Command::PhaseScan(_) => "phase-scan",
            Command::FlowPde(_) => "flow-pde",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::Spectrum(c) | Command::Rules(c) | Command::Rsrg(c) | Command::PhaseScan(c) | Command::FlowPde(c) => c,
        }
    }
}

/// Config file merged with the command-line overrides.
fn load(command: &str, common: &Common) -> Result<(Ini, Output), CliError> {
    let mut ini = match &common.config {
        Some(path) => Ini::parse(&fs::read_to_string(path)?)?,
        None => Ini::default(),
    };
    if let Some(recorded) = ini.get("manifest", "command") {
        if recorded != command {
            return Err(config::ConfigError::Invalid(format!("manifest is for '{recorded}', not '{command}'")).into());
        }
    }
    if let Some(seed) = common.seed {
        ini.set("run", "seed", seed);
    }
    if let Some(emit) = &common.emit {
        ini.set("output", "emit", emit);
    }
    if let Some(out) = &common.out {
        ini.set("output", "dir", out.display());
    }
    let emit = ini.get("output", "emit").map(Emit::parse).transpose()?.unwrap_or_default();
    let dir = PathBuf::from(ini.get("output", "dir").unwrap_or("out"));
    ini.set("output", "emit", emit.render());
    ini.set("output", "dir", dir.display());
    let out = Output::create(&dir, emit)?;
    Ok((ini, out))
}

const OUTPUT_KEYS: &[&str] = &["dir", "emit"];
const MANIFEST_KEYS: &[&str] = &["command", "version", "files"];

fn execute(command: &Command) -> Result<(), CliError> {
    let name = command.name();
    let (ini, mut out) = load(name, command.common())?;
    let (model, run) = commands::keys(name);
    ini.check(&[("model", model), ("run", run), ("output", OUTPUT_KEYS), ("manifest", MANIFEST_KEYS)])?;
    let mut resolved = Ini::default();
    for key in OUTPUT_KEYS {
        resolved.set("output", key, ini.get("output", key).expect("resolved above"));
    }
    // The manifest is written even when the run fails, so the failure can be
    // reproduced from it.
    let result = match command {
        Command::Spectrum(_) => commands::spectrum::run(&ini, &mut resolved, &mut out),
        Command::Rules(_) => commands::rules::run(&ini, &mut resolved, &mut out),
        Command::Rsrg(_) => commands::rsrg::run(&ini, &mut resolved, &mut out),
        Command::PhaseScan(_) => commands::phase_scan::run(&ini, &mut resolved, &mut out),
        Command::FlowPde(_) => commands::flow_pde::run(&ini, &mut resolved, &mut out),
    };
    out.manifest(name, &resolved)?;
    result
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Usage errors are configuration errors; help and version are not.
            return if e.use_stderr() { ExitCode::from(output::EXIT_CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("rsrgx {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
