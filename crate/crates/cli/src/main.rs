//! `kbal` command-line front end.
//!
//! Every run writes `report.json` into the output directory. The report holds
//! the resolved configuration, the tool version and the seed; `kbal replay
//! --report <path>` reruns it and reproduces the outputs byte for byte.

mod commands;
mod config;
mod error;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Cli, Command, RunConfig};
use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize, Deserialize)]
struct RunReport {
    tool: String,
    version: String,
    seed: u64,
    status: String,
    config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(default)]
    result: Value,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    if let Some(threads) = cli.common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| CliError::internal(e.to_string()))?;
    }
    let mut cfg = match cli.command {
        Command::Replay(args) => {
            let mut cfg = load_report(&args.report)?;
            if let Some(dir) = cli.common.output_dir {
                cfg.output_dir = dir;
            }
            cfg
        }
        command => RunConfig {
            output_dir: cli
                .common
                .output_dir
                .ok_or_else(|| CliError::input(format!("{} needs --output-dir", command.name())))?,
            seed: cli.common.seed,
            tol: cli.common.tol,
            max_iter: cli.common.max_iter,
            command,
        },
    };
    let outcome = commands::run(&mut cfg);
    let report = RunReport {
        tool: "kbal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        status: outcome.as_ref().map_or_else(|e| e.status().into(), |_| "ok".into()),
        error: outcome.as_ref().err().map(|e| e.to_string()),
        result: outcome.as_ref().ok().cloned().unwrap_or(Value::Null),
        config: cfg,
    };
    // the directory may not exist when validation failed early
    if report.config.output_dir.is_dir() {
        commands::write_json(&report.config.output_dir, "report.json", &report)?;
    }
    outcome.map(|_| ())
}

fn load_report(path: &Path) -> CliResult<RunConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    let report: RunReport =
        serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(report.config)
}
