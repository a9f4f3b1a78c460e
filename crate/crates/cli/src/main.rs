//! `hypojump` command-line driver.
//!
//! Exit status: 0 when every asserted check passes, 1 when a check fails,
//! 2 for configuration or usage errors, 3 for numeric failures.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::Parser;
use hypojump::Executor;
use serde_json::json;

mod commands;
mod config;
mod output;

use commands::Command;
use config::{ConfigError, LoadedConfig};
use output::{file_name, Format, RunManifest};

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "hypojump", version, about = "Monte Carlo experiments for jump-driven degenerate SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Overrides `run.paths`.
    #[arg(long, global = true)]
    paths: Option<usize>,

    /// Worker threads; 0 uses every core, 1 runs sequentially.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    #[arg(long, global = true, default_value = "hypojump-out")]
    out_dir: PathBuf,

    /// Format of the data files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

fn load(cli: &Cli) -> Result<LoadedConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => config::parse_config(path)?,
        None => LoadedConfig::defaults(),
    };
    if let Some(seed) = cli.seed {
        cfg.config.run.seed = seed;
    }
    if let Some(paths) = cli.paths {
        cfg.config.run.paths = paths;
    }
    Ok(cfg)
}

fn is_config_error(err: &anyhow::Error) -> bool {
    use hypojump::Error;
    matches!(
        err.downcast_ref::<Error>(),
        Some(Error::Config(_) | Error::Domain(_) | Error::Dimension { .. })
    )
}

struct Run<'a> {
    cli: &'a Cli,
    cfg: &'a LoadedConfig,
    timings: BTreeMap<String, f64>,
    files: Vec<String>,
}

impl Run<'_> {
    fn manifest(&self, passed: Option<bool>, workers: usize) -> RunManifest {
        RunManifest {
            schema: output::MANIFEST_SCHEMA,
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command: self.cli.command.name().into(),
            config_file: self.cfg.file.clone(),
            config_digest: self.cfg.digest(),
            seed: self.cfg.config.run.seed,
            paths: self.cfg.config.run.paths,
            workers,
            format: self.cli.format,
            passed,
            timings: self.timings.clone(),
            files: self.files.clone(),
        }
    }

    fn finish(&self, dir: &Path, passed: Option<bool>, workers: usize) -> Result<()> {
        let value = serde_json::to_value(self.manifest(passed, workers))?;
        output::write_json(&dir.join("manifest.json"), &value)
    }
}

fn execute(cli: &Cli, cfg: &LoadedConfig) -> Result<u8> {
    let dir = &cli.out_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    let exec = Executor::new(cli.workers);
    let mut run = Run { cli, cfg, timings: BTreeMap::new(), files: Vec::new() };
    let name = cli.command.name();
    log::info!("{name}: {} paths, seed {}, {} workers", cfg.config.run.paths, cfg.config.run.seed, exec.workers());

    let started = Instant::now();
    let result = cli.command.run(cfg, &exec);
    run.timings.insert(name.to_string(), started.elapsed().as_secs_f64());

    let outcome = match result {
        Ok(o) => o,
        Err(err) => {
            let config = is_config_error(&err);
            let diagnostic = json!({
                "schema": output::ERROR_SCHEMA,
                "command": name,
                "kind": if config { "config" } else { "numeric" },
                "message": format!("{err:#}"),
            });
            eprintln!("{}", serde_json::to_string(&diagnostic)?);
            let path = dir.join("error.json");
            output::write_json(&path, &diagnostic)?;
            run.files.push(file_name(&path));
            run.finish(dir, None, exec.workers())?;
            return Ok(if config { EXIT_CONFIG } else { EXIT_NUMERIC });
        }
    };

    let started = Instant::now();
    for table in &outcome.tables {
        let path = output::write_table(dir, table, cli.format)?;
        run.files.push(file_name(&path));
    }
    let summary_path = dir.join("summary.json");
    output::write_json(&summary_path, &output::summary(name, &outcome))?;
    run.files.push(file_name(&summary_path));
    run.timings.insert("write".into(), started.elapsed().as_secs_f64());
    run.finish(dir, Some(outcome.passed()), exec.workers())?;

    for check in &outcome.checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!("{verdict} {name}: {}{}", check.name, check.value.map_or(String::new(), |v| format!(" = {v:.4}")));
    }
    Ok(if outcome.passed() { 0 } else { EXIT_CHECK_FAILED })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(cfg) => cfg,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    match execute(&cli, &cfg) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}
