mod config;
mod plan;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::builder::PossibleValuesParser;
use clap::Parser;
use serde_json::json;

use config::{Kind, RunConfig, UsageError};

const SUBCOMMANDS: [&str; 9] = [
    "run",
    "describe",
    "solve-elliptic",
    "solve-normalized",
    "evolve",
    "stability-elliptic",
    "stability-parabolic",
    "varying-forms",
    "verify-oracles",
];

/// Numerical laboratory for complex Monge-Ampere equations on flat tori.
///
/// `run` executes the experiment named by the configuration's `kind`;
/// `describe` prints the plan without computing. Naming a kind as the
/// subcommand runs that kind.
#[derive(Parser, Debug)]
#[command(name = "malab", version)]
struct Cli {
    #[arg(value_parser = PossibleValuesParser::new(SUBCOMMANDS))]
    subcommand: String,
    /// JSON configuration, or the manifest.json of an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("malab: {e:#}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("malab: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<ExitCode> {
    let mut config = RunConfig::load(&cli.config)?;
    if let Some(kind) = Kind::from_name(&cli.subcommand) {
        match config.kind {
            Some(k) if k != kind => {
                return Err(UsageError(format!("subcommand {kind} but configuration kind {k}")).into());
            }
            _ => config.kind = Some(kind),
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let resolved = config.resolve()?;
    let plan = plan::describe(&config, &resolved);
    if cli.subcommand == "describe" {
        print!("{plan}");
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(UsageError("--threads must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("malab-out"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join("plan.txt"), &plan)?;

    let start = Instant::now();
    let result = run::execute(&config, &resolved, &out);
    let wall = start.elapsed().as_secs_f64();
    let threads = rayon::current_num_threads();
    match result {
        Ok(outcome) => {
            let manifest = json!({
                "malab_version": env!("CARGO_PKG_VERSION"),
                "kind": resolved.kind,
                "config": config,
                "threads": threads,
                "wall_time_seconds": wall,
                "passed": outcome.passed,
                "outputs": outcome.outputs,
                "summary": outcome.summary,
            });
            write_manifest(&out, &manifest)?;
            println!(
                "{} {}: {}",
                resolved.kind,
                if outcome.passed { "passed" } else { "FAILED" },
                outcome.summary
            );
            Ok(if outcome.passed { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Err(e) => {
            let diagnostic = json!({
                "malab_version": env!("CARGO_PKG_VERSION"),
                "kind": resolved.kind,
                "config": config,
                "wall_time_seconds": wall,
                "error": e.to_string(),
                "error_debug": format!("{e:?}"),
            });
            std::fs::write(out.join("diagnostic.json"), serde_json::to_vec_pretty(&diagnostic)?)?;
            eprintln!("{}", serde_json::to_string_pretty(&diagnostic)?);
            Ok(ExitCode::from(1))
        }
    }
}

fn write_manifest(dir: &Path, manifest: &serde_json::Value) -> anyhow::Result<()> {
    std::fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(manifest)?)?;
    Ok(())
}
