//! `enso`: run one workflow from a TOML config.
//!
//! On success the written file paths are printed to stdout as JSON. On
//! failure a JSON object `{"error": {"kind", "message"}}` goes to stderr and
//! the exit code is 1.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Command, RunConfig};
use run::Outputs;

#[derive(Debug, Parser)]
#[command(name = "enso", version, about = "Simulate, learn and validate stochastic ENSO models")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Integrate a catalog model.
    Simulate,
    /// Select a sparse structure and fit it.
    Learn,
    /// Learn a model with hidden variables.
    LatentLearn,
    /// Recover hidden variables with the ensemble smoother.
    Assimilate,
    /// Compute the statistical validation report.
    Validate,
}

impl Cmd {
    fn command(&self) -> Command {
        match self {
            Cmd::Simulate => Command::Simulate,
            Cmd::Learn => Command::Learn,
            Cmd::LatentLearn => Command::LatentLearn,
            Cmd::Assimilate => Command::Assimilate,
            Cmd::Validate => Command::Validate,
        }
    }
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if let Some(e) = err.downcast_ref::<enso_core::Error>() {
        return e.kind();
    }
    if err.downcast_ref::<toml::de::Error>().is_some() {
        return "config";
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    "invalid_config"
}

fn execute(cli: &Cli) -> anyhow::Result<Vec<PathBuf>> {
    let Some(path) = &cli.common.config else {
        anyhow::bail!("--config is required");
    };
    let cfg = RunConfig::load(path)?;
    let cmd = cli.command.command();
    cfg.check_command(cmd)?;

    let level = cfg.log_level.as_deref().unwrap_or("warn");
    let _ = env_logger::Builder::new().parse_filters(level).parse_default_env().try_init();
    if let Some(n) = cli.common.threads {
        if n == 0 {
            anyhow::bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }

    let seed = cli.common.seed.or(cfg.seed).unwrap_or(0);
    let dir = cli.common.out.clone().or(cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut out = Outputs::new(&dir)?;
    match cmd {
        Command::Simulate => run::simulate(cfg.simulate.as_ref().expect("checked"), seed, &mut out)?,
        Command::Learn => run::learn_cmd(cfg.learn.as_ref().expect("checked"), seed, &mut out)?,
        Command::LatentLearn => run::latent_learn(cfg.latent_learn.as_ref().expect("checked"), seed, &mut out)?,
        Command::Assimilate => run::assimilate(cfg.assimilate.as_ref().expect("checked"), seed, &mut out)?,
        Command::Validate => run::validate_cmd(cfg.validate.as_ref().expect("checked"), seed, &mut out)?,
    }
    Ok(out.written)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(files) => {
            println!("{}", json!({ "status": "ok", "files": files }));
            ExitCode::SUCCESS
        }
        Err(err) => {
            let message = format!("{err:#}");
            eprintln!("{}", json!({ "error": { "kind": error_kind(&err), "message": message } }));
            ExitCode::FAILURE
        }
    }
}
