use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shadowlab_cli::{parse_config, run_experiment, write_schemas, RunOptions};

#[derive(Parser)]
#[command(name = "shadowlab", version, about = "Shadowing and hyperbolicity experiments for weighted shifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports and the manifest.
    #[arg(long, default_value = "shadowlab-out")]
    out: PathBuf,
    /// Overrides SHADOWLAB_SEED and the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Hyperbolicity and expansivity classification.
    Classify(RunArgs),
    /// Shadowing-point synthesis and verification.
    Shadow(RunArgs),
    /// Semiconjugacy series and ball homeomorphisms.
    Conjugacy(RunArgs),
    /// Check a config against the schema without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Write JSON schemas for configs, reports and manifests.
    Schema {
        #[arg(long, default_value = "docs/schema")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = |name: &str, a: RunArgs| {
        run_experiment(name, &RunOptions { config: a.config, out: a.out, seed: a.seed, jobs: a.jobs })
    };
    let result = match cli.command {
        Command::Classify(a) => run("classify", a),
        Command::Shadow(a) => run("shadow", a),
        Command::Conjugacy(a) => run("conjugacy", a),
        Command::Validate { config } => std::fs::read_to_string(&config)
            .map_err(anyhow::Error::from)
            .and_then(|t| parse_config(&t))
            .map(|cfg| {
                println!("ok: {} config", cfg.command());
                0
            })
            .or_else(|e| {
                eprintln!("error: {e:#}");
                Ok(2)
            }),
        Command::Schema { out } => write_schemas(&out).map(|paths| {
            for p in paths {
                println!("{}", p.display());
            }
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
