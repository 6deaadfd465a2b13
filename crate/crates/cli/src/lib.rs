//! Command-line driver for `shadowlab`: JSON configs in, JSON/CSV reports and a manifest out.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use schemars::{schema_for, Schema};
use serde::Serialize;

use commands::{ClassifyReport, ConjugacyReport, Failure, Outcome, ShadowBatchReport};
use config::ExperimentConfig;
use manifest::{sha256_hex, OutputFile, RunManifest};

pub const SEED_ENV: &str = "SHADOWLAB_SEED";

/// Every schema the tool publishes, by file name.
pub fn schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("config.schema.json", schema_for!(ExperimentConfig)),
        ("classify_report.schema.json", schema_for!(ClassifyReport)),
        ("shadow_report.schema.json", schema_for!(ShadowBatchReport)),
        ("conjugacy_report.schema.json", schema_for!(ConjugacyReport)),
        ("manifest.schema.json", schema_for!(RunManifest)),
    ]
}

pub fn to_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    s
}

pub fn write_schemas(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    for (name, schema) in schemas() {
        let path = dir.join(name);
        std::fs::write(&path, to_pretty(&schema)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Validates `value` against `schema`, returning one message per violation.
pub fn schema_errors(schema: &Schema, value: &serde_json::Value) -> Vec<String> {
    let schema = serde_json::to_value(schema).expect("schema serializes");
    let validator = jsonschema::validator_for(&schema).expect("generated schemas are valid");
    validator
        .iter_errors(value)
        .map(|e| {
            let path = e.instance_path().to_string();
            if path.is_empty() {
                e.to_string()
            } else {
                format!("{path}: {e}")
            }
        })
        .collect()
}

/// Schema validation, then typed parsing, then semantic checks of the operator and space.
pub fn parse_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    let raw: serde_json::Value = serde_json::from_str(text).context("config is not valid JSON")?;
    let errors = schema_errors(&schema_for!(ExperimentConfig), &raw);
    if !errors.is_empty() {
        bail!("config does not match the schema:\n  {}", errors.join("\n  "));
    }
    let cfg: ExperimentConfig = serde_json::from_value(raw).context("config could not be parsed")?;
    semantic_check(&cfg)?;
    Ok(cfg)
}

fn semantic_check(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    use config::{ConjugacyTask, OperatorSpec};
    let check_op = |op: &OperatorSpec| -> shadowlab::Result<()> {
        match op {
            OperatorSpec::Multiplication(m) => m.check(),
            other => other.sequence_operator().expect("sequence operator").check(),
        }
    };
    match cfg {
        ExperimentConfig::Classify(c) => {
            check_op(&c.operator)?;
            if let Some(s) = &c.space {
                s.check()?;
            }
        }
        ExperimentConfig::Shadow(c) => {
            if let Some(op) = &c.operator {
                check_op(op)?;
            }
            if let Some(s) = &c.space {
                s.check()?;
            }
        }
        ExperimentConfig::Conjugacy(c) => match &c.task {
            ConjugacyTask::Semiconjugacy { operator, space, perturbation, .. } => {
                check_op(operator)?;
                space.check()?;
                perturbation.check()?;
            }
            ConjugacyTask::Homeomorphism { space, .. } => space.check()?,
        },
    }
    Ok(())
}

/// Options shared by the three experiment commands.
#[derive(Clone, Debug)]
pub struct RunOptions {
    pub config: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
}

/// Summary printed to stdout.
#[derive(Serialize)]
pub struct Summary {
    pub command: String,
    pub outcome: Outcome,
    pub exit_code: i32,
    pub message: Option<String>,
    pub out_dir: String,
    pub outputs: Vec<String>,
}

/// `--seed`, then the environment, then the config.
pub fn effective_seed(cli: Option<u64>, config_seed: u64) -> anyhow::Result<u64> {
    if let Some(s) = cli {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().with_context(|| format!("{SEED_ENV}={v:?} is not an unsigned integer")),
        Err(_) => Ok(config_seed),
    }
}

/// Report file name and body, CSV traces, and the outcome.
type Executed = (String, String, Vec<(String, String)>, Outcome);

fn execute(cfg: &ExperimentConfig) -> Result<Executed, Failure> {
    let name = format!("{}_report.json", cfg.command());
    match cfg {
        ExperimentConfig::Classify(c) => {
            let (r, o) = commands::classify(c)?;
            Ok((name, to_pretty(&r), Vec::new(), o))
        }
        ExperimentConfig::Shadow(c) => {
            let (r, o) = commands::shadow(c)?;
            let csv = if c.csv {
                r.trials.iter().map(|t| (format!("shadow_trace_seed{}.csv", t.seed), t.report.to_csv())).collect()
            } else {
                Vec::new()
            };
            Ok((name, to_pretty(&r), csv, o))
        }
        ExperimentConfig::Conjugacy(c) => {
            let (r, o) = commands::conjugacy(c)?;
            Ok((name, to_pretty(&r), Vec::new(), o))
        }
    }
}

/// Runs one experiment and writes its files; the return value is the process exit code.
pub fn run_experiment(command: &str, opts: &RunOptions) -> anyhow::Result<i32> {
    let started = Instant::now();
    let started_unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let text = std::fs::read_to_string(&opts.config).with_context(|| format!("reading {}", opts.config.display()))?;
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(Outcome::BadInput.code());
        }
    };
    if cfg.command() != command {
        eprintln!("error: config is for `{}`, not `{command}`", cfg.command());
        return Ok(Outcome::BadInput.code());
    }
    let seed = match effective_seed(opts.seed, cfg.seed()) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e:#}");
            return Ok(Outcome::BadInput.code());
        }
    };
    cfg.set_seed(seed);
    let jobs = opts.jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)).max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building thread pool")?;
    let result = pool.install(|| execute(&cfg));

    std::fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    let mut outputs = Vec::new();
    let (outcome, message) = match result {
        Ok((name, report, csv, outcome)) => {
            outputs.push(OutputFile::write(&opts.out, &name, report.as_bytes())?);
            for (file, body) in csv {
                outputs.push(OutputFile::write(&opts.out, &file, body.as_bytes())?);
            }
            (outcome, None)
        }
        Err(f) => {
            let body = serde_json::json!({ "outcome": f.outcome, "error": f.message, "details": f.details });
            outputs.push(OutputFile::write(&opts.out, &format!("{command}_error.json"), to_pretty(&body).as_bytes())?);
            eprintln!("error: {}", f.message);
            (f.outcome, Some(f.message))
        }
    };
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_path: opts.config.display().to_string(),
        config_sha256: sha256_hex(text.as_bytes()),
        effective_config: cfg,
        seed,
        jobs,
        started_unix_ms,
        duration_ms: started.elapsed().as_millis(),
        outputs: outputs.clone(),
        outcome,
        exit_code: outcome.code(),
        message: message.clone(),
    };
    std::fs::write(opts.out.join("manifest.json"), to_pretty(&manifest))?;
    let summary = Summary {
        command: command.to_string(),
        outcome,
        exit_code: outcome.code(),
        message,
        out_dir: opts.out.display().to_string(),
        outputs: outputs.into_iter().map(|o| o.path).collect(),
    };
    print!("{}", to_pretty(&summary));
    Ok(outcome.code())
}
