//! `bdlattice CONFIG [--seed N] [--workers N] [--print-config]`
//!
//! Runs one experiment and writes its artifacts and `manifest.json` into
//! the output directory: the config's `output` key, else `$BDLATTICE_OUT`,
//! else `bdlattice-out`. Exit codes: 0 success, 1 I/O failure, 2 config
//! error, 3 failed check, 4 explosion guard. Failures print one JSON line
//! on stderr.

mod config;
mod experiments;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::Parser;
use serde::Serialize;
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use experiments::{dispatch, Failure, Outcome};

#[derive(Parser)]
#[command(name = "bdlattice", version, about = "Lattice birth-and-death experiment runner")]
struct Args {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replicate worker threads; 0 uses every core. Outputs do not depend
    /// on it.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Prints the resolved config as JSON and exits without running.
    #[arg(long)]
    print_config: bool,
}

const OUT_ENV: &str = "BDLATTICE_OUT";
const DEFAULT_OUT: &str = "bdlattice-out";

fn sha256(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Serialize)]
struct OutputEntry {
    file: String,
    bytes: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    tool: &'static str,
    version: &'static str,
    experiment: &'static str,
    seed: u64,
    config: serde_json::Value,
    config_hash: String,
    outputs: Vec<OutputEntry>,
    /// Hash over the sorted `(file, sha256)` list.
    content_hash: String,
    /// `"pass"`, `"fail"` or `"n/a"`.
    checks: &'static str,
    created_unix: u64,
}

fn load(args: &Args) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg.resolve()?)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output
        .clone()
        .or_else(|| std::env::var(OUT_ENV).ok().filter(|s| !s.is_empty()))
        .unwrap_or_else(|| DEFAULT_OUT.to_string())
        .into()
}

fn write(dir: &Path, name: &str, body: &[u8]) -> Result<(), Failure> {
    std::fs::write(dir.join(name), body)
        .map_err(|e| Failure::Io(format!("cannot write {}: {e}", dir.join(name).display())))
}

fn publish(cfg: &ExperimentConfig, config_hash: String, outcome: &Outcome) -> Result<(), Failure> {
    let dir = out_dir(cfg);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))?;
    let mut outputs = Vec::with_capacity(outcome.files.len());
    for (name, body) in &outcome.files {
        write(&dir, name, body.as_bytes())?;
        outputs.push(OutputEntry {
            file: name.clone(),
            bytes: body.len(),
            sha256: sha256(body.as_bytes()),
        });
    }
    outputs.sort_by(|a, b| a.file.cmp(&b.file));
    let listing: String = outputs.iter().map(|o| format!("{}\t{}\n", o.file, o.sha256)).collect();
    let manifest = Manifest {
        tool: "bdlattice",
        version: env!("CARGO_PKG_VERSION"),
        experiment: cfg.experiment.tag(),
        seed: cfg.seed,
        config: cfg.to_json(),
        config_hash,
        content_hash: sha256(listing.as_bytes()),
        outputs,
        checks: match outcome.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "n/a",
        },
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write(&dir, "manifest.json", text.as_bytes())
}

fn execute(args: &Args) -> Result<(), Failure> {
    let cfg = load(args)?;
    if args.print_config {
        emit(&serde_json::to_string_pretty(&cfg.to_json()).expect("config serializes"));
        return Ok(());
    }
    let config_hash = sha256(cfg.to_json().to_string().as_bytes());
    let outcome = bdlattice::engine::with_workers(args.workers, || dispatch(&cfg, &config_hash))?;
    publish(&cfg, config_hash, &outcome)?;
    emit(&outcome.summary);
    match outcome.passed {
        Some(false) => Err(Failure::Assertion(format!("{} checks failed", cfg.experiment.tag()))),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let reason = e.to_string();
            let reason = reason.lines().next().unwrap_or("bad arguments");
            report(&Failure::Config(reason.trim_start_matches("error: ").to_string()));
            return ExitCode::from(2);
        }
    };
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            report(&f);
            ExitCode::from(f.code() as u8)
        }
    }
}

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(line: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn report(f: &Failure) {
    let line = serde_json::json!({
        "error": f.kind(),
        "code": f.code(),
        "reason": f.reason().replace('\n', " "),
    });
    eprintln!("{line}");
}
