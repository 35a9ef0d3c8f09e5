//! Subcommand implementations. Each `run` takes the shared context plus
//! its clap args and returns a [`CliError`] classed by exit code.

pub mod cache;
pub mod cascade;
pub mod corpus;
pub mod curriculum;
pub mod eval;
pub mod infer;
pub mod ingest;
pub mod objective;

use crate::config::AppConfig;
use crate::error::{pipeline_err, CliResult};
use serde::Serialize;
use std::path::Path;

/// Resolved config plus run-wide flag overrides.
pub struct RunContext {
    pub config: AppConfig,
    pub workers: usize,
}

impl RunContext {
    pub fn digest(&self) -> String {
        self.config.digest()
    }

    pub fn seed(&self) -> u64 {
        self.config.master_seed
    }
}

#[derive(Serialize)]
struct RunManifest<'c> {
    command: &'c str,
    config_digest: String,
    seed: u64,
    workers: usize,
}

/// The per-run manifest: which command ran under which config digest and
/// seed. No timestamps, so reruns are byte-identical.
pub fn write_run_manifest(path: &Path, command: &str, ctx: &RunContext) -> CliResult<()> {
    let manifest = RunManifest {
        command,
        config_digest: ctx.digest(),
        seed: ctx.seed(),
        workers: ctx.workers,
    };
    let mut json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    json.push('\n');
    std::fs::write(path, json)
        .map_err(|e| pipeline_err(format!("cannot write {}: {e}", path.display())))
}
