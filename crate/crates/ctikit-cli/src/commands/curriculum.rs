//! `ctikit curriculum plan`: order a corpus and emit one training
//! manifest per epoch from the pacing schedule.

use super::RunContext;
use crate::error::{config_err, pipeline_err, validation_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::corpusgen::read_corpus;
use ctikit::curriculum::{emit_schedule, order_corpus, write_schedule, CurriculumError, PacingSchedule};
use std::path::PathBuf;

#[derive(Subcommand, Debug)]
pub enum CurriculumCommand {
    /// Emit per-epoch manifests for a corpus.
    Plan(PlanArgs),
}

#[derive(Args, Debug)]
pub struct PlanArgs {
    /// Input corpus file from `ctikit corpus build`.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory for epoch-NNN.manifest files.
    #[arg(long = "out-dir", default_value = "curriculum")]
    pub out_dir: PathBuf,
    /// Named preset override; custom schedules live in the config file.
    #[arg(long)]
    pub preset: Option<String>,
}

pub fn run(ctx: &RunContext, args: &PlanArgs) -> CliResult<()> {
    let (_, docs) = read_corpus(&args.corpus).map_err(pipeline_err)?;
    let ordered = order_corpus(docs);
    let schedule = match &args.preset {
        Some(name) => PacingSchedule::preset(name).ok_or_else(|| {
            config_err(format!(
                "unknown preset {name:?} (known: {}); custom schedules go in the config file",
                PacingSchedule::PRESET_NAMES.join(", ")
            ))
        })?,
        None => ctx.config.pacing.schedule()?,
    };
    let manifests = emit_schedule(&ordered, &schedule).map_err(|e| match e {
        CurriculumError::EmptyCorpus => validation_err(e),
        other => pipeline_err(other),
    })?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| pipeline_err(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let paths = write_schedule(&args.out_dir, &manifests, &ctx.digest(), ctx.seed())
        .map_err(pipeline_err)?;
    for manifest in &manifests {
        println!(
            "epoch {:03}  {:<10}  {:>6} documents",
            manifest.epoch,
            format!("{:?}", manifest.stage).to_lowercase(),
            manifest.entries.len()
        );
    }
    println!("wrote {} manifests to {}", paths.len(), args.out_dir.display());
    Ok(())
}
