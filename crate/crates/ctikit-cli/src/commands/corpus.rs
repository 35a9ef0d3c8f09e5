//! `ctikit corpus build`: one generated-then-revised report per stored
//! record, on a bounded worker pool.

use super::RunContext;
use crate::error::{pipeline_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::corpusgen::{build_corpus, write_corpus, CorpusJobConfig};
use ctikit::ingest::store::read_store;
use std::path::PathBuf;

#[derive(Subcommand, Debug)]
pub enum CorpusCommand {
    /// Generate the synthetic report corpus from a store file.
    Build(BuildArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Input store file from `ctikit ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// Output corpus file.
    #[arg(long, default_value = "corpus.jsonl")]
    pub out: PathBuf,
}

pub fn run(ctx: &RunContext, args: &BuildArgs) -> CliResult<()> {
    let (_, store) = read_store(&args.store).map_err(pipeline_err)?;
    let demos = ctx.config.demos()?;
    let templates = ctx.config.templates()?;
    let (registry, _) = ctx.config.build_backends()?;

    let job = CorpusJobConfig {
        master_seed: ctx.seed(),
        workers: ctx.workers,
        filter: Default::default(),
        templates,
    };
    let report = build_corpus(&store, &demos, &registry, &job);
    for (cve_id, reason) in &report.skipped {
        eprintln!("skipped {cve_id}: {reason}");
    }
    if report.documents.is_empty() && !store.is_empty() {
        return Err(pipeline_err(format!(
            "every record failed generation ({} skipped)",
            report.skipped.len()
        )));
    }
    write_corpus(&args.out, &report.documents, &ctx.digest(), ctx.seed())
        .map_err(pipeline_err)?;
    println!(
        "built {} documents ({} skipped) into {}",
        report.documents.len(),
        report.skipped.len(),
        args.out.display()
    );
    Ok(())
}
