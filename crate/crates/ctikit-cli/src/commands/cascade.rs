//! `ctikit cascade build`: dependency-ordered instruction chains from a
//! store, with optional per-step training contexts.

use super::RunContext;
use crate::error::{config_err, pipeline_err, validation_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::cascade::{
    build_chain, validate_chain, write_contexts, write_dataset, CascadeChain, CascadeError,
    QuestionLibrary, TaskGraph,
};
use ctikit::ingest::store::read_store;
use std::path::PathBuf;

#[derive(Subcommand, Debug)]
pub enum CascadeCommand {
    /// Build the cascading instruction dataset from a store file.
    Build(BuildArgs),
}

#[derive(Args, Debug)]
pub struct BuildArgs {
    /// Input store file from `ctikit ingest`.
    #[arg(long)]
    pub store: PathBuf,
    /// Output chain dataset.
    #[arg(long, default_value = "cascade.jsonl")]
    pub out: PathBuf,
    /// Optional flattened per-step context file.
    #[arg(long)]
    pub contexts: Option<PathBuf>,
}

pub fn run(ctx: &RunContext, args: &BuildArgs) -> CliResult<()> {
    let (_, store) = read_store(&args.store).map_err(pipeline_err)?;
    let graph = TaskGraph::standard();
    let library = match &ctx.config.paths.questions {
        Some(path) => QuestionLibrary::from_file(path).map_err(config_err)?,
        None => QuestionLibrary::bundled(),
    };

    let mut chains: Vec<CascadeChain> = Vec::new();
    let mut skipped = 0usize;
    for record in store.iter() {
        let chain = match build_chain(record, &graph, &library) {
            Ok(chain) => chain,
            Err(CascadeError::NoEvidence(cve_id)) => {
                eprintln!("skipped {cve_id}: no evidence text");
                skipped += 1;
                continue;
            }
            Err(other) => return Err(pipeline_err(other)),
        };
        let report = validate_chain(&chain, &graph);
        if !report.is_empty() {
            let findings: Vec<String> =
                report.findings.iter().map(|f| f.to_string()).collect();
            return Err(validation_err(format!(
                "chain {} violates ordering: {}",
                chain.chain_id,
                findings.join("; ")
            )));
        }
        chains.push(chain);
    }

    write_dataset(&args.out, &chains, &ctx.digest(), ctx.seed()).map_err(pipeline_err)?;
    if let Some(path) = &args.contexts {
        write_contexts(path, &chains, &ctx.digest(), ctx.seed()).map_err(pipeline_err)?;
    }
    let steps: usize = chains.iter().map(|c| c.steps.len()).sum();
    println!(
        "built {} chains ({steps} steps, {skipped} skipped) into {}",
        chains.len(),
        args.out.display()
    );
    Ok(())
}
