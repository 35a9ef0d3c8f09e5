//! `ctikit cache stats` and `ctikit cache clear`: inspect and reset the
//! persisted retrieval cache.

use super::RunContext;
use crate::error::{pipeline_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::infer::RetrievalCache;
use std::path::PathBuf;

#[derive(Subcommand, Debug)]
pub enum CacheCommand {
    /// Print occupancy, TTL, and keys in recency order.
    Stats(StatsArgs),
    /// Overwrite the cache artifact with an empty cache.
    Clear(ClearArgs),
}

#[derive(Args, Debug)]
pub struct StatsArgs {
    #[arg(long)]
    pub cache_file: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClearArgs {
    #[arg(long)]
    pub cache_file: PathBuf,
}

pub fn stats(ctx: &RunContext, args: &StatsArgs) -> CliResult<()> {
    let policy = ctx.config.cache.policy();
    let cache = RetrievalCache::load(&args.cache_file, policy).map_err(pipeline_err)?;
    println!("entries: {}/{}", cache.len(), ctx.config.cache.capacity);
    match ctx.config.cache.ttl_seconds {
        0 => println!("ttl: none"),
        s => println!("ttl: {s}s"),
    }
    for key in cache.keys() {
        println!("  {key}");
    }
    Ok(())
}

pub fn clear(ctx: &RunContext, args: &ClearArgs) -> CliResult<()> {
    let policy = ctx.config.cache.policy();
    RetrievalCache::new(policy)
        .save(&args.cache_file, &ctx.digest(), ctx.seed())
        .map_err(pipeline_err)?;
    println!("cleared {}", args.cache_file.display());
    Ok(())
}
