//! `ctikit ingest`: parse dialected feed files and merge them into one
//! store artifact.

use super::RunContext;
use crate::error::{config_err, pipeline_err, CliResult};
use clap::Args;
use ctikit::ingest::dialect::parse_feed_file;
use ctikit::ingest::store::{merge_store, write_store};
use ctikit::ingest::ThreatRecord;
use std::path::{Path, PathBuf};

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Feed file as <source>=<path>; repeatable.
    #[arg(long = "feed", value_name = "SOURCE=PATH", required = true)]
    pub feeds: Vec<String>,
    /// Output store file.
    #[arg(long, default_value = "store.jsonl")]
    pub out: PathBuf,
}

fn split_feed_spec(spec: &str) -> CliResult<(&str, &str)> {
    spec.split_once('=')
        .filter(|(source, path)| !source.is_empty() && !path.is_empty())
        .ok_or_else(|| config_err(format!("feed spec {spec:?} must be <source>=<path>")))
}

pub fn run(ctx: &RunContext, args: &IngestArgs) -> CliResult<()> {
    let mut records: Vec<ThreatRecord> = Vec::new();
    for spec in &args.feeds {
        let (source, path) = split_feed_spec(spec)?;
        let dialect = ctx.config.dialect_for(source)?;
        let parsed =
            parse_feed_file(Path::new(path), source, &dialect).map_err(pipeline_err)?;
        println!("parsed {} records from {source} ({path})", parsed.len());
        records.extend(parsed);
    }
    let store = merge_store(&records, &ctx.config.precedence());
    write_store(&args.out, &store, &ctx.digest(), ctx.seed()).map_err(pipeline_err)?;
    println!(
        "merged {} raw records into {} entries at {}",
        records.len(),
        store.len(),
        args.out.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feed_specs_split_on_the_first_equals() {
        assert_eq!(split_feed_spec("nvd=a/b.jsonl").unwrap(), ("nvd", "a/b.jsonl"));
        assert_eq!(split_feed_spec("v=x=y").unwrap(), ("v", "x=y"));
        assert!(split_feed_spec("no-equals").is_err());
        assert!(split_feed_spec("=path").is_err());
        assert!(split_feed_spec("source=").is_err());
    }
}
