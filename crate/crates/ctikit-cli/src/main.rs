//! Command-line front end for the threat-intelligence toolkit. Exit codes:
//! 0 success, 2 configuration error, 3 pipeline error, 4 validation
//! failure. Every successful run writes a run manifest.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};
use commands::{cache::CacheCommand, corpus::CorpusCommand, curriculum::CurriculumCommand};
use commands::{cascade::CascadeCommand, eval::EvalCommand, infer::InferCommand};
use commands::{ingest::IngestArgs, objective::ObjectiveCommand};
use commands::{write_run_manifest, RunContext};
use config::AppConfig;
use error::CliResult;
use std::path::PathBuf;

#[derive(Parser, Debug)]
#[command(name = "ctikit", version, about = "Threat intelligence lifecycle toolkit")]
struct Cli {
    /// TOML configuration file; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for corpus generation.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    /// Run manifest path.
    #[arg(long, global = true, default_value = "run-manifest.json")]
    manifest: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse feeds into the canonical store.
    Ingest(IngestArgs),
    /// Corpus generation.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Training-order planning.
    #[command(subcommand)]
    Curriculum(CurriculumCommand),
    /// Question cascade datasets.
    #[command(subcommand)]
    Cascade(CascadeCommand),
    /// Objective and gradient checks.
    #[command(subcommand)]
    Objective(ObjectiveCommand),
    /// Session-engine question answering.
    #[command(subcommand)]
    Infer(InferCommand),
    /// Retrieval cache maintenance.
    #[command(subcommand)]
    Cache(CacheCommand),
    /// Metric evaluation and experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Ingest(_) => "ingest",
        Command::Corpus(CorpusCommand::Build(_)) => "corpus build",
        Command::Curriculum(CurriculumCommand::Plan(_)) => "curriculum plan",
        Command::Cascade(CascadeCommand::Build(_)) => "cascade build",
        Command::Objective(ObjectiveCommand::Check(_)) => "objective check",
        Command::Infer(InferCommand::Ask(_)) => "infer ask",
        Command::Infer(InferCommand::Repl(_)) => "infer repl",
        Command::Cache(CacheCommand::Stats(_)) => "cache stats",
        Command::Cache(CacheCommand::Clear(_)) => "cache clear",
        Command::Eval(EvalCommand::Metrics(_)) => "eval metrics",
        Command::Eval(EvalCommand::Correlation(_)) => "eval correlation",
        Command::Eval(EvalCommand::Epss(_)) => "eval epss",
    }
}

fn dispatch(ctx: &RunContext, command: &Command) -> CliResult<()> {
    match command {
        Command::Ingest(args) => commands::ingest::run(ctx, args),
        Command::Corpus(CorpusCommand::Build(args)) => commands::corpus::run(ctx, args),
        Command::Curriculum(CurriculumCommand::Plan(args)) => commands::curriculum::run(ctx, args),
        Command::Cascade(CascadeCommand::Build(args)) => commands::cascade::run(ctx, args),
        Command::Objective(ObjectiveCommand::Check(args)) => commands::objective::run(ctx, args),
        Command::Infer(InferCommand::Ask(args)) => commands::infer::ask(ctx, args),
        Command::Infer(InferCommand::Repl(args)) => commands::infer::repl(ctx, args),
        Command::Cache(CacheCommand::Stats(args)) => commands::cache::stats(ctx, args),
        Command::Cache(CacheCommand::Clear(args)) => commands::cache::clear(ctx, args),
        Command::Eval(EvalCommand::Metrics(args)) => commands::eval::metrics(ctx, args),
        Command::Eval(EvalCommand::Correlation(args)) => commands::eval::correlation(ctx, args),
        Command::Eval(EvalCommand::Epss(args)) => commands::eval::epss(ctx, args),
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = AppConfig::load(cli.config.as_deref(), cli.seed)?;
    let ctx = RunContext { config, workers: cli.workers.max(1) };
    dispatch(&ctx, &cli.command)?;
    write_run_manifest(&cli.manifest, command_name(&cli.command), &ctx)
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
