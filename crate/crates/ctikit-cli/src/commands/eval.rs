//! `ctikit eval`: score prediction artifacts and drive the correlation
//! and EPSS experiments through the session engine.

use super::infer::EngineParts;
use super::RunContext;
use crate::error::{config_err, pipeline_err, validation_err, CliError, CliResult};
use clap::{Args, Subcommand, ValueEnum};
use ctikit::evalharness::{
    hit_ratio, read_correlation_rows, read_epss_rows, read_ranked_predictions,
    read_set_predictions, render_table, run_correlation_experiment, run_epss_experiment,
    set_metrics, write_metric_reports, CorrelationStrategy, EvalError, MetricReport,
    SessionRunner,
};
use std::path::PathBuf;

#[derive(Subcommand, Debug)]
pub enum EvalCommand {
    /// Score a set or ranked prediction artifact.
    Metrics(MetricsArgs),
    /// Run the CVE-correlation experiment over labeled reports.
    Correlation(CorrelationArgs),
    /// Run the EPSS interpolation/prediction experiment.
    Epss(EpssArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictionKind {
    Set,
    Ranked,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Prediction artifact to score.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long, value_enum)]
    pub kind: PredictionKind,
    /// Cutoff for ranked predictions; defaults to metrics.k.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value = "metric-report.jsonl")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CorrelationArgs {
    /// Correlation row artifact: {id, report, truth}.
    #[arg(long)]
    pub rows: PathBuf,
    /// direct, via_cve, or via_cwe.
    #[arg(long, default_value = "direct")]
    pub strategy: String,
    /// Cutoff; defaults to metrics.k.
    #[arg(long)]
    pub k: Option<usize>,
    /// Backend id override.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, default_value = "metric-report.jsonl")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EpssArgs {
    /// EPSS row artifact: {id, report, t0, truth}.
    #[arg(long)]
    pub rows: PathBuf,
    /// Backend id override.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long, default_value = "metric-report.jsonl")]
    pub out: PathBuf,
}

/// Answers experiment questions by running full sessions and flattening
/// the response sections into one searchable text.
pub struct EngineRunner<'p> {
    pub parts: &'p EngineParts,
}

impl SessionRunner for EngineRunner<'_> {
    fn ask(&self, report: &str, question: &str) -> Result<String, String> {
        let transcript = self
            .parts
            .engine()
            .run_session(report, question)
            .map_err(|e| e.to_string())?;
        let response = transcript
            .final_response
            .ok_or_else(|| "session produced no final response".to_string())?;
        let mut text = String::new();
        text.push_str(&response.topic);
        text.push('\n');
        for entity in &response.entities {
            text.push_str(&entity.surface);
            text.push('\n');
        }
        for relation in &response.relations {
            text.push_str(relation);
            text.push('\n');
        }
        for doc in &response.evidence {
            text.push_str(&format!("{} {} {}\n", doc.id, doc.source, doc.text));
        }
        text.push_str(&response.reasoning);
        text.push('\n');
        text.push_str(&response.summarization);
        Ok(text)
    }
}

/// NoRows and NoEligibleRows are data problems the caller must fix;
/// everything else is a pipeline fault.
fn map_eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::NoRows | EvalError::NoEligibleRows(_) => validation_err(e),
        other => pipeline_err(other),
    }
}

fn finish(
    ctx: &RunContext,
    out: &PathBuf,
    reports: &[MetricReport],
) -> CliResult<()> {
    write_metric_reports(out, reports, &ctx.digest(), ctx.seed()).map_err(pipeline_err)?;
    print!("{}", render_table(reports));
    println!("wrote report to {}", out.display());
    Ok(())
}

pub fn metrics(ctx: &RunContext, args: &MetricsArgs) -> CliResult<()> {
    let digest = ctx.digest();
    let reports = match args.kind {
        PredictionKind::Set => {
            let (_, records) = read_set_predictions(&args.predictions).map_err(pipeline_err)?;
            if records.is_empty() {
                return Err(validation_err(EvalError::NoRows));
            }
            let n = records.len() as f64;
            let mut sums = (0.0, 0.0, 0.0, 0.0);
            for record in &records {
                let m = set_metrics(&record.to_prediction());
                sums.0 += m.precision;
                sums.1 += m.recall;
                sums.2 += m.f1;
                sums.3 += m.iou;
            }
            vec![
                MetricReport::from_fraction("precision", sums.0 / n, records.len(), &digest),
                MetricReport::from_fraction("recall", sums.1 / n, records.len(), &digest),
                MetricReport::from_fraction("f1", sums.2 / n, records.len(), &digest),
                MetricReport::from_fraction("iou", sums.3 / n, records.len(), &digest),
            ]
            .into_iter()
            .collect::<Result<Vec<_>, _>>()
            .map_err(map_eval_error)?
        }
        PredictionKind::Ranked => {
            let (_, records) =
                read_ranked_predictions(&args.predictions).map_err(pipeline_err)?;
            let k = args.k.unwrap_or(ctx.config.metrics.k);
            if k == 0 {
                return Err(config_err("k must be at least 1"));
            }
            let preds: Vec<_> = records.iter().map(|r| r.to_prediction(k)).collect();
            let ratio = hit_ratio(&preds).map_err(map_eval_error)?;
            vec![MetricReport::from_fraction(
                &format!("hit@{k}"),
                ratio,
                preds.len(),
                &digest,
            )
            .map_err(map_eval_error)?]
        }
    };
    finish(ctx, &args.out, &reports)
}

pub fn correlation(ctx: &RunContext, args: &CorrelationArgs) -> CliResult<()> {
    let strategy: CorrelationStrategy = args.strategy.parse().map_err(config_err)?;
    let k = args.k.unwrap_or(ctx.config.metrics.k);
    if k == 0 {
        return Err(config_err("k must be at least 1"));
    }
    let (_, rows) = read_correlation_rows(&args.rows).map_err(pipeline_err)?;
    let parts = EngineParts::build(ctx, args.backend.as_deref(), None, false)?;
    let runner = EngineRunner { parts: &parts };
    let outcome = run_correlation_experiment(&rows, &runner, strategy, k, &ctx.digest())
        .map_err(map_eval_error)?;
    for failure in &outcome.failures {
        eprintln!("miss: {failure}");
    }
    println!(
        "strategy {}: {} hits over {} rows",
        strategy.name(),
        outcome.hits,
        outcome.rows
    );
    finish(ctx, &args.out, std::slice::from_ref(&outcome.report))
}

pub fn epss(ctx: &RunContext, args: &EpssArgs) -> CliResult<()> {
    let (_, rows) = read_epss_rows(&args.rows).map_err(pipeline_err)?;
    let parts = EngineParts::build(ctx, args.backend.as_deref(), None, false)?;
    let runner = EngineRunner { parts: &parts };
    let outcome = run_epss_experiment(&rows, &runner, &ctx.digest()).map_err(|e| {
        if matches!(e, EvalError::NoEligibleRows(_)) {
            eprintln!(
                "hint: each truth series must span [T0-3mo, T0+3mo] and the backend must \
                 answer every requested date"
            );
        }
        map_eval_error(e)
    })?;
    for skipped in &outcome.skipped {
        eprintln!("skipped: {skipped}");
    }
    for failure in &outcome.failures {
        eprintln!("failed: {failure}");
    }
    println!("rows used: {}", outcome.rows_used);
    let reports = [outcome.interpolation, outcome.prediction];
    finish(ctx, &args.out, &reports)
}
