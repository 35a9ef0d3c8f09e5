//! Evaluation metrics and experiment protocols, runnable against live
//! session outputs or static prediction files.
//!
//! Scale convention: raw metric functions return fractions in [0, 1] (or
//! an RMSE on the 0..100 EPSS percentage scale); [`MetricReport`] holds
//! the 0..100 rescaled value.

use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::ingest::cvss::{CvssAssessment, CvssMetric};
use crate::ingest::{EpssPoint, EpssSeries};
use crate::util::canonical_label;
use chrono::{Months, NaiveDate};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::OnceLock;
use thiserror::Error;

pub const METRIC_REPORT_ARTIFACT: &str = "metric-report";
pub const SET_PREDICTIONS_ARTIFACT: &str = "set-predictions";
pub const RANKED_PREDICTIONS_ARTIFACT: &str = "ranked-predictions";
pub const CORRELATION_ROWS_ARTIFACT: &str = "correlation-rows";
pub const EPSS_ROWS_ARTIFACT: &str = "epss-rows";

/// Descriptive targets count as correct at or above this similarity.
pub const DESCRIPTIVE_THRESHOLD: f64 = 80.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction and reference lists differ in length: {preds} vs {refs}")]
    LengthMismatch { preds: usize, refs: usize },
    #[error("no rows to evaluate")]
    NoRows,
    #[error("k must be at least 1")]
    BadK,
    #[error("truth series is empty")]
    EmptyTruth,
    #[error("prediction has no value for query date {0}")]
    MissingQueryDate(NaiveDate),
    #[error("candidate text has no tokens")]
    EmptyCandidate,
    #[error("reference text has no tokens")]
    EmptyReference,
    #[error("metric {metric} value {value} outside [0, 100]")]
    ValueOutOfRange { metric: String, value: f64 },
    #[error("every row was skipped ({0} rows)")]
    NoEligibleRows(usize),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// A predicted label set against its reference, both canonicalized.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SetPrediction {
    pub predicted: BTreeSet<String>,
    pub reference: BTreeSet<String>,
}

impl SetPrediction {
    pub fn new<I, J, S, T>(predicted: I, reference: J) -> SetPrediction
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let canon = |iter: &mut dyn Iterator<Item = String>| {
            iter.map(|s| canonical_label(&s))
                .filter(|s| !s.is_empty())
                .collect::<BTreeSet<String>>()
        };
        SetPrediction {
            predicted: canon(&mut predicted.into_iter().map(|s| s.as_ref().to_string())),
            reference: canon(&mut reference.into_iter().map(|s| s.as_ref().to_string())),
        }
    }
}

/// Precision, recall, F1, and intersection-over-union, each in [0, 1].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
}

/// Empty/empty scores all ones; exactly one side empty scores all zeros
/// (precision is 0/0 when the prediction is empty and resolves to 0).
pub fn set_metrics(p: &SetPrediction) -> SetMetrics {
    match (p.predicted.is_empty(), p.reference.is_empty()) {
        (true, true) => {
            return SetMetrics { precision: 1.0, recall: 1.0, f1: 1.0, iou: 1.0 };
        }
        (true, false) | (false, true) => {
            return SetMetrics { precision: 0.0, recall: 0.0, f1: 0.0, iou: 0.0 };
        }
        (false, false) => {}
    }
    let hits = p.predicted.intersection(&p.reference).count() as f64;
    let union = p.predicted.union(&p.reference).count() as f64;
    let precision = hits / p.predicted.len() as f64;
    let recall = hits / p.reference.len() as f64;
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    SetMetrics { precision, recall, f1, iou: hits / union }
}

/// A ranked identifier list with its truth set and cutoff. Identifiers
/// are canonicalized; duplicate ranks keep the first occurrence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedPrediction {
    pub ranked: Vec<String>,
    pub truth: BTreeSet<String>,
    pub k: usize,
}

impl RankedPrediction {
    pub fn new<I, J, S, T>(ranked: I, truth: J, k: usize) -> RankedPrediction
    where
        I: IntoIterator<Item = S>,
        J: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        let ranked = ranked
            .into_iter()
            .map(|s| canonical_label(s.as_ref()))
            .filter(|s| !s.is_empty() && seen.insert(s.clone()))
            .collect();
        let truth = truth
            .into_iter()
            .map(|s| canonical_label(s.as_ref()))
            .filter(|s| !s.is_empty())
            .collect();
        RankedPrediction { ranked, truth, k }
    }
}

/// 1 iff any of the first k ranked identifiers is in the truth set.
pub fn hit_at_k(p: &RankedPrediction) -> Result<u8, EvalError> {
    if p.k == 0 {
        return Err(EvalError::BadK);
    }
    let hit = p
        .ranked
        .iter()
        .take(p.k)
        .any(|id| p.truth.contains(id));
    Ok(u8::from(hit))
}

/// Fraction of predictions with a top-k hit, in [0, 1].
pub fn hit_ratio(preds: &[RankedPrediction]) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut hits = 0usize;
    for p in preds {
        hits += hit_at_k(p)? as usize;
    }
    Ok(hits as f64 / preds.len() as f64)
}

/// Exact-match accuracy per CVSS metric, NA as a first-class category.
pub fn classify_accuracy(
    preds: &[CvssAssessment],
    refs: &[CvssAssessment],
) -> Result<BTreeMap<String, f64>, EvalError> {
    if preds.len() != refs.len() {
        return Err(EvalError::LengthMismatch { preds: preds.len(), refs: refs.len() });
    }
    if preds.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut out = BTreeMap::new();
    for metric in CvssMetric::ALL {
        let correct = preds
            .iter()
            .zip(refs)
            .filter(|(p, r)| p.label_of(metric) == r.label_of(metric))
            .count();
        out.insert(metric.name().to_string(), correct as f64 / preds.len() as f64);
    }
    Ok(out)
}

/// RMSE between predicted and truth EPSS values over the query dates, on
/// the 0..100 percentage scale. The prediction must carry every query
/// date exactly; each is paired with the nearest truth observation
/// (earlier date wins exact distance ties).
pub fn epss_rmse(
    pred: &EpssSeries,
    truth: &EpssSeries,
    query_dates: &[NaiveDate],
) -> Result<f64, EvalError> {
    if truth.is_empty() {
        return Err(EvalError::EmptyTruth);
    }
    let mut sum_sq = 0.0;
    for &date in query_dates {
        let predicted = pred
            .points()
            .iter()
            .find(|p| p.date == date)
            .ok_or(EvalError::MissingQueryDate(date))?;
        let reference = truth.nearest(date).expect("non-empty truth");
        sum_sq += (predicted.score - reference.score).powi(2);
    }
    if query_dates.is_empty() {
        return Ok(0.0);
    }
    Ok((sum_sq / query_dates.len() as f64).sqrt())
}

/// Per-token embedding provider for [`text_similarity`].
pub trait Embedder {
    fn embed(&self, token: &str) -> Vec<f64>;
}

/// Deterministic mock: every distinct token gets its own basis vector,
/// so cosine is 1 for equal tokens and 0 otherwise.
#[derive(Default)]
pub struct OneHotEmbedder {
    vocab: std::sync::Mutex<BTreeMap<String, usize>>,
}

impl OneHotEmbedder {
    pub fn new() -> OneHotEmbedder {
        OneHotEmbedder::default()
    }
}

impl Embedder for OneHotEmbedder {
    fn embed(&self, token: &str) -> Vec<f64> {
        let mut vocab = self.vocab.lock().expect("vocab lock");
        let next = vocab.len();
        let index = *vocab.entry(token.to_string()).or_insert(next);
        let mut v = vec![0.0; index + 1];
        v[index] = 1.0;
        v
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Token-level greedy-match F1 over embedding cosines, rescaled to
/// 0..100: each candidate token matches its best reference token
/// (precision side) and vice versa (recall side), so the score is
/// independent of token order.
pub fn text_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, EvalError> {
    let cand: Vec<&str> = candidate.split_whitespace().collect();
    let refr: Vec<&str> = reference.split_whitespace().collect();
    if cand.is_empty() {
        return Err(EvalError::EmptyCandidate);
    }
    if refr.is_empty() {
        return Err(EvalError::EmptyReference);
    }
    let cand_vecs: Vec<Vec<f64>> = cand.iter().map(|t| embedder.embed(t)).collect();
    let ref_vecs: Vec<Vec<f64>> = refr.iter().map(|t| embedder.embed(t)).collect();
    let best = |from: &[Vec<f64>], to: &[Vec<f64>]| {
        from.iter()
            .map(|v| {
                to.iter()
                    .map(|w| cosine(v, w))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / from.len() as f64
    };
    let precision = best(&cand_vecs, &ref_vecs);
    let recall = best(&ref_vecs, &cand_vecs);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(f1 * 100.0)
}

/// Judgment for free-text targets: exact match after canonicalization,
/// otherwise a similarity threshold (0..100 scale).
pub fn descriptive_match(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
    threshold: f64,
) -> Result<bool, EvalError> {
    if canonical_label(candidate) == canonical_label(reference) {
        return Ok(true);
    }
    Ok(text_similarity(candidate, reference, embedder)? >= threshold)
}

/// One named metric value on the 0..100 scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    pub config_digest: String,
}

impl MetricReport {
    pub fn new(
        metric: &str,
        value: f64,
        samples: usize,
        config_digest: &str,
    ) -> Result<MetricReport, EvalError> {
        if !value.is_finite() || !(0.0..=100.0).contains(&value) {
            return Err(EvalError::ValueOutOfRange { metric: metric.to_string(), value });
        }
        Ok(MetricReport {
            metric: metric.to_string(),
            value,
            samples,
            config_digest: config_digest.to_string(),
        })
    }

    /// Rescales a [0, 1] fraction to the 0..100 report scale.
    pub fn from_fraction(
        metric: &str,
        fraction: f64,
        samples: usize,
        config_digest: &str,
    ) -> Result<MetricReport, EvalError> {
        MetricReport::new(metric, fraction * 100.0, samples, config_digest)
    }
}

/// Fixed-width text table over metric reports.
pub fn render_table(reports: &[MetricReport]) -> String {
    let name_width = reports
        .iter()
        .map(|r| r.metric.len())
        .chain(["metric".len()])
        .max()
        .unwrap_or(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<name_width$}  {:>10}  {:>8}", "metric", "value", "samples");
    for r in reports {
        let _ = writeln!(out, "{:<name_width$}  {:>10.4}  {:>8}", r.metric, r.value, r.samples);
    }
    out
}

/// Answers one question about one report; experiments treat failures as
/// misses or skips, never aborts.
pub trait SessionRunner {
    fn ask(&self, report: &str, question: &str) -> Result<String, String>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationStrategy {
    Direct,
    ViaCve,
    ViaCwe,
}

impl CorrelationStrategy {
    pub fn name(self) -> &'static str {
        match self {
            CorrelationStrategy::Direct => "direct",
            CorrelationStrategy::ViaCve => "via_cve",
            CorrelationStrategy::ViaCwe => "via_cwe",
        }
    }
}

impl std::str::FromStr for CorrelationStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<CorrelationStrategy, String> {
        match canonical_label(s).as_str() {
            "direct" => Ok(CorrelationStrategy::Direct),
            "via_cve" | "via-cve" => Ok(CorrelationStrategy::ViaCve),
            "via_cwe" | "via-cwe" => Ok(CorrelationStrategy::ViaCwe),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

/// One correlation-experiment row: a report and its truth CVE set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub id: String,
    pub report: String,
    pub truth: Vec<String>,
}

#[derive(Debug)]
pub struct CorrelationOutcome {
    pub report: MetricReport,
    pub hits: usize,
    pub rows: usize,
    pub failures: Vec<String>,
}

fn cve_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)CVE-\d{4}-\d{4,}").expect("static pattern"))
}

fn cwe_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)CWE-\d{1,5}").expect("static pattern"))
}

/// Identifiers in order of first appearance, uppercased, deduplicated.
fn extract_ids(text: &str, pattern: &Regex) -> Vec<String> {
    let mut seen = BTreeSet::new();
    pattern
        .find_iter(text)
        .map(|m| m.as_str().to_uppercase())
        .filter(|id| seen.insert(id.clone()))
        .collect()
}

const EXPANSION_QUESTION: &str =
    "List the CVE identifiers associated with this threat, most relevant first.";
const CVE_PROBE_QUESTION: &str = "List the CVE identifiers described in this report.";
const CWE_PROBE_QUESTION: &str =
    "List the CWE identifiers for the weaknesses this threat exploits.";

fn expansion_question(intermediates: &[String]) -> String {
    if intermediates.is_empty() {
        return EXPANSION_QUESTION.to_string();
    }
    let mut q = String::from("Known related identifiers:\n");
    for id in intermediates {
        let _ = writeln!(q, "- {id}");
    }
    q.push_str(EXPANSION_QUESTION);
    q
}

/// Runs one correlation strategy over the dataset and aggregates Hit@k.
/// Rows whose sessions fail count as misses and are logged.
pub fn run_correlation_experiment(
    rows: &[CorrelationRow],
    runner: &dyn SessionRunner,
    strategy: CorrelationStrategy,
    k: usize,
    config_digest: &str,
) -> Result<CorrelationOutcome, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let mut hits = 0usize;
    let mut failures = Vec::new();
    for row in rows {
        let answer = match strategy {
            CorrelationStrategy::Direct => {
                runner.ask(&row.report, &expansion_question(&[]))
            }
            CorrelationStrategy::ViaCve | CorrelationStrategy::ViaCwe => {
                let (probe_q, pattern) = match strategy {
                    CorrelationStrategy::ViaCve => (CVE_PROBE_QUESTION, cve_pattern()),
                    _ => (CWE_PROBE_QUESTION, cwe_pattern()),
                };
                match runner.ask(&row.report, probe_q) {
                    Ok(probe_answer) => {
                        let intermediates = extract_ids(&probe_answer, pattern);
                        runner.ask(&row.report, &expansion_question(&intermediates))
                    }
                    Err(e) => Err(e),
                }
            }
        };
        match answer {
            Ok(text) => {
                let ranked = extract_ids(&text, cve_pattern());
                let pred = RankedPrediction::new(ranked, row.truth.iter(), k);
                hits += hit_at_k(&pred)? as usize;
            }
            Err(message) => failures.push(format!("{}: {message}", row.id)),
        }
    }
    let fraction = hits as f64 / rows.len() as f64;
    let metric = format!("hit@{k}:{}", strategy.name());
    Ok(CorrelationOutcome {
        report: MetricReport::from_fraction(&metric, fraction, rows.len(), config_digest)?,
        hits,
        rows: rows.len(),
        failures,
    })
}

/// One EPSS-experiment row: a report, its reference timestamp, and the
/// full truth series.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpssRow {
    pub id: String,
    pub report: String,
    pub t0: NaiveDate,
    pub truth: EpssSeries,
}

#[derive(Debug)]
pub struct EpssOutcome {
    pub interpolation: MetricReport,
    pub prediction: MetricReport,
    pub rows_used: usize,
    pub skipped: Vec<String>,
    pub failures: Vec<String>,
}

fn epss_question(row: &EpssRow, history: &[EpssPoint], queries: &[NaiveDate]) -> String {
    let mut q = String::from("## EPSS Forecast Request\n");
    let _ = writeln!(q, "Identifier: {}", row.id);
    let _ = writeln!(q, "Reference date: {}", row.t0);
    q.push_str("Known EPSS history:\n");
    for p in history {
        let _ = writeln!(q, "- {}: {:.4}%", p.date, p.score);
    }
    q.push_str("Answer with one `date: score` line per requested date.\n");
    q.push_str("Requested dates:\n");
    for d in queries {
        let _ = writeln!(q, "- {d}");
    }
    q
}

fn parse_epss_answer(text: &str) -> Vec<EpssPoint> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(\d{4}-\d{2}-\d{2})\s*:\s*([0-9]+(?:\.[0-9]+)?)").expect("static pattern")
    });
    let mut seen = BTreeSet::new();
    re.captures_iter(text)
        .filter_map(|c| {
            let date = c[1].parse::<NaiveDate>().ok()?;
            let score = c[2].parse::<f64>().ok()?;
            seen.insert(date).then_some(EpssPoint { date, score })
        })
        .collect()
}

/// Runs the EPSS forecasting protocol: per row, the truth history in
/// [T0-3mo, T0] is injected into the prompt; the model is queried for
/// every truth date in the backward window (interpolation) and the
/// forward window (T0, T0+3mo] (prediction). RMSE pools squared errors
/// across rows. Rows without a full +-3 month span are skipped; rows
/// whose sessions fail or answer incompletely are logged and excluded.
pub fn run_epss_experiment(
    rows: &[EpssRow],
    runner: &dyn SessionRunner,
    config_digest: &str,
) -> Result<EpssOutcome, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::NoRows);
    }
    let mut back_sq = Vec::new();
    let mut fwd_sq = Vec::new();
    let mut rows_used = 0usize;
    let mut skipped = Vec::new();
    let mut failures = Vec::new();

    for row in rows {
        let back_start = row.t0 - Months::new(3);
        let fwd_end = row.t0 + Months::new(3);
        let spans = row.truth.first_date().is_some_and(|d| d <= back_start)
            && row.truth.last_date().is_some_and(|d| d >= fwd_end);
        if !spans {
            skipped.push(format!("{}: less than 3 months of history on each side", row.id));
            continue;
        }
        let history = row.truth.window(back_start, row.t0);
        let back_dates: Vec<NaiveDate> = history.iter().map(|p| p.date).collect();
        let fwd_dates: Vec<NaiveDate> = row
            .truth
            .window(row.t0 + chrono::Days::new(1), fwd_end)
            .iter()
            .map(|p| p.date)
            .collect();
        let mut queries = back_dates.clone();
        queries.extend(&fwd_dates);

        let answer = match runner.ask(&row.report, &epss_question(row, &history, &queries)) {
            Ok(text) => text,
            Err(message) => {
                failures.push(format!("{}: {message}", row.id));
                continue;
            }
        };
        let points = parse_epss_answer(&answer);
        let pred = match EpssSeries::new(points) {
            Ok(series) => series,
            Err(e) => {
                failures.push(format!("{}: unparseable answer: {e}", row.id));
                continue;
            }
        };
        let value_at = |date: NaiveDate| pred.points().iter().find(|p| p.date == date);
        let mut row_back = Vec::new();
        let mut row_fwd = Vec::new();
        let mut complete = true;
        for (dates, pool) in [(&back_dates, &mut row_back), (&fwd_dates, &mut row_fwd)] {
            for &date in dates.iter() {
                match value_at(date) {
                    Some(p) => {
                        let truth = row.truth.nearest(date).expect("non-empty truth");
                        pool.push((p.score - truth.score).powi(2));
                    }
                    None => {
                        failures.push(format!("{}: answer missing date {date}", row.id));
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                break;
            }
        }
        if !complete {
            continue;
        }
        back_sq.extend(row_back);
        fwd_sq.extend(row_fwd);
        rows_used += 1;
    }

    if rows_used == 0 {
        return Err(EvalError::NoEligibleRows(rows.len()));
    }
    let rmse = |pool: &[f64]| {
        if pool.is_empty() {
            0.0
        } else {
            (pool.iter().sum::<f64>() / pool.len() as f64).sqrt()
        }
    };
    Ok(EpssOutcome {
        interpolation: MetricReport::new(
            "epss_rmse:interpolation",
            rmse(&back_sq),
            back_sq.len(),
            config_digest,
        )?,
        prediction: MetricReport::new(
            "epss_rmse:prediction",
            rmse(&fwd_sq),
            fwd_sq.len(),
            config_digest,
        )?,
        rows_used,
        skipped,
        failures,
    })
}

/// Line-delimited prediction file shapes.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetPredictionRecord {
    pub id: String,
    pub predicted: Vec<String>,
    pub reference: Vec<String>,
}

impl SetPredictionRecord {
    pub fn to_prediction(&self) -> SetPrediction {
        SetPrediction::new(self.predicted.iter(), self.reference.iter())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RankedPredictionRecord {
    pub id: String,
    pub ranked: Vec<String>,
    pub truth: Vec<String>,
}

impl RankedPredictionRecord {
    pub fn to_prediction(&self, k: usize) -> RankedPrediction {
        RankedPrediction::new(self.ranked.iter(), self.truth.iter(), k)
    }
}

pub fn write_metric_reports(
    path: &std::path::Path,
    reports: &[MetricReport],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(METRIC_REPORT_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, reports)
}

pub fn read_metric_reports(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<MetricReport>), ArtifactError> {
    read_artifact(path, METRIC_REPORT_ARTIFACT)
}

pub fn write_set_predictions(
    path: &std::path::Path,
    records: &[SetPredictionRecord],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(SET_PREDICTIONS_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, records)
}

pub fn read_set_predictions(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<SetPredictionRecord>), ArtifactError> {
    read_artifact(path, SET_PREDICTIONS_ARTIFACT)
}

pub fn write_ranked_predictions(
    path: &std::path::Path,
    records: &[RankedPredictionRecord],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(RANKED_PREDICTIONS_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, records)
}

pub fn read_ranked_predictions(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<RankedPredictionRecord>), ArtifactError> {
    read_artifact(path, RANKED_PREDICTIONS_ARTIFACT)
}

pub fn write_correlation_rows(
    path: &std::path::Path,
    rows: &[CorrelationRow],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(CORRELATION_ROWS_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, rows)
}

pub fn read_correlation_rows(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<CorrelationRow>), ArtifactError> {
    read_artifact(path, CORRELATION_ROWS_ARTIFACT)
}

pub fn write_epss_rows(
    path: &std::path::Path,
    rows: &[EpssRow],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(EPSS_ROWS_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, rows)
}

pub fn read_epss_rows(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<EpssRow>), ArtifactError> {
    read_artifact(path, EPSS_ROWS_ARTIFACT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::util::seeded_rng;
    use rand::Rng;
    use std::sync::Mutex;

    fn date(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    fn series(points: &[(&str, f64)]) -> EpssSeries {
        EpssSeries::new(
            points
                .iter()
                .map(|&(d, score)| EpssPoint { date: date(d), score })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn two_thirds_overlap_scores_match_hand_arithmetic() {
        let m = set_metrics(&SetPrediction::new(["a", "b", "c"], ["b", "c", "d"]));
        assert!((m.precision - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.iou - 0.5).abs() < 1e-15);
    }

    #[test]
    fn set_metric_conventions_cover_the_empty_cases() {
        let identical = set_metrics(&SetPrediction::new(["x", "y"], ["Y", " x "]));
        assert_eq!(identical, SetMetrics { precision: 1.0, recall: 1.0, f1: 1.0, iou: 1.0 });

        let both_empty = set_metrics(&SetPrediction::new::<_, _, &str, &str>([], []));
        assert_eq!(both_empty.f1, 1.0);
        assert_eq!(both_empty.iou, 1.0);

        let pred_empty = set_metrics(&SetPrediction::new::<_, _, &str, &str>([], ["a"]));
        assert_eq!(pred_empty, SetMetrics { precision: 0.0, recall: 0.0, f1: 0.0, iou: 0.0 });
        let ref_empty = set_metrics(&SetPrediction::new::<_, _, &str, &str>(["a"], []));
        assert_eq!(ref_empty.f1, 0.0);
    }

    /// Brute-force oracle: metrics recomputed by element-wise scans over
    /// label vectors, no set types involved.
    fn brute_force(pred: &[String], refr: &[String]) -> SetMetrics {
        let uniq = |items: &[String]| {
            let mut v: Vec<String> = Vec::new();
            for item in items {
                if !v.contains(item) {
                    v.push(item.clone());
                }
            }
            v
        };
        let p = uniq(pred);
        let r = uniq(refr);
        if p.is_empty() && r.is_empty() {
            return SetMetrics { precision: 1.0, recall: 1.0, f1: 1.0, iou: 1.0 };
        }
        if p.is_empty() || r.is_empty() {
            return SetMetrics { precision: 0.0, recall: 0.0, f1: 0.0, iou: 0.0 };
        }
        let hits = p.iter().filter(|x| r.contains(x)).count() as f64;
        let union = (p.len() + r.len()) as f64 - hits;
        let precision = hits / p.len() as f64;
        let recall = hits / r.len() as f64;
        let f1 = if hits == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SetMetrics { precision, recall, f1, iou: hits / union }
    }

    #[test]
    fn random_set_pairs_agree_with_the_brute_force_oracle() {
        let mut rng = seeded_rng(11, "eval:sets");
        let labels = ["a", "b", "c", "d", "e", "f", "g", "h"];
        for _ in 0..1000 {
            let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
                let n = rng.random_range(0..6);
                (0..n)
                    .map(|_| labels[rng.random_range(0..labels.len())].to_string())
                    .collect::<Vec<String>>()
            };
            let pred = draw(&mut rng);
            let refr = draw(&mut rng);
            let got = set_metrics(&SetPrediction::new(pred.iter(), refr.iter()));
            let want = brute_force(&pred, &refr);
            assert!((got.precision - want.precision).abs() < 1e-12);
            assert!((got.recall - want.recall).abs() < 1e-12);
            assert!((got.f1 - want.f1).abs() < 1e-12);
            assert!((got.iou - want.iou).abs() < 1e-12);

            assert!((got.iou - got.f1 / (2.0 - got.f1)).abs() < 1e-12, "IoU identity");
            assert!(got.iou <= got.f1 + 1e-12);
            assert!(got.f1 <= got.precision.max(got.recall) + 1e-12);
        }
    }

    #[test]
    fn hit_at_k_respects_the_cutoff() {
        let mut ranked: Vec<String> = (1..=12).map(|i| format!("CVE-2020-{i:04}")).collect();
        ranked[6] = "CVE-2023-25690".to_string();
        let p = RankedPrediction::new(ranked.iter(), ["CVE-2023-25690"], 10);
        assert_eq!(hit_at_k(&p).unwrap(), 1);

        let mut ranked = ranked.clone();
        ranked.remove(6);
        ranked.push("CVE-2023-25690".to_string());
        let p = RankedPrediction::new(ranked.iter(), ["CVE-2023-25690"], 10);
        assert_eq!(hit_at_k(&p).unwrap(), 0, "rank 11 misses at k = 10");

        let p = RankedPrediction::new(["CVE-2020-0001"], Vec::<&str>::new(), 10);
        assert_eq!(hit_at_k(&p).unwrap(), 0, "empty truth never hits");

        let p = RankedPrediction::new(["CVE-2020-0001"], ["cve-2020-0001"], 0);
        assert!(matches!(hit_at_k(&p), Err(EvalError::BadK)));
    }

    #[test]
    fn hit_at_k_is_monotone_in_k() {
        let mut rng = seeded_rng(13, "eval:hit");
        for _ in 0..200 {
            let n = rng.random_range(1..12);
            let ranked: Vec<String> = (0..n).map(|i| format!("id-{i}")).collect();
            let truth: Vec<String> = (0..12)
                .filter(|_| rng.random_bool(0.2))
                .map(|i| format!("id-{i}"))
                .collect();
            let mut prev = 0;
            for k in 1..=12 {
                let p = RankedPrediction::new(ranked.iter(), truth.iter(), k);
                let hit = hit_at_k(&p).unwrap();
                assert!(hit >= prev, "hit dropped when k grew");
                prev = hit;
            }
        }
    }

    #[test]
    fn duplicate_ranks_keep_the_first_occurrence() {
        let p = RankedPrediction::new(["A", "a", "B"], ["b"], 2);
        assert_eq!(p.ranked, vec!["a", "b"]);
        assert_eq!(hit_at_k(&p).unwrap(), 1, "dedupe pulls b into the top 2");
    }

    fn assessment(av: &str, base: &str) -> CvssAssessment {
        let mut a = CvssAssessment::default();
        a.set_metric_or_na(CvssMetric::Av, av);
        a.set_metric_or_na(CvssMetric::Base, base);
        a
    }

    #[test]
    fn classify_accuracy_counts_exact_matches_per_metric() {
        let refs = vec![assessment("Network", "High"), assessment("Local", "Low")];
        let all_right = classify_accuracy(&refs, &refs).unwrap();
        assert_eq!(all_right.len(), 9);
        assert!(all_right.values().all(|&v| v == 1.0));

        let preds = vec![assessment("Network", "High"), assessment("Physical", "Low")];
        let acc = classify_accuracy(&preds, &refs).unwrap();
        assert_eq!(acc["AV"], 0.5);
        assert_eq!(acc["Base"], 1.0);
    }

    #[test]
    fn na_is_a_first_class_category() {
        let refs = vec![assessment("Network", "not reported")];
        assert_eq!(refs[0].label_of(CvssMetric::Base), "NA");
        let preds = vec![assessment("Network", "Low")];
        let acc = classify_accuracy(&preds, &refs).unwrap();
        assert_eq!(acc["Base"], 0.0, "Low against NA is wrong");
        let acc = classify_accuracy(&refs, &refs).unwrap();
        assert_eq!(acc["Base"], 1.0, "NA against NA is right");
    }

    #[test]
    fn classify_accuracy_is_order_independent() {
        let refs: Vec<CvssAssessment> = ["Network", "Local", "Physical", "Adjacent Network"]
            .iter()
            .map(|av| assessment(av, "High"))
            .collect();
        let preds: Vec<CvssAssessment> = ["Network", "Physical", "Physical", "Local"]
            .iter()
            .map(|av| assessment(av, "Low"))
            .collect();
        let base = classify_accuracy(&preds, &refs).unwrap();
        let perm = [2usize, 0, 3, 1];
        let preds_p: Vec<CvssAssessment> = perm.iter().map(|&i| preds[i]).collect();
        let refs_p: Vec<CvssAssessment> = perm.iter().map(|&i| refs[i]).collect();
        assert_eq!(base, classify_accuracy(&preds_p, &refs_p).unwrap());

        assert!(matches!(
            classify_accuracy(&preds[..1], &refs),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn epss_rmse_handles_exact_and_offset_series() {
        let truth = series(&[("2024-03-01", 0.31), ("2024-05-01", 55.37)]);
        let dates = [date("2024-03-01"), date("2024-05-01")];
        assert_eq!(epss_rmse(&truth, &truth, &dates).unwrap(), 0.0);

        let pred = series(&[("2024-03-01", 10.0), ("2024-05-01", 20.0)]);
        let truth = series(&[("2024-03-01", 10.0), ("2024-05-01", 26.0)]);
        let rmse = epss_rmse(&pred, &truth, &dates).unwrap();
        assert!((rmse - 18.0_f64.sqrt()).abs() < 1e-12, "sqrt(18) expected, got {rmse}");
    }

    #[test]
    fn nearest_truth_date_prefers_the_closer_then_earlier_point() {
        let truth = series(&[("2024-09-25", 10.0), ("2024-10-10", 50.0)]);
        let pred = series(&[("2024-10-01", 10.0)]);
        let rmse = epss_rmse(&pred, &truth, &[date("2024-10-01")]).unwrap();
        assert_eq!(rmse, 0.0, "2024-09-25 is 6 days away, 2024-10-10 is 9");

        let tie_truth = series(&[("2024-09-29", 10.0), ("2024-10-03", 50.0)]);
        let rmse = epss_rmse(&pred, &tie_truth, &[date("2024-10-01")]).unwrap();
        assert_eq!(rmse, 0.0, "exact tie resolves to the earlier date");
    }

    #[test]
    fn epss_rmse_ignores_truth_points_farther_than_every_match() {
        let pred = series(&[("2024-03-01", 12.0), ("2024-04-01", 30.0)]);
        let truth = series(&[("2024-03-01", 10.0), ("2024-04-01", 34.0)]);
        let dates = [date("2024-03-01"), date("2024-04-01")];
        let base = epss_rmse(&pred, &truth, &dates).unwrap();
        let padded = series(&[
            ("2020-01-01", 99.0),
            ("2024-03-01", 10.0),
            ("2024-04-01", 34.0),
            ("2029-12-31", 0.0),
        ]);
        assert_eq!(base, epss_rmse(&pred, &padded, &dates).unwrap());
    }

    #[test]
    fn epss_rmse_rejects_bad_inputs() {
        let pred = series(&[("2024-03-01", 12.0)]);
        let truth = series(&[("2024-03-01", 10.0)]);
        assert!(matches!(
            epss_rmse(&pred, &truth, &[date("2024-06-01")]),
            Err(EvalError::MissingQueryDate(_))
        ));
        let empty = EpssSeries::default();
        assert!(matches!(
            epss_rmse(&pred, &empty, &[date("2024-03-01")]),
            Err(EvalError::EmptyTruth)
        ));
    }

    #[test]
    fn one_hot_similarity_matches_hand_greedy_runs() {
        let embedder = OneHotEmbedder::new();
        let same = text_similarity("patch the gateway", "patch the gateway", &embedder).unwrap();
        assert!((same - 100.0).abs() < 1e-9);

        let disjoint = text_similarity("alpha beta", "gamma delta", &embedder).unwrap();
        assert_eq!(disjoint, 0.0);

        let permuted =
            text_similarity("gateway the patch", "patch the gateway", &embedder).unwrap();
        assert!((permuted - 100.0).abs() < 1e-9, "greedy matching is order-free");

        let partial = text_similarity("alpha beta delta", "alpha beta gamma", &embedder).unwrap();
        assert!((partial - 200.0 / 3.0).abs() < 1e-9, "2-of-3 tokens match");

        assert!(matches!(
            text_similarity("", "x", &embedder),
            Err(EvalError::EmptyCandidate)
        ));
        assert!(matches!(
            text_similarity("x", "  ", &embedder),
            Err(EvalError::EmptyReference)
        ));
    }

    #[test]
    fn descriptive_match_prefers_canonical_equality() {
        let embedder = OneHotEmbedder::new();
        assert!(descriptive_match(" Lazarus  Group", "lazarus  group", &embedder, 101.0).unwrap());
        assert!(descriptive_match(
            "patch the vpn gateway before friday",
            "patch the vpn gateway before monday",
            &embedder,
            DESCRIPTIVE_THRESHOLD
        )
        .unwrap(), "5 of 6 tokens match, similarity 83.3");
        assert!(!descriptive_match("wiper", "ransomware", &embedder, 1.0).unwrap());
    }

    #[test]
    fn metric_report_rejects_out_of_range_values() {
        assert!(MetricReport::new("m", 100.0, 1, "d").is_ok());
        assert!(matches!(
            MetricReport::new("m", 100.5, 1, "d"),
            Err(EvalError::ValueOutOfRange { .. })
        ));
        assert!(MetricReport::from_fraction("m", 0.42, 7, "d").unwrap().value == 42.0);
    }

    #[test]
    fn rendered_table_lines_up_names_and_values() {
        let reports = vec![
            MetricReport::new("hit@10:direct", 75.0, 4, "d").unwrap(),
            MetricReport::new("f1", 66.6667, 12, "d").unwrap(),
        ];
        let table = render_table(&reports);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("metric"));
        assert!(lines[1].contains("hit@10:direct") && lines[1].contains("75.0000"));
        assert!(lines[2].contains("66.6667"));
    }

    struct ScriptedRunner {
        prompts: Mutex<Vec<String>>,
        answer: Box<dyn Fn(&str, &str) -> Result<String, String> + Send + Sync>,
    }

    impl ScriptedRunner {
        fn new(
            answer: impl Fn(&str, &str) -> Result<String, String> + Send + Sync + 'static,
        ) -> ScriptedRunner {
            ScriptedRunner { prompts: Mutex::new(Vec::new()), answer: Box::new(answer) }
        }
    }

    impl SessionRunner for ScriptedRunner {
        fn ask(&self, report: &str, question: &str) -> Result<String, String> {
            self.prompts.lock().unwrap().push(question.to_string());
            (self.answer)(report, question)
        }
    }

    fn correlation_rows() -> Vec<CorrelationRow> {
        vec![
            CorrelationRow {
                id: "row-1".into(),
                report: "Exploitation of the apache proxy flaw.".into(),
                truth: vec!["CVE-2023-25690".into()],
            },
            CorrelationRow {
                id: "row-2".into(),
                report: "Fortinet device compromise wave.".into(),
                truth: vec!["CVE-2024-21762".into()],
            },
        ]
    }

    #[test]
    fn truth_at_rank_one_scores_a_perfect_hit_ratio() {
        let runner = ScriptedRunner::new(|report, _| {
            if report.contains("apache") {
                Ok("CVE-2023-25690 then CVE-2019-0001".into())
            } else {
                Ok("CVE-2024-21762".into())
            }
        });
        let outcome = run_correlation_experiment(
            &correlation_rows(),
            &runner,
            CorrelationStrategy::Direct,
            10,
            "digest",
        )
        .unwrap();
        assert_eq!(outcome.report.value, 100.0);
        assert_eq!(outcome.hits, 2);
        assert!(outcome.failures.is_empty());
        assert_eq!(outcome.report.metric, "hit@10:direct");
    }

    #[test]
    fn via_cwe_feeds_intermediates_into_the_second_prompt_verbatim() {
        let runner = ScriptedRunner::new(|_, question| {
            if question.contains("CWE identifiers") {
                Ok("The weaknesses are CWE-79 and CWE-502.".into())
            } else {
                Ok("CVE-2023-25690".into())
            }
        });
        let rows = correlation_rows();
        run_correlation_experiment(&rows[..1], &runner, CorrelationStrategy::ViaCwe, 10, "d")
            .unwrap();
        let prompts = runner.prompts.lock().unwrap();
        assert_eq!(prompts.len(), 2);
        let second = &prompts[1];
        assert!(second.contains("- CWE-79\n"), "second prompt: {second}");
        assert!(second.contains("- CWE-502\n"));
    }

    #[test]
    fn correlation_failures_count_as_misses_and_are_logged() {
        let runner = ScriptedRunner::new(|report, _| {
            if report.contains("apache") {
                Err("backend down".into())
            } else {
                Ok("CVE-2024-21762".into())
            }
        });
        let outcome = run_correlation_experiment(
            &correlation_rows(),
            &runner,
            CorrelationStrategy::Direct,
            10,
            "d",
        )
        .unwrap();
        assert_eq!(outcome.report.value, 50.0);
        assert_eq!(outcome.failures.len(), 1);
        assert!(outcome.failures[0].starts_with("row-1:"));

        assert!(matches!(
            run_correlation_experiment(&[], &runner, CorrelationStrategy::Direct, 10, "d"),
            Err(EvalError::NoRows)
        ));
    }

    fn epss_rows() -> Vec<EpssRow> {
        vec![EpssRow {
            id: "CVE-2024-27956".into(),
            report: "WordPress plugin SQL injection exploited in the wild.".into(),
            t0: date("2024-06-15"),
            truth: series(&[
                ("2024-03-10", 0.31),
                ("2024-04-20", 5.0),
                ("2024-05-10", 10.0),
                ("2024-06-01", 20.0),
                ("2024-07-10", 40.0),
                ("2024-08-05", 50.0),
                ("2024-09-14", 55.37),
                ("2024-09-20", 55.4),
            ]),
        }]
    }

    /// Answers every requested date with the truth value, plus an offset
    /// on dates after the reference date.
    fn oracle_runner(rows: &[EpssRow], forward_offset: f64) -> ScriptedRunner {
        let by_id: BTreeMap<String, (NaiveDate, EpssSeries)> = rows
            .iter()
            .map(|r| (r.id.clone(), (r.t0, r.truth.clone())))
            .collect();
        ScriptedRunner::new(move |_, question| {
            let id_line = question
                .lines()
                .find_map(|l| l.strip_prefix("Identifier: "))
                .ok_or("no identifier")?;
            let (t0, truth) = by_id.get(id_line).ok_or("unknown row")?;
            let mut answer = String::new();
            let mut in_queries = false;
            for line in question.lines() {
                if line == "Requested dates:" {
                    in_queries = true;
                    continue;
                }
                if !in_queries {
                    continue;
                }
                let Some(raw) = line.strip_prefix("- ") else { continue };
                let date: NaiveDate = raw.parse().map_err(|_| "bad date")?;
                let point = truth
                    .points()
                    .iter()
                    .find(|p| p.date == date)
                    .ok_or("query not in truth")?;
                let score = if date > *t0 {
                    point.score + forward_offset
                } else {
                    point.score
                };
                answer.push_str(&format!("{date}: {score}\n"));
            }
            Ok(answer)
        })
    }

    #[test]
    fn echo_runner_scores_zero_on_both_windows() {
        let rows = epss_rows();
        let runner = oracle_runner(&rows, 0.0);
        let outcome = run_epss_experiment(&rows, &runner, "d").unwrap();
        assert_eq!(outcome.interpolation.value, 0.0);
        assert_eq!(outcome.prediction.value, 0.0);
        assert_eq!(outcome.interpolation.samples, 3, "3 history points in the window");
        assert_eq!(outcome.prediction.samples, 3, "3 forward points inside +3 months");
        assert_eq!(outcome.rows_used, 1);
        assert!(outcome.skipped.is_empty());
    }

    #[test]
    fn constant_forward_offset_sets_the_prediction_rmse() {
        let rows = epss_rows();
        let runner = oracle_runner(&rows, 5.0);
        let outcome = run_epss_experiment(&rows, &runner, "d").unwrap();
        assert_eq!(outcome.interpolation.value, 0.0);
        assert!((outcome.prediction.value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn short_history_rows_are_skipped_and_counted() {
        let mut rows = epss_rows();
        rows.push(EpssRow {
            id: "CVE-2024-0001".into(),
            report: "short history".into(),
            t0: date("2024-06-15"),
            truth: series(&[("2024-04-01", 1.0), ("2024-08-01", 2.0)]),
        });
        let runner = oracle_runner(&rows, 0.0);
        let outcome = run_epss_experiment(&rows, &runner, "d").unwrap();
        assert_eq!(outcome.rows_used, 1);
        assert_eq!(outcome.skipped.len(), 1);
        assert!(outcome.skipped[0].starts_with("CVE-2024-0001:"));

        let only_short = &rows[1..];
        assert!(matches!(
            run_epss_experiment(only_short, &runner, "d"),
            Err(EvalError::NoEligibleRows(1))
        ));
    }

    #[test]
    fn prediction_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reports.jsonl");
        let reports = vec![MetricReport::new("f1", 66.0, 3, "digest").unwrap()];
        write_metric_reports(&path, &reports, "digest", 7).unwrap();
        let (header, back) = read_metric_reports(&path).unwrap();
        assert_eq!(header.artifact, METRIC_REPORT_ARTIFACT);
        assert_eq!(back, reports);

        let record = SetPredictionRecord {
            id: "r1".into(),
            predicted: vec!["A".into()],
            reference: vec!["a".into()],
        };
        assert_eq!(set_metrics(&record.to_prediction()).f1, 1.0);
        let record = RankedPredictionRecord {
            id: "r1".into(),
            ranked: vec!["CVE-1".into()],
            truth: vec!["cve-1".into()],
        };
        assert_eq!(hit_at_k(&record.to_prediction(5)).unwrap(), 1);
    }
}
