//! Feed dialects: where each canonical record field lives in a raw record.
//!
//! A dialect maps canonical field names to JSON pointers. The canonical
//! dialect reads every field from the top level under its own name, which
//! makes serialized [`ThreatRecord`]s valid feed records in turn. Custom
//! dialects relocate fields (for feeds that nest them) but do not change
//! value shapes.

use super::cvss::{CvssAssessment, CvssMetric};
use super::{
    insert_label, insert_product, CveId, EpssPoint, EpssSeries, IngestError, Reference,
    RemediationInfo, ThreatRecord, YearMonth,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;

/// Canonical field names a dialect may map.
pub const DIALECT_FIELDS: [&str; 15] = [
    "cve_id",
    "published",
    "description",
    "threat_actor",
    "ttps",
    "campaign",
    "affected_systems",
    "attack_infra",
    "impact",
    "cwe_ids",
    "cvss",
    "epss",
    "remediation",
    "references",
    "source_ids",
];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialect {
    pub name: String,
    /// canonical field name → JSON pointer into the raw record
    pub fields: BTreeMap<String, String>,
}

impl Dialect {
    /// Every field at the top level under its canonical name.
    pub fn canonical() -> Dialect {
        let fields = DIALECT_FIELDS
            .iter()
            .map(|f| (f.to_string(), format!("/{f}")))
            .collect();
        Dialect {
            name: "canonical".to_string(),
            fields,
        }
    }

    /// A custom mapping; unknown canonical field names are rejected so config
    /// typos fail at load time rather than silently dropping evidence.
    pub fn custom(
        name: &str,
        fields: BTreeMap<String, String>,
    ) -> Result<Dialect, IngestError> {
        for key in fields.keys() {
            if !DIALECT_FIELDS.contains(&key.as_str()) {
                return Err(IngestError::Parse {
                    offset: 0,
                    message: format!("dialect {name:?} maps unknown field {key:?}"),
                });
            }
        }
        Ok(Dialect {
            name: name.to_string(),
            fields,
        })
    }

    fn lookup<'v>(&self, value: &'v Value, field: &str) -> Option<&'v Value> {
        let found = self.fields.get(field).and_then(|ptr| value.pointer(ptr));
        match found {
            Some(Value::Null) => None,
            other => other,
        }
    }
}

fn malformed(message: String) -> IngestError {
    IngestError::Parse { offset: 0, message }
}

fn as_text(value: &Value, field: &str) -> Result<String, IngestError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(malformed(format!(
            "{field}: expected string, found {other}"
        ))),
    }
}

fn opt_text(value: Option<&Value>, field: &str) -> Result<Option<String>, IngestError> {
    match value {
        None => Ok(None),
        Some(v) => {
            let text = as_text(v, field)?;
            let trimmed = text.trim();
            Ok(if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_string())
            })
        }
    }
}

/// An array yields each element's text; a bare string yields itself.
fn as_text_list(value: &Value, field: &str) -> Result<Vec<String>, IngestError> {
    match value {
        Value::Array(items) => items.iter().map(|v| as_text(v, field)).collect(),
        other => Ok(vec![as_text(other, field)?]),
    }
}

fn parse_epss(value: &Value) -> Result<EpssSeries, IngestError> {
    let items = match value {
        Value::Array(items) => items,
        other => return Err(malformed(format!("epss: expected array, found {other}"))),
    };
    let mut points = Vec::with_capacity(items.len());
    for item in items {
        let (date_v, score_v) = match item {
            Value::Object(map) => {
                let date = map
                    .get("date")
                    .ok_or_else(|| malformed("epss point missing date".to_string()))?;
                let score = map
                    .get("score")
                    .ok_or_else(|| malformed("epss point missing score".to_string()))?;
                (date, score)
            }
            Value::Array(pair) if pair.len() == 2 => (&pair[0], &pair[1]),
            other => {
                return Err(malformed(format!(
                    "epss point: expected object or pair, found {other}"
                )))
            }
        };
        let date: NaiveDate = as_text(date_v, "epss date")?
            .trim()
            .parse()
            .map_err(|e| malformed(format!("epss date: {e}")))?;
        let score = score_v
            .as_f64()
            .ok_or_else(|| malformed(format!("epss score: expected number, found {score_v}")))?;
        points.push(EpssPoint { date, score });
    }
    EpssSeries::new(points)
}

fn parse_cvss(value: &Value) -> Result<CvssAssessment, IngestError> {
    let map = match value {
        Value::Object(map) => map,
        other => return Err(malformed(format!("cvss: expected object, found {other}"))),
    };
    let mut cvss = CvssAssessment::default();
    for (key, raw) in map {
        // Keys outside the nine metrics (vector strings, numeric scores) are
        // extra feed detail, not errors.
        let Ok(metric) = key.parse::<CvssMetric>() else {
            continue;
        };
        let text = as_text(raw, "cvss value")?;
        cvss.set_metric(metric, &text)
            .map_err(|e| IngestError::Cvss {
                field: metric.name(),
                source: e,
            })?;
    }
    Ok(cvss)
}

fn parse_remediation(value: &Value) -> Result<RemediationInfo, IngestError> {
    let map = match value {
        Value::Object(map) => map,
        other => {
            return Err(malformed(format!(
                "remediation: expected object, found {other}"
            )))
        }
    };
    let mut info = RemediationInfo::default();
    if let Some(tools) = map.get("tools") {
        for tool in as_text_list(tools, "remediation tools")? {
            insert_label(&mut info.tools, &tool);
        }
    }
    info.patch = opt_text(map.get("patch"), "remediation patch")?;
    info.methodology = opt_text(map.get("methodology"), "remediation methodology")?;
    info.advisory = opt_text(map.get("advisory"), "remediation advisory")?;
    Ok(info)
}

fn parse_references(
    value: &Value,
    default_source: &str,
) -> Result<Vec<Reference>, IngestError> {
    let items = match value {
        Value::Array(items) => items.iter().collect::<Vec<_>>(),
        other => vec![other],
    };
    let mut refs = Vec::with_capacity(items.len());
    for item in items {
        match item {
            Value::String(url) => refs.push(Reference::new(url, default_source)),
            Value::Object(map) => {
                let url = map
                    .get("url")
                    .ok_or_else(|| malformed("reference missing url".to_string()))?;
                let url = as_text(url, "reference url")?;
                let source = match map.get("source") {
                    Some(s) => as_text(s, "reference source")?,
                    None => default_source.to_string(),
                };
                refs.push(Reference::new(&url, &source));
            }
            other => {
                return Err(malformed(format!(
                    "reference: expected string or object, found {other}"
                )))
            }
        }
    }
    Ok(refs)
}

/// Byte offset of a serde_json error position within `raw`.
fn error_offset(raw: &[u8], err: &serde_json::Error) -> usize {
    let line = err.line().max(1);
    let column = err.column().max(1);
    let mut offset = 0usize;
    let mut seen_lines = 1usize;
    for (idx, b) in raw.iter().enumerate() {
        if seen_lines == line {
            offset = idx;
            break;
        }
        if *b == b'\n' {
            seen_lines += 1;
            offset = idx + 1;
        }
    }
    (offset + column - 1).min(raw.len())
}

/// Parses one raw feed record in `dialect`, tagging it with `source`.
pub fn parse_record(
    raw: &[u8],
    source: &str,
    dialect: &Dialect,
) -> Result<ThreatRecord, IngestError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| IngestError::Parse {
        offset: error_offset(raw, &e),
        message: e.to_string(),
    })?;

    let cve_raw = dialect
        .lookup(&value, "cve_id")
        .ok_or_else(|| malformed("missing required field cve_id".to_string()))?;
    let cve_id = CveId::parse(&as_text(cve_raw, "cve_id")?)?;

    let published_raw = dialect
        .lookup(&value, "published")
        .ok_or_else(|| malformed("missing required field published".to_string()))?;
    let published = YearMonth::parse(&as_text(published_raw, "published")?)?;

    let mut record = ThreatRecord::new(cve_id, published);

    if let Some(v) = dialect.lookup(&value, "description") {
        record.description = as_text(v, "description")?.trim().to_string();
    }
    record.threat_actor = opt_text(dialect.lookup(&value, "threat_actor"), "threat_actor")?;
    record.campaign = opt_text(dialect.lookup(&value, "campaign"), "campaign")?;
    record.impact = opt_text(dialect.lookup(&value, "impact"), "impact")?;

    if let Some(v) = dialect.lookup(&value, "ttps") {
        for label in as_text_list(v, "ttps")? {
            insert_label(&mut record.ttps, &label);
        }
    }
    if let Some(v) = dialect.lookup(&value, "attack_infra") {
        for label in as_text_list(v, "attack_infra")? {
            insert_label(&mut record.attack_infra, &label);
        }
    }
    if let Some(v) = dialect.lookup(&value, "affected_systems") {
        for product in as_text_list(v, "affected_systems")? {
            insert_product(&mut record.affected_systems, &product);
        }
    }
    if let Some(v) = dialect.lookup(&value, "cwe_ids") {
        for id in as_text_list(v, "cwe_ids")? {
            record.insert_cwe(&id);
        }
    }
    if let Some(v) = dialect.lookup(&value, "cvss") {
        let cvss = parse_cvss(v)?;
        if !cvss.is_all_na() {
            record.cvss = Some(cvss);
        }
    }
    if let Some(v) = dialect.lookup(&value, "epss") {
        let series = parse_epss(v)?;
        if !series.is_empty() {
            record.epss = Some(series);
        }
    }
    if let Some(v) = dialect.lookup(&value, "remediation") {
        let info = parse_remediation(v)?;
        if !info.is_empty() {
            record.remediation = Some(info);
        }
    }
    if let Some(v) = dialect.lookup(&value, "references") {
        for reference in parse_references(v, source)? {
            record.references.insert(reference);
        }
    }
    if let Some(v) = dialect.lookup(&value, "source_ids") {
        for id in as_text_list(v, "source_ids")? {
            insert_label(&mut record.source_ids, &id);
        }
    }
    insert_label(&mut record.source_ids, source);

    Ok(record)
}

/// Parses a line-delimited feed file; blank lines are skipped and errors
/// carry the 1-based line number.
pub fn parse_feed_file(
    path: &Path,
    source: &str,
    dialect: &Dialect,
) -> Result<Vec<ThreatRecord>, IngestError> {
    let bytes = std::fs::read(path).map_err(|e| IngestError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (idx, line) in bytes.split(|b| *b == b'\n').enumerate() {
        if line.iter().all(|b| b.is_ascii_whitespace()) {
            continue;
        }
        let record =
            parse_record(line, source, dialect).map_err(|e| IngestError::Feed {
                path: path.display().to_string(),
                line: idx + 1,
                source: Box::new(e),
            })?;
        records.push(record);
    }
    Ok(records)
}
