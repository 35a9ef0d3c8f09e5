//! Feed-record normalization and the queryable threat store.
//!
//! Raw feed records (one JSON object per line, field layout declared per
//! source dialect) are parsed into [`ThreatRecord`]s, merged across sources
//! under a configurable precedence order, and served from an immutable
//! [`store::ThreatStore`].

pub mod cvss;
pub mod dialect;
pub mod store;

use crate::taxonomy::AnalyticalTarget;
use crate::util::canonical_label;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use cvss::CvssAssessment;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid CVE identifier {0:?}: must match CVE-YYYY-NNNN with a 4-digit year and at least 4 trailing digits")]
    InvalidCveId(String),
    #[error("invalid year-month {0:?}: expected YYYY-MM")]
    InvalidYearMonth(String),
    #[error("EPSS score {0} outside [0, 100]")]
    EpssScoreOutOfRange(f64),
    #[error("EPSS dates not strictly increasing at {0}")]
    EpssDatesNotIncreasing(NaiveDate),
    #[error("byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("{field}: {source}")]
    Cvss {
        field: &'static str,
        #[source]
        source: cvss::CvssValueError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Feed {
        path: String,
        line: usize,
        #[source]
        source: Box<IngestError>,
    },
}

/// A validated CVE identifier. The pattern is `CVE-\d{4}-\d{4,}`; the prefix
/// is folded to upper case on parse.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CveId(String);

impl CveId {
    pub fn parse(raw: &str) -> Result<CveId, IngestError> {
        let trimmed = raw.trim();
        let candidate = if trimmed.len() >= 4 && trimmed[..4].eq_ignore_ascii_case("cve-") {
            format!("CVE-{}", &trimmed[4..])
        } else {
            trimmed.to_string()
        };
        let rest = match candidate.strip_prefix("CVE-") {
            Some(rest) => rest,
            None => return Err(IngestError::InvalidCveId(raw.to_string())),
        };
        let mut parts = rest.splitn(2, '-');
        let year = parts.next().unwrap_or("");
        let number = parts.next().unwrap_or("");
        let year_ok = year.len() == 4 && year.bytes().all(|b| b.is_ascii_digit());
        let number_ok = number.len() >= 4 && number.bytes().all(|b| b.is_ascii_digit());
        if year_ok && number_ok {
            Ok(CveId(candidate))
        } else {
            Err(IngestError::InvalidCveId(raw.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn year(&self) -> i32 {
        self.0[4..8].parse().expect("validated on construction")
    }
}

impl fmt::Display for CveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CveId {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CveId::parse(s)
    }
}

impl TryFrom<String> for CveId {
    type Error = IngestError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        CveId::parse(&value)
    }
}

impl From<CveId> for String {
    fn from(id: CveId) -> String {
        id.0
    }
}

/// Calendar year-month, the publication granularity of threat records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl YearMonth {
    pub fn new(year: i32, month: u32) -> Result<YearMonth, IngestError> {
        if (1..=12).contains(&month) && (1000..=9999).contains(&year) {
            Ok(YearMonth { year, month })
        } else {
            Err(IngestError::InvalidYearMonth(format!("{year}-{month:02}")))
        }
    }

    /// Accepts `YYYY-MM` or any longer ISO date string, truncating to the
    /// year-month prefix.
    pub fn parse(raw: &str) -> Result<YearMonth, IngestError> {
        let trimmed = raw.trim();
        if trimmed.len() < 7 {
            return Err(IngestError::InvalidYearMonth(raw.to_string()));
        }
        let head = &trimmed[..7];
        let (year_s, month_s) = match head.split_once('-') {
            Some(parts) => parts,
            None => return Err(IngestError::InvalidYearMonth(raw.to_string())),
        };
        let year: i32 = year_s
            .parse()
            .map_err(|_| IngestError::InvalidYearMonth(raw.to_string()))?;
        let month: u32 = month_s
            .parse()
            .map_err(|_| IngestError::InvalidYearMonth(raw.to_string()))?;
        if year_s.len() != 4 || month_s.len() != 2 {
            return Err(IngestError::InvalidYearMonth(raw.to_string()));
        }
        YearMonth::new(year, month)
    }

    /// Months since year 0, for windowed comparisons.
    pub fn month_index(self) -> i64 {
        self.year as i64 * 12 + (self.month as i64 - 1)
    }

    pub fn plus_months(self, delta: i64) -> YearMonth {
        let idx = self.month_index() + delta;
        YearMonth {
            year: (idx.div_euclid(12)) as i32,
            month: (idx.rem_euclid(12) + 1) as u32,
        }
    }

    /// First day of the month, for comparisons against dated series.
    pub fn first_day(self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.year, self.month, 1).expect("validated on construction")
    }
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for YearMonth {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        YearMonth::parse(s)
    }
}

impl TryFrom<String> for YearMonth {
    type Error = IngestError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        YearMonth::parse(&value)
    }
}

impl From<YearMonth> for String {
    fn from(ym: YearMonth) -> String {
        ym.to_string()
    }
}

/// One dated EPSS observation, score on the 0..100 percentage scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpssPoint {
    pub date: NaiveDate,
    pub score: f64,
}

/// A strictly date-increasing EPSS score history. Serializes as the bare
/// point list so feed records and store files share one shape.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<EpssPoint>", into = "Vec<EpssPoint>")]
pub struct EpssSeries {
    points: Vec<EpssPoint>,
}

impl TryFrom<Vec<EpssPoint>> for EpssSeries {
    type Error = IngestError;

    fn try_from(points: Vec<EpssPoint>) -> Result<Self, Self::Error> {
        EpssSeries::new(points)
    }
}

impl From<EpssSeries> for Vec<EpssPoint> {
    fn from(series: EpssSeries) -> Vec<EpssPoint> {
        series.points
    }
}

impl EpssSeries {
    /// Sorts the input by date, then rejects duplicate dates and
    /// out-of-range scores.
    pub fn new(mut points: Vec<EpssPoint>) -> Result<EpssSeries, IngestError> {
        points.sort_by_key(|p| p.date);
        for pair in points.windows(2) {
            if pair[0].date >= pair[1].date {
                return Err(IngestError::EpssDatesNotIncreasing(pair[1].date));
            }
        }
        for p in &points {
            if !(0.0..=100.0).contains(&p.score) || !p.score.is_finite() {
                return Err(IngestError::EpssScoreOutOfRange(p.score));
            }
        }
        Ok(EpssSeries { points })
    }

    pub fn points(&self) -> &[EpssPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first_date(&self) -> Option<NaiveDate> {
        self.points.first().map(|p| p.date)
    }

    pub fn last_date(&self) -> Option<NaiveDate> {
        self.points.last().map(|p| p.date)
    }

    /// The observation nearest to `date`; on a distance tie the earlier
    /// observation wins.
    pub fn nearest(&self, date: NaiveDate) -> Option<EpssPoint> {
        self.points
            .iter()
            .copied()
            .min_by_key(|p| ((p.date - date).num_days().abs(), p.date))
    }

    /// Points with dates in `[from, to]`, preserving order.
    pub fn window(&self, from: NaiveDate, to: NaiveDate) -> Vec<EpssPoint> {
        self.points
            .iter()
            .copied()
            .filter(|p| p.date >= from && p.date <= to)
            .collect()
    }
}

/// A source-tagged reference URL.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Reference {
    pub url: String,
    pub source: String,
}

impl Reference {
    pub fn new(url: &str, source: &str) -> Reference {
        Reference {
            url: url.trim().to_string(),
            source: canonical_label(source),
        }
    }
}

/// Remediation evidence attached to a record.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemediationInfo {
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub tools: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patch: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub methodology: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advisory: Option<String>,
}

impl RemediationInfo {
    pub fn is_empty(&self) -> bool {
        self.tools.is_empty()
            && self.patch.is_none()
            && self.methodology.is_none()
            && self.advisory.is_none()
    }
}

/// One normalized threat record keyed by CVE identifier.
///
/// Label sets (ttps, attack_infra, cwe_ids, source_ids) are stored
/// case-folded; affected_systems keep their original spelling but deduplicate
/// and compare case-insensitively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThreatRecord {
    pub cve_id: CveId,
    pub published: YearMonth,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threat_actor: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub ttps: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub campaign: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub affected_systems: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub attack_infra: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub cwe_ids: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cvss: Option<CvssAssessment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epss: Option<EpssSeries>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub remediation: Option<RemediationInfo>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub references: BTreeSet<Reference>,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub source_ids: BTreeSet<String>,
}

/// Inserts a label after case-folding and trimming; empty labels dropped.
pub fn insert_label(set: &mut BTreeSet<String>, raw: &str) {
    let label = canonical_label(raw);
    if !label.is_empty() {
        set.insert(label);
    }
}

/// Inserts a product string, keeping original case but deduplicating
/// case-insensitively (first spelling wins).
pub fn insert_product(set: &mut BTreeSet<String>, raw: &str) {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return;
    }
    if !set.iter().any(|p| p.eq_ignore_ascii_case(trimmed)) {
        set.insert(trimmed.to_string());
    }
}

impl ThreatRecord {
    pub fn new(cve_id: CveId, published: YearMonth) -> ThreatRecord {
        ThreatRecord {
            cve_id,
            published,
            description: String::new(),
            threat_actor: None,
            ttps: BTreeSet::new(),
            campaign: None,
            affected_systems: BTreeSet::new(),
            attack_infra: BTreeSet::new(),
            impact: None,
            cwe_ids: BTreeSet::new(),
            cvss: None,
            epss: None,
            remediation: None,
            references: BTreeSet::new(),
            source_ids: BTreeSet::new(),
        }
    }

    /// Upper-cased CWE identifiers (`CWE-79`); bare numbers gain the prefix.
    pub fn insert_cwe(&mut self, raw: &str) {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return;
        }
        let upper = trimmed.to_uppercase();
        let id = if upper.bytes().all(|b| b.is_ascii_digit()) {
            format!("CWE-{upper}")
        } else {
            upper
        };
        self.cwe_ids.insert(id);
    }
}

/// Which analytical targets each source database can supply.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceCatalog {
    pub entries: BTreeMap<String, BTreeSet<AnalyticalTarget>>,
}

impl SourceCatalog {
    /// The seven-source catalog used by default. Availability follows the
    /// evidence each database actually publishes; e.g. CWE and CAPEC carry
    /// no CVSS or EPSS data, and Exploit-DB has no structured CWE links.
    pub fn standard() -> SourceCatalog {
        use AnalyticalTarget::*;
        let rows: [(AnalyticalTarget, [bool; 7]); 14] = [
            // columns: mitre-cve, nvd, cwe, attack, capec, exploitdb, third-party
            (ThreatActor, [true, true, true, true, false, true, true]),
            (Ttps, [true, true, false, true, false, true, true]),
            (Campaign, [true, true, true, true, true, true, true]),
            (AffectedSystem, [true, true, false, true, false, true, true]),
            (AttackInfra, [true, true, false, false, true, true, true]),
            (Impact, [true, true, false, false, false, true, true]),
            (CveId, [true, true, false, false, false, true, true]),
            (CweId, [true, true, true, false, false, false, true]),
            (CvssMetrics, [true, true, false, false, false, false, true]),
            (EpssRecords, [true, true, false, false, false, false, true]),
            (ToolUse, [true, true, true, true, false, true, true]),
            (CodePatch, [true, true, false, false, false, true, true]),
            (Methodology, [true, true, true, true, false, true, true]),
            (Advisory, [true, true, true, true, false, true, true]),
        ];
        let sources = [
            "mitre-cve",
            "nvd",
            "cwe",
            "attack",
            "capec",
            "exploitdb",
            "third-party",
        ];
        let mut entries: BTreeMap<String, BTreeSet<AnalyticalTarget>> = sources
            .iter()
            .map(|s| (s.to_string(), BTreeSet::new()))
            .collect();
        for (target, row) in rows {
            for (source, &available) in sources.iter().zip(row.iter()) {
                if available {
                    entries.get_mut(*source).unwrap().insert(target);
                }
            }
        }
        SourceCatalog { entries }
    }

    pub fn covers(&self, source: &str, target: AnalyticalTarget) -> bool {
        self.entries
            .get(&canonical_label(source))
            .is_some_and(|targets| targets.contains(&target))
    }

    /// Sources able to supply `target`, in catalog order.
    pub fn sources_for(&self, target: AnalyticalTarget) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(_, targets)| targets.contains(&target))
            .map(|(source, _)| source.as_str())
            .collect()
    }
}
