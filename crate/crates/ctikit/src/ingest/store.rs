//! The merged, queryable threat store.
//!
//! Construction is single-threaded; the built store is immutable and safe to
//! share across reader threads. The canonical store file is line-delimited
//! and sorted by cve_id, so identical inputs and config yield identical
//! bytes.

use super::{CveId, ThreatRecord, YearMonth};
use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::util::canonical_label;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

pub const STORE_ARTIFACT: &str = "threat-store";

/// Scalar conflicts across sources resolve to the earliest-listed source.
/// Sources absent from the order rank below all listed ones.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourcePrecedence {
    pub order: Vec<String>,
}

impl Default for SourcePrecedence {
    fn default() -> Self {
        SourcePrecedence {
            order: ["nvd", "mitre-cve", "exploitdb", "third-party"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        }
    }
}

impl SourcePrecedence {
    pub fn new(order: &[&str]) -> SourcePrecedence {
        SourcePrecedence {
            order: order.iter().map(|s| canonical_label(s)).collect(),
        }
    }

    /// Lower is stronger; unlisted sources share the weakest rank.
    pub fn rank(&self, source: &str) -> usize {
        let key = canonical_label(source);
        self.order
            .iter()
            .position(|s| *s == key)
            .unwrap_or(self.order.len())
    }

    /// A record's rank is its strongest source's rank.
    fn record_rank(&self, record: &ThreatRecord) -> usize {
        record
            .source_ids
            .iter()
            .map(|s| self.rank(s))
            .min()
            .unwrap_or(self.order.len())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThreatStore {
    records: BTreeMap<CveId, ThreatRecord>,
}

impl ThreatStore {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, cve_id: &CveId) -> Option<&ThreatRecord> {
        self.records.get(cve_id)
    }

    /// Records in cve_id order.
    pub fn iter(&self) -> impl Iterator<Item = &ThreatRecord> {
        self.records.values()
    }
}

/// Keeps `current` unless `candidate` is Some and outranks it.
fn take_scalar<T: Clone>(
    current: &mut Option<(usize, T)>,
    candidate: Option<&T>,
    rank: usize,
) {
    if let Some(value) = candidate {
        let stronger = match current {
            Some((best_rank, _)) => rank < *best_rank,
            None => true,
        };
        if stronger {
            *current = Some((rank, value.clone()));
        }
    }
}

/// Merges per-source records into one record per cve_id. Set fields are
/// unioned; scalar conflicts resolve by source precedence, first seen wins
/// ties.
pub fn merge_store(records: &[ThreatRecord], precedence: &SourcePrecedence) -> ThreatStore {
    let mut groups: BTreeMap<CveId, Vec<&ThreatRecord>> = BTreeMap::new();
    for record in records {
        groups.entry(record.cve_id.clone()).or_default().push(record);
    }

    let mut merged = BTreeMap::new();
    for (cve_id, group) in groups {
        let mut published: Option<(usize, YearMonth)> = None;
        let mut description: Option<(usize, String)> = None;
        let mut threat_actor: Option<(usize, String)> = None;
        let mut campaign: Option<(usize, String)> = None;
        let mut impact: Option<(usize, String)> = None;
        let mut cvss = None;
        let mut epss = None;
        let mut remediation = None;

        let mut out = ThreatRecord::new(cve_id.clone(), group[0].published);
        for record in &group {
            let rank = precedence.record_rank(record);
            take_scalar(&mut published, Some(&record.published), rank);
            let desc = (!record.description.is_empty()).then_some(&record.description);
            take_scalar(&mut description, desc, rank);
            take_scalar(&mut threat_actor, record.threat_actor.as_ref(), rank);
            take_scalar(&mut campaign, record.campaign.as_ref(), rank);
            take_scalar(&mut impact, record.impact.as_ref(), rank);
            take_scalar(&mut cvss, record.cvss.as_ref(), rank);
            take_scalar(&mut epss, record.epss.as_ref(), rank);
            take_scalar(&mut remediation, record.remediation.as_ref(), rank);

            out.ttps.extend(record.ttps.iter().cloned());
            out.attack_infra.extend(record.attack_infra.iter().cloned());
            out.cwe_ids.extend(record.cwe_ids.iter().cloned());
            out.source_ids.extend(record.source_ids.iter().cloned());
            out.references.extend(record.references.iter().cloned());
            for product in &record.affected_systems {
                super::insert_product(&mut out.affected_systems, product);
            }
        }

        out.published = published.expect("group is non-empty").1;
        out.description = description.map(|(_, v)| v).unwrap_or_default();
        out.threat_actor = threat_actor.map(|(_, v)| v);
        out.campaign = campaign.map(|(_, v)| v);
        out.impact = impact.map(|(_, v)| v);
        out.cvss = cvss.map(|(_, v)| v);
        out.epss = epss.map(|(_, v)| v);
        out.remediation = remediation.map(|(_, v)| v);
        merged.insert(cve_id, out);
    }
    ThreatStore { records: merged }
}

/// Conjunction of optional predicates; an empty filter matches everything.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScopeFilter {
    /// Case-insensitive substring over affected_systems entries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub product: Option<String>,
    /// Case-insensitive substring over affected_systems or the description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vendor: Option<String>,
    /// Case-insensitive substring over description, ttps, impact, cwe_ids.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_from: Option<YearMonth>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_to: Option<YearMonth>,
}

fn contains_fold(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(needle)
}

impl ScopeFilter {
    pub fn is_empty(&self) -> bool {
        self == &ScopeFilter::default()
    }

    pub fn matches(&self, record: &ThreatRecord) -> bool {
        if let Some(product) = &self.product {
            let needle = product.trim().to_lowercase();
            if !record
                .affected_systems
                .iter()
                .any(|p| contains_fold(p, &needle))
            {
                return false;
            }
        }
        if let Some(vendor) = &self.vendor {
            let needle = vendor.trim().to_lowercase();
            let in_products = record
                .affected_systems
                .iter()
                .any(|p| contains_fold(p, &needle));
            if !in_products && !contains_fold(&record.description, &needle) {
                return false;
            }
        }
        if let Some(category) = &self.category {
            let needle = category.trim().to_lowercase();
            let in_labels = record.ttps.iter().any(|t| contains_fold(t, &needle))
                || record.cwe_ids.iter().any(|c| contains_fold(c, &needle));
            let in_text = contains_fold(&record.description, &needle)
                || record
                    .impact
                    .as_deref()
                    .is_some_and(|i| contains_fold(i, &needle));
            if !in_labels && !in_text {
                return false;
            }
        }
        if let Some(from) = self.date_from {
            if record.published < from {
                return false;
            }
        }
        if let Some(to) = self.date_to {
            if record.published > to {
                return false;
            }
        }
        true
    }
}

/// Records matching all predicates, ordered by (published, cve_id).
pub fn query<'s>(store: &'s ThreatStore, filter: &ScopeFilter) -> Vec<&'s ThreatRecord> {
    let mut hits: Vec<&ThreatRecord> = store.iter().filter(|r| filter.matches(r)).collect();
    hits.sort_by(|a, b| {
        a.published
            .cmp(&b.published)
            .then_with(|| a.cve_id.cmp(&b.cve_id))
    });
    hits
}

/// Writes the canonical store file: header line, then records sorted by
/// cve_id.
pub fn write_store(
    path: &Path,
    store: &ThreatStore,
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(STORE_ARTIFACT, config_digest, seed);
    let records: Vec<&ThreatRecord> = store.iter().collect();
    write_artifact(path, &header, &records)
}

pub fn read_store(path: &Path) -> Result<(ArtifactHeader, ThreatStore), ArtifactError> {
    let (header, records): (_, Vec<ThreatRecord>) = read_artifact(path, STORE_ARTIFACT)?;
    let store = ThreatStore {
        records: records
            .into_iter()
            .map(|r| (r.cve_id.clone(), r))
            .collect(),
    };
    Ok((header, store))
}

/// Builds a store directly from in-memory records with default precedence.
pub fn store_from_records(records: Vec<ThreatRecord>) -> ThreatStore {
    merge_store(&records, &SourcePrecedence::default())
}
