//! Cascading instruction-tuning chains: initial evidence plus
//! dependency-ordered (question, answer) steps rendered from structured
//! record fields.
//!
//! The task graph fixes which analytical targets each task owns, which tasks
//! must come first, and which NLP modules the inference engine enables per
//! task. Chains skip targets with absent evidence, so most records yield
//! partial pipelines.

use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::ingest::{CveId, ThreatRecord};
use crate::taxonomy::{AnalyticalTarget, CtiTask, NlpModule};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;
use thiserror::Error;

pub const DATASET_ARTIFACT: &str = "cascade-dataset";
pub const CONTEXTS_ARTIFACT: &str = "cascade-contexts";

/// Joiner between context segments: one blank line.
pub const DEFAULT_JOINER: &str = "\n\n";

#[derive(Debug, Error)]
pub enum CascadeError {
    #[error("record {0} has an empty description; no initial evidence to build on")]
    NoEvidence(CveId),
    #[error("no question template for target {0}")]
    MissingTemplate(AnalyticalTarget),
    #[error("template asset {path}: {message}")]
    Asset { path: String, message: String },
}

/// The five-task dependency DAG, per-task target lists, and per-task NLP
/// module sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskGraph {
    targets: BTreeMap<CtiTask, Vec<AnalyticalTarget>>,
    deps: BTreeMap<CtiTask, BTreeSet<CtiTask>>,
    modules: BTreeMap<CtiTask, BTreeSet<NlpModule>>,
}

impl TaskGraph {
    pub fn standard() -> TaskGraph {
        use AnalyticalTarget::*;
        use CtiTask::*;
        use NlpModule::*;

        let targets: BTreeMap<CtiTask, Vec<AnalyticalTarget>> = [
            (Attribution, vec![ThreatActor, Ttps, Campaign]),
            (Contextualization, vec![AffectedSystem, AttackInfra, Impact]),
            (Correlation, vec![CveId, CweId]),
            (Prioritization, vec![CvssMetrics, EpssRecords]),
            (Remediation, vec![ToolUse, CodePatch, Methodology, Advisory]),
        ]
        .into_iter()
        .collect();

        let deps: BTreeMap<CtiTask, BTreeSet<CtiTask>> = [
            (Attribution, BTreeSet::new()),
            (Contextualization, BTreeSet::new()),
            (Correlation, BTreeSet::from([Attribution, Contextualization])),
            (
                Prioritization,
                BTreeSet::from([Attribution, Contextualization, Correlation]),
            ),
            (
                Remediation,
                BTreeSet::from([Attribution, Contextualization, Correlation, Prioritization]),
            ),
        ]
        .into_iter()
        .collect();

        // Contextualization runs no retrieval; Correlation extracts no
        // entities or relations; Prioritization extracts no relations.
        let modules: BTreeMap<CtiTask, BTreeSet<NlpModule>> = [
            (Attribution, BTreeSet::from([Tom, Ner, Rel, Rag, Rea, Sum])),
            (Contextualization, BTreeSet::from([Tom, Ner, Rel, Rea, Sum])),
            (Correlation, BTreeSet::from([Tom, Rag, Rea, Sum])),
            (Prioritization, BTreeSet::from([Tom, Ner, Rag, Rea, Sum])),
            (Remediation, BTreeSet::from([Tom, Ner, Rel, Rag, Rea, Sum])),
        ]
        .into_iter()
        .collect();

        TaskGraph {
            targets,
            deps,
            modules,
        }
    }

    pub fn targets_of(&self, task: CtiTask) -> &[AnalyticalTarget] {
        &self.targets[&task]
    }

    pub fn deps_of(&self, task: CtiTask) -> &BTreeSet<CtiTask> {
        &self.deps[&task]
    }

    pub fn modules_of(&self, task: CtiTask) -> &BTreeSet<NlpModule> {
        &self.modules[&task]
    }

    /// Prerequisites of `task` in lifecycle order, excluding the task
    /// itself.
    pub fn dependency_closure(&self, task: CtiTask) -> Vec<CtiTask> {
        CtiTask::ALL
            .iter()
            .copied()
            .filter(|t| self.deps[&task].contains(t))
            .collect()
    }
}

/// Question and answer templates for one analytical target. `{value}` in
/// the answer takes the rendered evidence; `{cve_id}` in either slot takes
/// the record id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetTemplates {
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionLibrary {
    map: BTreeMap<String, TargetTemplates>,
}

impl QuestionLibrary {
    /// The template set shipped with the crate; covers all 14 targets.
    pub fn bundled() -> QuestionLibrary {
        serde_json::from_str(include_str!("../assets/templates/questions.json"))
            .expect("shipped question templates are valid")
    }

    pub fn from_file(path: &Path) -> Result<QuestionLibrary, CascadeError> {
        let text = std::fs::read_to_string(path).map_err(|e| CascadeError::Asset {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CascadeError::Asset {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn for_target(&self, target: AnalyticalTarget) -> Result<&TargetTemplates, CascadeError> {
        self.map
            .get(target.name())
            .ok_or(CascadeError::MissingTemplate(target))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeStep {
    pub index: usize,
    pub task: CtiTask,
    pub target: AnalyticalTarget,
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CascadeChain {
    pub chain_id: String,
    pub e0: String,
    pub steps: Vec<CascadeStep>,
    pub joiner: String,
}

/// Exact training context for one step: e0 ⊕ A_1 ⊕ … ⊕ A_{i−1} ⊕ Q_i.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepContext {
    pub index: usize,
    pub context: String,
    pub answer: String,
}

fn cve_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"(?i)CVE-\d{4}-\d{4,}").expect("pattern compiles"))
}

/// CVE ids mentioned in the description or reference URLs, excluding the
/// record's own id. These are the correlation evidence; a record that
/// mentions no other CVEs has none, and the correlation step is skipped.
pub fn related_cves(record: &ThreatRecord) -> Vec<String> {
    let mut found = BTreeSet::new();
    let mut scan = |text: &str| {
        for hit in cve_pattern().find_iter(text) {
            let id = hit.as_str().to_uppercase();
            if id != record.cve_id.as_str() {
                found.insert(id);
            }
        }
    };
    scan(&record.description);
    for reference in &record.references {
        scan(&reference.url);
    }
    found.into_iter().collect()
}

fn join_set(set: &BTreeSet<String>) -> String {
    let items: Vec<&str> = set.iter().map(|s| s.as_str()).collect();
    items.join(", ")
}

/// The rendered evidence for one target, or None when the record lacks it.
pub fn evidence_value(record: &ThreatRecord, target: AnalyticalTarget) -> Option<String> {
    use AnalyticalTarget::*;
    match target {
        ThreatActor => record.threat_actor.clone(),
        Ttps => (!record.ttps.is_empty()).then(|| join_set(&record.ttps)),
        Campaign => record.campaign.clone(),
        AffectedSystem => {
            (!record.affected_systems.is_empty()).then(|| join_set(&record.affected_systems))
        }
        AttackInfra => (!record.attack_infra.is_empty()).then(|| join_set(&record.attack_infra)),
        Impact => record.impact.clone(),
        CveId => {
            let related = related_cves(record);
            (!related.is_empty()).then(|| related.join(", "))
        }
        CweId => (!record.cwe_ids.is_empty()).then(|| join_set(&record.cwe_ids)),
        CvssMetrics => record.cvss.as_ref().map(|cvss| cvss.to_string()),
        EpssRecords => record.epss.as_ref().and_then(|epss| {
            let points: Vec<String> = epss
                .points()
                .iter()
                .map(|p| format!("{}: {:.2}%", p.date, p.score))
                .collect();
            (!points.is_empty()).then(|| points.join(", "))
        }),
        ToolUse => record
            .remediation
            .as_ref()
            .filter(|r| !r.tools.is_empty())
            .map(|r| join_set(&r.tools)),
        CodePatch => record.remediation.as_ref().and_then(|r| r.patch.clone()),
        Methodology => record
            .remediation
            .as_ref()
            .and_then(|r| r.methodology.clone()),
        Advisory => record.remediation.as_ref().and_then(|r| r.advisory.clone()),
    }
}

fn render(template: &str, value: &str, cve_id: &CveId) -> String {
    template
        .replace("{value}", value)
        .replace("{cve_id}", cve_id.as_str())
}

/// Builds the chain for one record: one step per populated target, tasks in
/// lifecycle order, targets in table order within a task.
pub fn build_chain(
    record: &ThreatRecord,
    graph: &TaskGraph,
    templates: &QuestionLibrary,
) -> Result<CascadeChain, CascadeError> {
    if record.description.trim().is_empty() {
        return Err(CascadeError::NoEvidence(record.cve_id.clone()));
    }
    let mut steps = Vec::new();
    for task in CtiTask::ALL {
        for &target in graph.targets_of(task) {
            let Some(value) = evidence_value(record, target) else {
                continue;
            };
            let slots = templates.for_target(target)?;
            steps.push(CascadeStep {
                index: steps.len() + 1,
                task,
                target,
                question: render(&slots.question, &value, &record.cve_id),
                answer: render(&slots.answer, &value, &record.cve_id),
            });
        }
    }
    Ok(CascadeChain {
        chain_id: format!("chain-{}", record.cve_id),
        e0: record.description.trim().to_string(),
        steps,
        joiner: DEFAULT_JOINER.to_string(),
    })
}

/// Builds every step's exact training context.
pub fn serialize_chain(chain: &CascadeChain) -> Vec<StepContext> {
    let mut contexts = Vec::with_capacity(chain.steps.len());
    for (i, step) in chain.steps.iter().enumerate() {
        let mut segments: Vec<&str> = Vec::with_capacity(i + 2);
        segments.push(&chain.e0);
        for prior in &chain.steps[..i] {
            segments.push(&prior.answer);
        }
        segments.push(&step.question);
        contexts.push(StepContext {
            index: step.index,
            context: segments.join(&chain.joiner),
            answer: step.answer.clone(),
        });
    }
    contexts
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ChainFinding {
    DependencyViolation { step: usize, task: CtiTask, prerequisite: CtiTask },
    DuplicateTarget { task: CtiTask, target: AnalyticalTarget },
    NonContiguousIndex { position: usize, expected: usize, found: usize },
}

impl fmt::Display for ChainFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainFinding::DependencyViolation { task, prerequisite, .. } => {
                write!(f, "{task} precedes {prerequisite}")
            }
            ChainFinding::DuplicateTarget { task, target } => {
                write!(f, "duplicate step for ({task}, {target})")
            }
            ChainFinding::NonContiguousIndex { position, expected, found } => {
                write!(f, "step at position {position} has index {found}, expected {expected}")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<ChainFinding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks dependency order, duplicate targets, and index contiguity. An
/// absent prerequisite task is fine (chains may be partial); a present one
/// appearing only after its dependent is a violation.
pub fn validate_chain(chain: &CascadeChain, graph: &TaskGraph) -> ValidationReport {
    let mut findings = Vec::new();

    for (position, step) in chain.steps.iter().enumerate() {
        let expected = position + 1;
        if step.index != expected {
            findings.push(ChainFinding::NonContiguousIndex {
                position,
                expected,
                found: step.index,
            });
        }
    }

    let mut seen: BTreeSet<(CtiTask, AnalyticalTarget)> = BTreeSet::new();
    for step in &chain.steps {
        if !seen.insert((step.task, step.target)) {
            findings.push(ChainFinding::DuplicateTarget {
                task: step.task,
                target: step.target,
            });
        }
    }

    let mut first_position: BTreeMap<CtiTask, usize> = BTreeMap::new();
    for (position, step) in chain.steps.iter().enumerate() {
        first_position.entry(step.task).or_insert(position);
    }
    let mut reported: BTreeSet<(CtiTask, CtiTask)> = BTreeSet::new();
    for (position, step) in chain.steps.iter().enumerate() {
        for &prerequisite in graph.deps_of(step.task) {
            if let Some(&first) = first_position.get(&prerequisite) {
                if first > position && reported.insert((step.task, prerequisite)) {
                    findings.push(ChainFinding::DependencyViolation {
                        step: step.index,
                        task: step.task,
                        prerequisite,
                    });
                }
            }
        }
    }

    ValidationReport { findings }
}

/// Flattened step context with its owning chain, for the contexts file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextRecord {
    pub chain_id: String,
    pub index: usize,
    pub context: String,
    pub answer: String,
}

pub fn write_dataset(
    path: &Path,
    chains: &[CascadeChain],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(DATASET_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, chains)
}

pub fn read_dataset(path: &Path) -> Result<(ArtifactHeader, Vec<CascadeChain>), ArtifactError> {
    read_artifact(path, DATASET_ARTIFACT)
}

pub fn write_contexts(
    path: &Path,
    chains: &[CascadeChain],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(CONTEXTS_ARTIFACT, config_digest, seed);
    let mut records = Vec::new();
    for chain in chains {
        for context in serialize_chain(chain) {
            records.push(ContextRecord {
                chain_id: chain.chain_id.clone(),
                index: context.index,
                context: context.context,
                answer: context.answer,
            });
        }
    }
    write_artifact(path, &header, &records)
}

pub fn read_contexts(path: &Path) -> Result<(ArtifactHeader, Vec<ContextRecord>), ArtifactError> {
    read_artifact(path, CONTEXTS_ARTIFACT)
}
