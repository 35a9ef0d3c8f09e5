//! Intent resolution: score the question against the five tasks, then
//! against the chosen task's targets.

use super::{InferError, TaskPlan};
use crate::cascade::TaskGraph;
use crate::modelio::{sample_params, GenerationRequest, TextBackend};
use crate::modelio::mock::{OPTIONS_BEGIN, OPTIONS_END, REQ_CHOICE};
use crate::taxonomy::{AnalyticalTarget, CtiTask};
use crate::util::seeded_rng;
use serde::Deserialize;
use std::collections::BTreeMap;
use std::sync::Arc;

/// Default minimum score for a task or target to count as resolved.
pub const DEFAULT_INTENT_THRESHOLD: f64 = 1.0;

/// Scores tasks and targets for a question. Implementations may ignore
/// `e0`; it is offered for providers that condition on the report.
pub trait TopicProvider: Send + Sync {
    fn score_tasks(&self, question: &str, e0: &str) -> Result<Vec<(CtiTask, f64)>, InferError>;

    fn score_targets(
        &self,
        question: &str,
        task: CtiTask,
        targets: &[AnalyticalTarget],
    ) -> Result<Vec<(AnalyticalTarget, f64)>, InferError>;
}

/// Deterministic phrase matcher: a task or target scores one point per
/// keyword phrase found in the lowercased question.
#[derive(Clone, Debug, Default)]
pub struct KeywordTopicProvider;

fn task_keywords(task: CtiTask) -> &'static [&'static str] {
    match task {
        CtiTask::Attribution => &[
            "threat actor",
            "who is responsible",
            "responsible",
            "attribution",
            "attributed",
            "which group",
            "campaign",
            "ttp",
            "tactics",
        ],
        CtiTask::Contextualization => &[
            "affected system",
            "which systems",
            "what systems",
            "infrastructure",
            "impact",
            "context",
            "consequence",
        ],
        CtiTask::Correlation => &[
            "cve",
            "cwe",
            "vulnerabilit",
            "weakness",
            "associated",
            "related threats",
            "correlat",
        ],
        CtiTask::Prioritization => &[
            "cvss",
            "epss",
            "severity",
            "priorit",
            "how urgent",
            "exploit probability",
        ],
        CtiTask::Remediation => &[
            "remediat",
            "mitigat",
            "patch",
            "fix",
            "advisory",
            "how should we respond",
            "defend",
            "tool",
        ],
    }
}

fn target_keywords(target: AnalyticalTarget) -> &'static [&'static str] {
    use AnalyticalTarget::*;
    match target {
        ThreatActor => &["actor", "who", "responsible", "group", "apt"],
        Ttps => &["ttp", "tactic", "technique", "procedure", "how did"],
        Campaign => &["campaign", "operation", "wave"],
        AffectedSystem => &["system", "affected", "product", "platform", "version"],
        AttackInfra => &["infrastructure", "c2", "command and control", "server", "domain"],
        Impact => &["impact", "consequence", "damage", "effect"],
        CveId => &["cve", "vulnerabilit"],
        CweId => &["cwe", "weakness"],
        CvssMetrics => &["cvss", "severity", "vector", "metric"],
        EpssRecords => &["epss", "probability", "likelihood", "exploit prediction"],
        ToolUse => &["tool", "scanner", "utility"],
        CodePatch => &["patch", "fix", "hotfix", "update"],
        Methodology => &["methodology", "steps", "approach", "how should"],
        Advisory => &["advisory", "bulletin", "guidance"],
    }
}

fn phrase_score(question: &str, phrases: &[&str]) -> f64 {
    let haystack = question.to_lowercase();
    phrases.iter().filter(|p| haystack.contains(*p)).count() as f64
}

impl TopicProvider for KeywordTopicProvider {
    fn score_tasks(&self, question: &str, _e0: &str) -> Result<Vec<(CtiTask, f64)>, InferError> {
        Ok(CtiTask::ALL
            .iter()
            .map(|&task| (task, phrase_score(question, task_keywords(task))))
            .collect())
    }

    fn score_targets(
        &self,
        question: &str,
        _task: CtiTask,
        targets: &[AnalyticalTarget],
    ) -> Result<Vec<(AnalyticalTarget, f64)>, InferError> {
        Ok(targets
            .iter()
            .map(|&t| (t, phrase_score(question, target_keywords(t))))
            .collect())
    }
}

/// Prompts a backend to pick the task and target from listed options. The
/// chosen option scores 1, everything else 0.
pub struct BackendTopicProvider {
    backend: Arc<dyn TextBackend>,
    master_seed: u64,
}

#[derive(Deserialize)]
struct WireChoice {
    choice: String,
}

impl BackendTopicProvider {
    pub fn new(backend: Arc<dyn TextBackend>, master_seed: u64) -> BackendTopicProvider {
        BackendTopicProvider {
            backend,
            master_seed,
        }
    }

    fn choose(&self, question: &str, subject: &str, options: &[&str]) -> Result<String, InferError> {
        let listed: Vec<String> = options.iter().map(|o| format!("- {o}")).collect();
        let prompt = format!(
            "Classify the question into one {subject}. {REQ_CHOICE}\n\n\
             ## Question\n{question}\n\n{OPTIONS_BEGIN}\n{}\n{OPTIONS_END}\n\n\
             Respond with one JSON record: {{\"choice\": \"...\"}}.",
            listed.join("\n"),
        );
        let mut rng = seeded_rng(self.master_seed, &format!("topic:{subject}:{question}"));
        let request = GenerationRequest::structured(&prompt, sample_params(&mut rng));
        let raw = self.backend.generate(&request)?;
        let parsed: WireChoice =
            serde_json::from_str(&raw).map_err(|e| InferError::Extraction {
                stage: "classification".to_string(),
                message: e.to_string(),
            })?;
        Ok(parsed.choice)
    }
}

impl TopicProvider for BackendTopicProvider {
    fn score_tasks(&self, question: &str, _e0: &str) -> Result<Vec<(CtiTask, f64)>, InferError> {
        let names: Vec<&str> = CtiTask::ALL.iter().map(|t| t.name()).collect();
        let choice = self.choose(question, "task", &names)?;
        Ok(CtiTask::ALL
            .iter()
            .map(|&task| (task, if task.name() == choice { 1.0 } else { 0.0 }))
            .collect())
    }

    fn score_targets(
        &self,
        question: &str,
        _task: CtiTask,
        targets: &[AnalyticalTarget],
    ) -> Result<Vec<(AnalyticalTarget, f64)>, InferError> {
        let names: Vec<&str> = targets.iter().map(|t| t.name()).collect();
        let choice = self.choose(question, "target", &names)?;
        Ok(targets
            .iter()
            .map(|&t| (t, if t.name() == choice { 1.0 } else { 0.0 }))
            .collect())
    }
}

/// Two-step intent resolution: pick the best-scoring task (earlier
/// lifecycle task wins ties), then keep that task's targets scoring at or
/// above the threshold. A resolved task with no matching target means the
/// question addresses the task broadly: all its targets are planned.
pub fn plan_tasks(
    question: &str,
    e0: &str,
    graph: &TaskGraph,
    provider: &dyn TopicProvider,
    threshold: f64,
) -> Result<TaskPlan, InferError> {
    if question.trim().is_empty() {
        return Err(InferError::EmptyQuestion);
    }

    let scores = provider.score_tasks(question, e0)?;
    let mut best: Option<(CtiTask, f64)> = None;
    for task in CtiTask::ALL {
        let score = scores
            .iter()
            .find(|(t, _)| *t == task)
            .map(|(_, s)| *s)
            .unwrap_or(0.0);
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((task, score));
        }
    }
    let (task, score) = best.expect("five tasks scored");
    if score < threshold {
        return Err(InferError::UnresolvedIntent {
            question: question.to_string(),
            threshold,
        });
    }

    let target_scores = provider.score_targets(question, task, graph.targets_of(task))?;
    let mut targets: Vec<AnalyticalTarget> = graph
        .targets_of(task)
        .iter()
        .copied()
        .filter(|t| {
            target_scores
                .iter()
                .any(|(cand, s)| cand == t && *s >= threshold)
        })
        .collect();
    if targets.is_empty() {
        targets = graph.targets_of(task).to_vec();
    }

    let prerequisites = graph.dependency_closure(task);
    let mut modules = BTreeMap::new();
    for involved in prerequisites.iter().copied().chain([task]) {
        modules.insert(involved, graph.modules_of(involved).clone());
    }

    Ok(TaskPlan {
        task,
        targets,
        prerequisites,
        modules,
    })
}
