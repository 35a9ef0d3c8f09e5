//! The modularized inference engine: task planning, entity and relation
//! extraction, cached retrieval, and cascading session transcripts.

pub mod cache;
pub mod extract;
pub mod retrieve;
pub mod session;
pub mod topic;

use crate::modelio::ModelIoError;
use crate::taxonomy::{AnalyticalTarget, CtiTask, NlpModule};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

pub use cache::{CacheKey, CachePolicy, CacheStats, RetrievalCache, DEFAULT_CACHE_CAPACITY};
pub use extract::{extract_entities, extract_relations, ExtractOutcome, ExtractionDemo};
pub use retrieve::{
    retrieve, BackendRanker, Document, FetchOrderRanker, HttpRetriever, MockRetriever, Ranker,
    RetrievalOutcome, Retriever,
};
pub use session::{
    read_transcript, write_transcript, FinalResponse, SessionEngine, SessionError, StageOutput,
    StageRecord, StageTiming, TRANSCRIPT_ARTIFACT,
};
pub use session::SessionTranscript;
pub use topic::{
    plan_tasks, BackendTopicProvider, KeywordTopicProvider, TopicProvider,
    DEFAULT_INTENT_THRESHOLD,
};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("question must not be empty")]
    EmptyQuestion,
    #[error("intent unresolved: no task scored at or above {threshold} for {question:?}")]
    UnresolvedIntent { question: String, threshold: f64 },
    #[error("{stage} extraction failed after a repair retry: {message}")]
    Extraction { stage: String, message: String },
    #[error("no entities provided for relation extraction")]
    NoEntities,
    #[error("retrieval for {key}: {message}")]
    Retrieval { key: String, message: String },
    #[error("ranking failed: {message}")]
    Ranking { message: String },
    #[error(transparent)]
    Backend(#[from] ModelIoError),
}

/// Resolved intent: the requested task, its in-task targets, the
/// prerequisite tasks in lifecycle order, and the enabled module set for
/// every involved task (copied verbatim from the task graph).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskPlan {
    pub task: CtiTask,
    pub targets: Vec<AnalyticalTarget>,
    pub prerequisites: Vec<CtiTask>,
    pub modules: BTreeMap<CtiTask, BTreeSet<NlpModule>>,
}

impl TaskPlan {
    /// Prerequisites then the requested task, in execution order.
    pub fn involved_tasks(&self) -> Vec<CtiTask> {
        let mut tasks = self.prerequisites.clone();
        tasks.push(self.task);
        tasks
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityCategory {
    ThreatActor,
    Infrastructure,
    Malware,
    Product,
    Identifier,
    Other,
}

impl EntityCategory {
    pub const ALL: [EntityCategory; 6] = [
        EntityCategory::ThreatActor,
        EntityCategory::Infrastructure,
        EntityCategory::Malware,
        EntityCategory::Product,
        EntityCategory::Identifier,
        EntityCategory::Other,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EntityCategory::ThreatActor => "threat actor",
            EntityCategory::Infrastructure => "infrastructure",
            EntityCategory::Malware => "malware",
            EntityCategory::Product => "product",
            EntityCategory::Identifier => "identifier",
            EntityCategory::Other => "other",
        }
    }
}

impl fmt::Display for EntityCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EntityCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_lowercase().replace(['_', '-'], " ");
        EntityCategory::ALL
            .iter()
            .copied()
            .find(|c| c.name() == key)
            .ok_or_else(|| format!("unknown entity category: {s:?}"))
    }
}

/// Byte offsets into the source text; `text[start..end]` is the surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub surface: String,
    pub category: EntityCategory,
    pub span: Span,
}

/// Subject and object are surfaces of entities in the same extraction
/// batch; construction drops triples that reference anything else.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: String,
    pub relation: String,
    pub object: String,
}

impl fmt::Display for RelationTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.relation, self.object)
    }
}
