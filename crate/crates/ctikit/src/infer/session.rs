//! Session execution: run the enabled module matrix for the planned task
//! and its prerequisites, then assemble the cascading transcript.
//!
//! Scheduling contract: TOM, NER, REL, and RAG stages run with no ordering
//! constraint among them (one thread each); REA and SUM run afterwards,
//! sequentially, in task dependency order, each consuming the reasoning and
//! summaries of the tasks before it. Stage outputs are pure functions of
//! the seed and prompts, so transcripts are identical across interleavings.

use super::cache::{CacheKey, RetrievalCache};
use super::extract::{bundled_demos, extract_entities, extract_relations};
use super::retrieve::{retrieve, Document, Ranker, Retriever};
use super::topic::{plan_tasks, TopicProvider};
use super::{Entity, InferError, RelationTriple, TaskPlan};
use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::cascade::TaskGraph;
use crate::modelio::{sample_params, BackendRegistry, GenerationRequest, SamplingParams};
use crate::taxonomy::{CtiTask, NlpModule};
use crate::util::seeded_rng;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;
use std::time::Instant;
use thiserror::Error;

pub const TRANSCRIPT_ARTIFACT: &str = "session-transcript";

const TOPIC_TEMPLATE: &str = include_str!("../../assets/prompts/topic.txt");
const REASONING_TEMPLATE: &str = include_str!("../../assets/prompts/reasoning.txt");
const SUMMARY_TEMPLATE: &str = include_str!("../../assets/prompts/summary.txt");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum StageOutput {
    Topic {
        text: String,
    },
    Entities {
        entities: Vec<Entity>,
        retries: u32,
        warnings: Vec<String>,
    },
    Relations {
        triples: Vec<RelationTriple>,
        retries: u32,
        warnings: Vec<String>,
    },
    Evidence {
        key: String,
        cache_hit: bool,
        documents: Vec<Document>,
    },
    Reasoning {
        text: String,
    },
    Summary {
        text: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub task: CtiTask,
    pub module: NlpModule,
    pub output: StageOutput,
}

/// Wall-clock offsets of one stage invocation, in microseconds from
/// session start. Kept in memory for scheduling assertions; not part of
/// the serialized transcript, which must be identical across reruns.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StageTiming {
    pub task: CtiTask,
    pub module: NlpModule,
    pub started_us: u128,
    pub finished_us: u128,
}

/// The response sections, mirroring the inference prompt structure.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalResponse {
    pub topic: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<String>,
    pub evidence: Vec<Document>,
    pub reasoning: String,
    pub summarization: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionTranscript {
    pub e0: String,
    pub question: String,
    pub plan: TaskPlan,
    pub stages: Vec<StageRecord>,
    pub final_response: Option<FinalResponse>,
    #[serde(skip)]
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("planning failed: {0}")]
    Plan(InferError),
    #[error("stage {task}/{module} failed: {error}")]
    Stage {
        task: CtiTask,
        module: NlpModule,
        error: InferError,
        partial: Box<SessionTranscript>,
    },
}

/// Everything a session needs: the task graph, a backend, the topic
/// provider, the retrieval stack, and determinism knobs.
pub struct SessionEngine<'e> {
    pub graph: &'e TaskGraph,
    pub registry: &'e BackendRegistry,
    pub backend_id: &'e str,
    pub topic_provider: &'e dyn TopicProvider,
    pub retriever: &'e dyn Retriever,
    pub ranker: &'e dyn Ranker,
    pub cache: &'e RetrievalCache,
    pub master_seed: u64,
    pub intent_threshold: f64,
    pub bypass_cache: bool,
}

fn stage_order(record: &StageRecord) -> (usize, NlpModule) {
    (record.task.index(), record.module)
}

impl SessionEngine<'_> {
    /// Per-stage sampling parameters, a pure function of the master seed
    /// and the stage identity, so transcripts do not depend on scheduling.
    fn stage_params(&self, task: CtiTask, module: NlpModule, salt: &str) -> SamplingParams {
        let tag = format!("stage:{}:{}{salt}", task.name(), module.name());
        let mut rng = seeded_rng(self.master_seed, &tag);
        sample_params(&mut rng)
    }

    fn text_call(&self, prompt: &str, params: SamplingParams) -> Result<String, InferError> {
        let request = GenerationRequest::text(prompt, params);
        Ok(self.registry.generate(self.backend_id, &request)?.text)
    }

    fn topic_stage(&self, task: CtiTask, e0: &str) -> Result<StageOutput, InferError> {
        let prompt = TOPIC_TEMPLATE
            .replace("{task}", task.name())
            .replace("{e0}", e0);
        let text = self.text_call(&prompt, self.stage_params(task, NlpModule::Tom, ""))?;
        Ok(StageOutput::Topic { text })
    }

    fn entity_stage(&self, task: CtiTask, e0: &str) -> Result<StageOutput, InferError> {
        let out = extract_entities(
            self.registry,
            self.backend_id,
            e0,
            task,
            bundled_demos(task),
            self.stage_params(task, NlpModule::Ner, ""),
        )?;
        Ok(StageOutput::Entities {
            entities: out.items,
            retries: out.retries,
            warnings: out.warnings,
        })
    }

    /// REL runs without ordering against NER, so it derives its own entity
    /// batch rather than consuming the NER stage's output.
    fn relation_stage(&self, task: CtiTask, e0: &str) -> Result<StageOutput, InferError> {
        let probe = extract_entities(
            self.registry,
            self.backend_id,
            e0,
            task,
            bundled_demos(task),
            self.stage_params(task, NlpModule::Rel, ":probe"),
        )?;
        if probe.items.is_empty() {
            let mut warnings = probe.warnings;
            warnings.push("no entities found to relate".to_string());
            return Ok(StageOutput::Relations {
                triples: Vec::new(),
                retries: probe.retries,
                warnings,
            });
        }
        let out = extract_relations(
            self.registry,
            self.backend_id,
            e0,
            &probe.items,
            bundled_demos(task),
            self.stage_params(task, NlpModule::Rel, ""),
        )?;
        let mut warnings = probe.warnings;
        warnings.extend(out.warnings);
        Ok(StageOutput::Relations {
            triples: out.items,
            retries: probe.retries + out.retries,
            warnings,
        })
    }

    /// RAG keys the cache on the report's first extracted entity (falling
    /// back to the question) plus the task's representative target.
    fn evidence_stage(
        &self,
        task: CtiTask,
        e0: &str,
        question: &str,
        plan: &TaskPlan,
    ) -> Result<StageOutput, InferError> {
        let probe = extract_entities(
            self.registry,
            self.backend_id,
            e0,
            task,
            bundled_demos(task),
            self.stage_params(task, NlpModule::Rag, ":probe"),
        )?;
        let entity = probe
            .items
            .first()
            .map(|e| e.surface.clone())
            .unwrap_or_else(|| question.to_string());
        let target = if task == plan.task {
            plan.targets
                .first()
                .copied()
                .unwrap_or(self.graph.targets_of(task)[0])
        } else {
            self.graph.targets_of(task)[0]
        };
        let key = CacheKey::new(task, target, &entity);
        let outcome = retrieve(&key, self.cache, self.retriever, self.ranker, self.bypass_cache)?;
        Ok(StageOutput::Evidence {
            key: key.to_string(),
            cache_hit: outcome.cache_hit,
            documents: outcome.documents,
        })
    }

    fn phase_a_stage(
        &self,
        task: CtiTask,
        module: NlpModule,
        e0: &str,
        question: &str,
        plan: &TaskPlan,
    ) -> Result<StageOutput, InferError> {
        match module {
            NlpModule::Tom => self.topic_stage(task, e0),
            NlpModule::Ner => self.entity_stage(task, e0),
            NlpModule::Rel => self.relation_stage(task, e0),
            NlpModule::Rag => self.evidence_stage(task, e0, question, plan),
            NlpModule::Rea | NlpModule::Sum => unreachable!("phase B module"),
        }
    }

    fn render_findings(records: &[StageRecord], task: CtiTask) -> String {
        let mut out = String::new();
        for record in records.iter().filter(|r| r.task == task) {
            match &record.output {
                StageOutput::Topic { text } => {
                    out.push_str(&format!("Topic: {text}\n"));
                }
                StageOutput::Entities { entities, .. } => {
                    out.push_str("Entities:\n");
                    for entity in entities {
                        out.push_str(&format!("- {} ({})\n", entity.surface, entity.category));
                    }
                }
                StageOutput::Relations { triples, .. } => {
                    out.push_str("Relations:\n");
                    for triple in triples {
                        out.push_str(&format!("- {triple}\n"));
                    }
                }
                StageOutput::Evidence { documents, .. } => {
                    out.push_str("Evidence:\n");
                    for doc in documents {
                        out.push_str(&format!("- [{}] {}: {}\n", doc.source, doc.id, doc.text));
                    }
                }
                StageOutput::Reasoning { .. } | StageOutput::Summary { .. } => {}
            }
        }
        if out.is_empty() {
            out.push_str("None.\n");
        }
        out
    }

    fn reasoning_stage(
        &self,
        task: CtiTask,
        question: &str,
        e0: &str,
        prior: &str,
        findings: &str,
    ) -> Result<StageOutput, InferError> {
        let prompt = REASONING_TEMPLATE
            .replace("{task}", task.name())
            .replace("{question}", question)
            .replace("{e0}", e0)
            .replace("{prior}", if prior.is_empty() { "None." } else { prior })
            .replace("{findings}", findings);
        let text = self.text_call(&prompt, self.stage_params(task, NlpModule::Rea, ""))?;
        Ok(StageOutput::Reasoning { text })
    }

    fn summary_stage(&self, task: CtiTask, reasoning: &str) -> Result<StageOutput, InferError> {
        let prompt = SUMMARY_TEMPLATE
            .replace("{task}", task.name())
            .replace("{reasoning}", reasoning);
        let text = self.text_call(&prompt, self.stage_params(task, NlpModule::Sum, ""))?;
        Ok(StageOutput::Summary { text })
    }

    /// Runs the full session for one question.
    pub fn run_session(
        &self,
        e0: &str,
        question: &str,
    ) -> Result<SessionTranscript, SessionError> {
        let plan = plan_tasks(
            question,
            e0,
            self.graph,
            self.topic_provider,
            self.intent_threshold,
        )
        .map_err(SessionError::Plan)?;

        let involved = plan.involved_tasks();
        let session_start = Instant::now();

        // Phase A: the concurrent stages, one thread per enabled module.
        let mut jobs: Vec<(CtiTask, NlpModule)> = Vec::new();
        for &task in &involved {
            for module in [NlpModule::Tom, NlpModule::Ner, NlpModule::Rel, NlpModule::Rag] {
                if plan.modules[&task].contains(&module) {
                    jobs.push((task, module));
                }
            }
        }

        type PhaseAResult = Result<(StageRecord, StageTiming), (CtiTask, NlpModule, InferError)>;
        let results: Mutex<Vec<PhaseAResult>> = Mutex::new(Vec::new());
        std::thread::scope(|scope| {
            for &(task, module) in &jobs {
                let results = &results;
                let plan = &plan;
                scope.spawn(move || {
                    let started_us = session_start.elapsed().as_micros();
                    let outcome = self.phase_a_stage(task, module, e0, question, plan);
                    let finished_us = session_start.elapsed().as_micros();
                    let entry = outcome
                        .map(|output| {
                            (
                                StageRecord { task, module, output },
                                StageTiming { task, module, started_us, finished_us },
                            )
                        })
                        .map_err(|error| (task, module, error));
                    results.lock().expect("results lock").push(entry);
                });
            }
        });

        let mut stages: Vec<StageRecord> = Vec::new();
        let mut timings: Vec<StageTiming> = Vec::new();
        let mut failures: Vec<(CtiTask, NlpModule, InferError)> = Vec::new();
        for entry in results.into_inner().expect("results lock") {
            match entry {
                Ok((record, timing)) => {
                    stages.push(record);
                    timings.push(timing);
                }
                Err(failure) => failures.push(failure),
            }
        }
        stages.sort_by_key(stage_order);
        timings.sort_by_key(|t| (t.task.index(), t.module));

        let partial = |stages: Vec<StageRecord>, timings: Vec<StageTiming>| SessionTranscript {
            e0: e0.to_string(),
            question: question.to_string(),
            plan: plan.clone(),
            stages,
            final_response: None,
            timings,
        };

        failures.sort_by_key(|(task, module, _)| (task.index(), *module));
        if let Some((task, module, error)) = failures.into_iter().next() {
            return Err(SessionError::Stage {
                task,
                module,
                error,
                partial: Box::new(partial(stages, timings)),
            });
        }

        // Phase B: reasoning then summarization, strictly in dependency
        // order, consuming all prior REA/SUM text.
        let mut prior = String::new();
        for &task in &involved {
            let task_question = if task == plan.task {
                question.to_string()
            } else {
                format!("Assess {} for this report.", task.name())
            };
            let findings = Self::render_findings(&stages, task);
            for module in [NlpModule::Rea, NlpModule::Sum] {
                let started_us = session_start.elapsed().as_micros();
                let outcome = match module {
                    NlpModule::Rea => {
                        self.reasoning_stage(task, &task_question, e0, &prior, &findings)
                    }
                    _ => {
                        let reasoning = match &stages.last().expect("REA precedes SUM").output {
                            StageOutput::Reasoning { text } => text.clone(),
                            _ => unreachable!("REA record appended before SUM runs"),
                        };
                        self.summary_stage(task, &reasoning)
                    }
                };
                let finished_us = session_start.elapsed().as_micros();
                match outcome {
                    Ok(output) => {
                        stages.push(StageRecord { task, module, output });
                        timings.push(StageTiming { task, module, started_us, finished_us });
                    }
                    Err(error) => {
                        stages.sort_by_key(stage_order);
                        timings.sort_by_key(|t| (t.task.index(), t.module));
                        return Err(SessionError::Stage {
                            task,
                            module,
                            error,
                            partial: Box::new(partial(stages, timings)),
                        });
                    }
                }
            }
            let rea_text = stages
                .iter()
                .find(|r| r.task == task && r.module == NlpModule::Rea)
                .map(|r| match &r.output {
                    StageOutput::Reasoning { text } => text.clone(),
                    _ => String::new(),
                })
                .unwrap_or_default();
            let sum_text = stages
                .iter()
                .find(|r| r.task == task && r.module == NlpModule::Sum)
                .map(|r| match &r.output {
                    StageOutput::Summary { text } => text.clone(),
                    _ => String::new(),
                })
                .unwrap_or_default();
            prior.push_str(&format!(
                "### {} reasoning\n{rea_text}\n### {} summary\n{sum_text}\n",
                task.name(),
                task.name(),
            ));
        }

        stages.sort_by_key(stage_order);
        timings.sort_by_key(|t| (t.task.index(), t.module));
        let final_response = Some(assemble_final(&plan, &stages));
        Ok(SessionTranscript {
            e0: e0.to_string(),
            question: question.to_string(),
            plan,
            stages,
            final_response,
            timings,
        })
    }
}

/// Builds the response sections from the requested task's stage records.
fn assemble_final(plan: &TaskPlan, stages: &[StageRecord]) -> FinalResponse {
    let find = |module: NlpModule| {
        stages
            .iter()
            .find(|r| r.task == plan.task && r.module == module)
    };
    let mut response = FinalResponse::default();
    if let Some(StageOutput::Topic { text }) = find(NlpModule::Tom).map(|r| &r.output) {
        response.topic = text.clone();
    }
    if let Some(StageOutput::Entities { entities, .. }) = find(NlpModule::Ner).map(|r| &r.output) {
        response.entities = entities.clone();
    }
    if let Some(StageOutput::Relations { triples, .. }) = find(NlpModule::Rel).map(|r| &r.output) {
        response.relations = triples.iter().map(|t| t.to_string()).collect();
    }
    if let Some(StageOutput::Evidence { documents, .. }) = find(NlpModule::Rag).map(|r| &r.output) {
        response.evidence = documents.clone();
    }
    if let Some(StageOutput::Reasoning { text }) = find(NlpModule::Rea).map(|r| &r.output) {
        response.reasoning = text.clone();
    }
    if let Some(StageOutput::Summary { text }) = find(NlpModule::Sum).map(|r| &r.output) {
        response.summarization = text.clone();
    }
    response
}

/// Writes session transcripts (one per line; a REPL appends one per turn).
pub fn write_transcript(
    path: &std::path::Path,
    transcripts: &[SessionTranscript],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(TRANSCRIPT_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, transcripts)
}

pub fn read_transcript(
    path: &std::path::Path,
) -> Result<(ArtifactHeader, Vec<SessionTranscript>), ArtifactError> {
    read_artifact(path, TRANSCRIPT_ARTIFACT)
}
