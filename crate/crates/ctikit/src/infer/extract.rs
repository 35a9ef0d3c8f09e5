//! Few-shot entity and relation extraction over structured backend output.
//!
//! The output contract is strict: one JSON record of the requested shape.
//! A schema-invalid completion earns exactly one repair retry with a
//! corrective instruction appended; a second failure is an error.

use super::{Entity, EntityCategory, InferError, RelationTriple, Span};
use crate::modelio::mock::{
    ENTITIES_BEGIN, ENTITIES_END, REQ_ENTITIES, REQ_RELATIONS, TEXT_BEGIN, TEXT_END,
};
use crate::modelio::{BackendRegistry, GenerationRequest, Message, OutputMode, SamplingParams};
use crate::taxonomy::CtiTask;
use serde::Deserialize;

/// One worked example embedded in the extraction prompt.
#[derive(Clone, Debug)]
pub struct ExtractionDemo {
    pub text: &'static str,
    pub entities: &'static [(&'static str, &'static str)],
}

/// Task-specific few-shot demos for entity extraction.
pub fn bundled_demos(task: CtiTask) -> &'static [ExtractionDemo] {
    match task {
        CtiTask::Attribution => &[ExtractionDemo {
            text: "Analysts attribute the intrusion to APT41 based on loader overlap.",
            entities: &[("APT41", "threat actor")],
        }],
        CtiTask::Contextualization => &[ExtractionDemo {
            text: "The implant beaconed to relay.badcdn.net from patched jump hosts.",
            entities: &[("relay.badcdn.net", "infrastructure")],
        }],
        CtiTask::Correlation => &[ExtractionDemo {
            text: "Exploitation of CVE-2021-44228 was observed in the same wave.",
            entities: &[("CVE-2021-44228", "identifier")],
        }],
        CtiTask::Prioritization => &[ExtractionDemo {
            text: "Unpatched BIG-IP 16.1 appliances face the highest exposure.",
            entities: &[("BIG-IP 16.1", "product")],
        }],
        CtiTask::Remediation => &[ExtractionDemo {
            text: "Deploy YARA rules and isolate hosts running Cobalt Strike beacons.",
            entities: &[("Cobalt Strike", "malware")],
        }],
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExtractOutcome<T> {
    pub items: Vec<T>,
    pub retries: u32,
    pub warnings: Vec<String>,
}

impl<T> ExtractOutcome<T> {
    fn empty() -> ExtractOutcome<T> {
        ExtractOutcome {
            items: Vec::new(),
            retries: 0,
            warnings: Vec::new(),
        }
    }
}

fn render_demos(demos: &[ExtractionDemo]) -> String {
    let mut out = String::new();
    for demo in demos {
        out.push_str("Report: ");
        out.push_str(demo.text);
        out.push_str("\nEntities:\n");
        for (surface, category) in demo.entities {
            out.push_str(&format!("- {surface} ({category})\n"));
        }
    }
    out
}

fn entity_prompt(text: &str, task: CtiTask, demos: &[ExtractionDemo]) -> String {
    let categories: Vec<&str> = EntityCategory::ALL.iter().map(|c| c.name()).collect();
    format!(
        "Extract the entities relevant to {task} analysis from the report. {REQ_ENTITIES}\n\
         Allowed categories: {}.\n\n\
         ## Examples\n{}\n\
         ## Report\n{TEXT_BEGIN}\n{text}\n{TEXT_END}\n\n\
         Respond with one JSON record: {{\"items\": [{{\"surface\": \"...\", \"category\": \"...\"}}]}}.",
        categories.join(", "),
        render_demos(demos),
    )
}

fn relation_prompt(text: &str, entities: &[Entity], demos: &[ExtractionDemo]) -> String {
    let listed: Vec<String> = entities.iter().map(|e| format!("- {}", e.surface)).collect();
    format!(
        "Identify relations among the listed entities, grounded in the report. {REQ_RELATIONS}\n\n\
         ## Examples\n{}\n\
         ## Entities\n{ENTITIES_BEGIN}\n{}\n{ENTITIES_END}\n\n\
         ## Report\n{text}\n\n\
         Respond with one JSON record: \
         {{\"triples\": [{{\"subject\": \"...\", \"relation\": \"...\", \"object\": \"...\"}}]}}.",
        render_demos(demos),
        listed.join("\n"),
    )
}

const REPAIR_NOTE: &str = "The previous output was not a valid JSON record of the requested \
                           shape. Respond again with only the JSON record.";

/// Runs a structured call, retrying once with a repair note when `parse`
/// rejects the completion. Returns the parsed value and the retry count.
fn call_with_repair<T>(
    registry: &BackendRegistry,
    backend_id: &str,
    prompt: &str,
    params: SamplingParams,
    stage: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<(T, u32), InferError> {
    let request = GenerationRequest::structured(prompt, params);
    let first = registry.generate(backend_id, &request)?;
    match parse(&first.text) {
        Ok(value) => Ok((value, 0)),
        Err(first_error) => {
            let mut messages = request.messages.clone();
            messages.push(Message::user(REPAIR_NOTE));
            let retry = GenerationRequest {
                messages,
                params,
                mode: OutputMode::Structured,
            };
            let second = registry.generate(backend_id, &retry)?;
            match parse(&second.text) {
                Ok(value) => Ok((value, 1)),
                Err(second_error) => Err(InferError::Extraction {
                    stage: stage.to_string(),
                    message: format!("{first_error}; after repair: {second_error}"),
                }),
            }
        }
    }
}

#[derive(Deserialize)]
struct WireEntity {
    surface: String,
    category: String,
}

#[derive(Deserialize)]
struct WireEntities {
    items: Vec<WireEntity>,
}

fn parse_entities(raw: &str) -> Result<Vec<(String, EntityCategory)>, String> {
    let parsed: WireEntities = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    parsed
        .items
        .into_iter()
        .map(|item| {
            let category = item.category.parse::<EntityCategory>()?;
            if item.surface.trim().is_empty() {
                return Err("empty entity surface".to_string());
            }
            Ok((item.surface, category))
        })
        .collect()
}

/// Extracts entities from `text` with task-specific few-shot demos. The
/// backend's surfaces are resolved to spans in `text`; surfaces that do not
/// occur in the text are dropped with a warning.
pub fn extract_entities(
    registry: &BackendRegistry,
    backend_id: &str,
    text: &str,
    task: CtiTask,
    demos: &[ExtractionDemo],
    params: SamplingParams,
) -> Result<ExtractOutcome<Entity>, InferError> {
    if text.trim().is_empty() {
        return Ok(ExtractOutcome::empty());
    }
    let prompt = entity_prompt(text, task, demos);
    let (pairs, retries) =
        call_with_repair(registry, backend_id, &prompt, params, "entity", parse_entities)?;

    let mut items: Vec<Entity> = Vec::new();
    let mut warnings = Vec::new();
    for (surface, category) in pairs {
        if items
            .iter()
            .any(|e| e.surface.eq_ignore_ascii_case(&surface))
        {
            continue;
        }
        match text.find(&surface) {
            Some(start) => items.push(Entity {
                span: Span {
                    start,
                    end: start + surface.len(),
                },
                surface,
                category,
            }),
            None => warnings.push(format!("surface {surface:?} not found in source text")),
        }
    }
    Ok(ExtractOutcome {
        items,
        retries,
        warnings,
    })
}

#[derive(Deserialize)]
struct WireTriple {
    subject: String,
    relation: String,
    object: String,
}

#[derive(Deserialize)]
struct WireTriples {
    triples: Vec<WireTriple>,
}

fn parse_triples(raw: &str) -> Result<Vec<WireTriple>, String> {
    let parsed: WireTriples = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    Ok(parsed.triples)
}

/// Extracts relation triples among `entities`. Triples naming an entity
/// outside the batch, or with an empty relation label, are dropped with a
/// warning.
pub fn extract_relations(
    registry: &BackendRegistry,
    backend_id: &str,
    text: &str,
    entities: &[Entity],
    demos: &[ExtractionDemo],
    params: SamplingParams,
) -> Result<ExtractOutcome<RelationTriple>, InferError> {
    if entities.is_empty() {
        return Err(InferError::NoEntities);
    }
    let prompt = relation_prompt(text, entities, demos);
    let (raw_triples, retries) =
        call_with_repair(registry, backend_id, &prompt, params, "relation", parse_triples)?;

    let known = |surface: &str| entities.iter().any(|e| e.surface == surface);
    let mut items = Vec::new();
    let mut warnings = Vec::new();
    for triple in raw_triples {
        if !known(&triple.subject) || !known(&triple.object) {
            warnings.push(format!(
                "triple ({}, {}, {}) references an entity outside the batch",
                triple.subject, triple.relation, triple.object
            ));
            continue;
        }
        if triple.relation.trim().is_empty() {
            warnings.push(format!(
                "triple ({}, _, {}) has an empty relation label",
                triple.subject, triple.object
            ));
            continue;
        }
        items.push(RelationTriple {
            subject: triple.subject,
            relation: triple.relation,
            object: triple.object,
        });
    }
    Ok(ExtractOutcome {
        items,
        retries,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelio::testing::ScriptedBackend;
    use crate::modelio::BackendRegistry;
    use std::sync::Arc;

    fn params() -> SamplingParams {
        SamplingParams::new(0.5, 0.9, 1).unwrap()
    }

    fn scripted(responses: &[&str]) -> (BackendRegistry, Arc<ScriptedBackend>) {
        let backend = Arc::new(ScriptedBackend::new("scripted", responses));
        let mut registry = BackendRegistry::new();
        registry.register(backend.clone()).unwrap();
        (registry, backend)
    }

    const REPORT: &str = "APT28 relies on C2 communication over rented relays.";

    #[test]
    fn scripted_report_yields_actor_and_infrastructure() {
        let (registry, _) = scripted(&[
            r#"{"items": [{"surface": "APT28", "category": "threat actor"},
                           {"surface": "C2 communication", "category": "infrastructure"}]}"#,
        ]);
        let out = extract_entities(
            &registry,
            "scripted",
            REPORT,
            CtiTask::Attribution,
            bundled_demos(CtiTask::Attribution),
            params(),
        )
        .unwrap();
        assert_eq!(out.retries, 0);
        assert_eq!(out.items.len(), 2);
        assert_eq!(out.items[0].surface, "APT28");
        assert_eq!(out.items[0].category, EntityCategory::ThreatActor);
        assert_eq!(out.items[1].category, EntityCategory::Infrastructure);
        for entity in &out.items {
            assert_eq!(
                &REPORT[entity.span.start..entity.span.end],
                entity.surface.as_str()
            );
        }
    }

    #[test]
    fn empty_text_skips_the_backend() {
        let (registry, backend) = scripted(&[]);
        let out = extract_entities(
            &registry,
            "scripted",
            "   ",
            CtiTask::Attribution,
            &[],
            params(),
        )
        .unwrap();
        assert!(out.items.is_empty());
        assert_eq!(backend.prompts().len(), 0);
    }

    #[test]
    fn malformed_output_earns_one_repair_retry() {
        let (registry, backend) = scripted(&[
            "not json at all",
            r#"{"items": [{"surface": "APT28", "category": "threat actor"}]}"#,
        ]);
        let out = extract_entities(
            &registry,
            "scripted",
            REPORT,
            CtiTask::Attribution,
            &[],
            params(),
        )
        .unwrap();
        assert_eq!(out.retries, 1);
        assert_eq!(out.items.len(), 1);
        let prompts = backend.prompts();
        assert_eq!(prompts.len(), 2);
        assert!(prompts[1].contains(REPAIR_NOTE));
    }

    #[test]
    fn twice_invalid_output_is_an_extraction_error() {
        let (registry, _) = scripted(&["nope", "still nope"]);
        let err = extract_entities(
            &registry,
            "scripted",
            REPORT,
            CtiTask::Attribution,
            &[],
            params(),
        )
        .unwrap_err();
        assert!(matches!(err, InferError::Extraction { .. }));
    }

    #[test]
    fn unknown_category_counts_as_schema_invalid() {
        let (registry, _) = scripted(&[
            r#"{"items": [{"surface": "APT28", "category": "banana"}]}"#,
            r#"{"items": []}"#,
        ]);
        let out = extract_entities(
            &registry,
            "scripted",
            REPORT,
            CtiTask::Attribution,
            &[],
            params(),
        )
        .unwrap();
        assert_eq!(out.retries, 1);
        assert!(out.items.is_empty());
    }

    #[test]
    fn surfaces_missing_from_the_text_are_dropped_with_warnings() {
        let (registry, _) = scripted(&[
            r#"{"items": [{"surface": "APT28", "category": "threat actor"},
                           {"surface": "Sandworm", "category": "threat actor"}]}"#,
        ]);
        let out = extract_entities(
            &registry,
            "scripted",
            REPORT,
            CtiTask::Attribution,
            &[],
            params(),
        )
        .unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("Sandworm"));
    }

    fn entity(surface: &str, start: usize) -> Entity {
        Entity {
            surface: surface.to_string(),
            category: EntityCategory::Other,
            span: Span {
                start,
                end: start + surface.len(),
            },
        }
    }

    #[test]
    fn relations_pair_listed_entities_via_the_mock() {
        let registry = BackendRegistry::with_mocks(&["mock-a"]);
        let entities = vec![entity("APT28", 0), entity("C2 communication", 15)];
        let out = extract_relations(
            &registry,
            "mock-a",
            REPORT,
            &entities,
            bundled_demos(CtiTask::Attribution),
            params(),
        )
        .unwrap();
        assert_eq!(out.items.len(), 1);
        assert_eq!(out.items[0].subject, "APT28");
        assert_eq!(out.items[0].relation, "is associated with");
        assert_eq!(out.items[0].object, "C2 communication");
    }

    #[test]
    fn single_entity_yields_no_triples() {
        let registry = BackendRegistry::with_mocks(&["mock-a"]);
        let out = extract_relations(
            &registry,
            "mock-a",
            REPORT,
            &[entity("APT28", 0)],
            &[],
            params(),
        )
        .unwrap();
        assert!(out.items.is_empty());
    }

    #[test]
    fn triples_naming_unlisted_entities_are_dropped_with_a_warning() {
        let (registry, _) = scripted(&[
            r#"{"triples": [{"subject": "APT28", "relation": "uses", "object": "GhostRelay"}]}"#,
        ]);
        let out = extract_relations(
            &registry,
            "scripted",
            REPORT,
            &[entity("APT28", 0), entity("C2 communication", 15)],
            &[],
            params(),
        )
        .unwrap();
        assert!(out.items.is_empty());
        assert_eq!(out.warnings.len(), 1);
        assert!(out.warnings[0].contains("GhostRelay"));
    }

    #[test]
    fn empty_entity_batch_is_a_contract_error() {
        let registry = BackendRegistry::with_mocks(&["mock-a"]);
        let err =
            extract_relations(&registry, "mock-a", REPORT, &[], &[], params()).unwrap_err();
        assert!(matches!(err, InferError::NoEntities));
    }
}
