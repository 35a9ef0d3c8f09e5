//! Corpus generation: assemble a 1-shot prompt from a demo report and threat
//! metadata, draft with one backend, revise with a second, and aggregate the
//! results into a training corpus.
//!
//! Determinism contract: every per-record decision (demo choice, backend
//! pair, sampling params) is drawn from a generator seeded by
//! (master seed, cve_id), so a record's document does not depend on store
//! order or worker scheduling.

use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::ingest::store::{query, ScopeFilter, ThreatStore};
use crate::ingest::{CveId, ThreatRecord, YearMonth};
use crate::modelio::{
    sample_params, BackendRegistry, GenerationRequest, ModelIoError, SamplingParams,
};
use crate::util::{seeded_rng, token_count};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

pub const CORPUS_ARTIFACT: &str = "corpus";

pub const DEMO_PLACEHOLDER: &str = "{demo}";
pub const METADATA_PLACEHOLDER: &str = "{metadata}";
pub const DRAFT_PLACEHOLDER: &str = "{draft}";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenStage {
    Generation,
    Revision,
}

impl std::fmt::Display for GenStage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GenStage::Generation => "generation",
            GenStage::Revision => "revision",
        })
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("template error: {0}")]
    Template(String),
    #[error("demo library is empty")]
    EmptyDemoLibrary,
    #[error("backend registry is empty")]
    EmptyRegistry,
    #[error("{stage} failed for {cve_id}: {source}")]
    Stage {
        stage: GenStage,
        cve_id: CveId,
        #[source]
        source: ModelIoError,
    },
    #[error("demo asset {path}: {message}")]
    Asset { path: String, message: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    Generation,
    Revision,
}

/// A prompt template with placeholder slots. Construction validates that the
/// required placeholders are present; the generation template must place the
/// demo before the metadata so the assembled prompt keeps the
/// prompt ⊕ demo ⊕ metadata concatenation order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub kind: TemplateKind,
    pub body: String,
}

impl PromptTemplate {
    pub fn generation(body: &str) -> Result<PromptTemplate, CorpusError> {
        let demo_at = body.find(DEMO_PLACEHOLDER).ok_or_else(|| {
            CorpusError::Template(format!(
                "generation template is missing {DEMO_PLACEHOLDER}"
            ))
        })?;
        let metadata_at = body.find(METADATA_PLACEHOLDER).ok_or_else(|| {
            CorpusError::Template(format!(
                "generation template is missing {METADATA_PLACEHOLDER}"
            ))
        })?;
        if demo_at > metadata_at {
            return Err(CorpusError::Template(
                "generation template must place the demo before the metadata".to_string(),
            ));
        }
        Ok(PromptTemplate {
            kind: TemplateKind::Generation,
            body: body.to_string(),
        })
    }

    pub fn revision(body: &str) -> Result<PromptTemplate, CorpusError> {
        if !body.contains(DRAFT_PLACEHOLDER) {
            return Err(CorpusError::Template(format!(
                "revision template is missing {DRAFT_PLACEHOLDER}"
            )));
        }
        Ok(PromptTemplate {
            kind: TemplateKind::Revision,
            body: body.to_string(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplatePair {
    pub generation: PromptTemplate,
    pub revision: PromptTemplate,
}

/// The templates shipped with the crate.
pub fn default_templates() -> TemplatePair {
    TemplatePair {
        generation: PromptTemplate::generation(include_str!("../assets/prompts/generation.txt"))
            .expect("shipped generation template is valid"),
        revision: PromptTemplate::revision(include_str!("../assets/prompts/revision.txt"))
            .expect("shipped revision template is valid"),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DemoReport {
    pub id: String,
    /// Where the exemplar came from, e.g. "curated analyst report".
    pub label: String,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<DemoReport>", into = "Vec<DemoReport>")]
pub struct DemoLibrary {
    demos: Vec<DemoReport>,
}

impl DemoLibrary {
    pub fn new(demos: Vec<DemoReport>) -> Result<DemoLibrary, CorpusError> {
        if demos.is_empty() {
            return Err(CorpusError::EmptyDemoLibrary);
        }
        Ok(DemoLibrary { demos })
    }

    /// The exemplars shipped with the crate.
    pub fn bundled() -> DemoLibrary {
        serde_json::from_str(include_str!("../assets/demos/demos.json"))
            .expect("shipped demo library is valid")
    }

    pub fn from_file(path: &Path) -> Result<DemoLibrary, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::Asset {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Asset {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn demos(&self) -> &[DemoReport] {
        &self.demos
    }

    /// Always at least 1; construction rejects empty libraries.
    pub fn len(&self) -> usize {
        self.demos.len()
    }
}

impl TryFrom<Vec<DemoReport>> for DemoLibrary {
    type Error = CorpusError;

    fn try_from(demos: Vec<DemoReport>) -> Result<Self, Self::Error> {
        DemoLibrary::new(demos)
    }
}

impl From<DemoLibrary> for Vec<DemoReport> {
    fn from(library: DemoLibrary) -> Vec<DemoReport> {
        library.demos
    }
}

/// Everything needed to regenerate a document under mock backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub demo_id: String,
    pub generation_backend: String,
    pub revision_backend: String,
    pub generation_params: SamplingParams,
    pub revision_params: SamplingParams,
    pub master_seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    pub cve_id: CveId,
    pub published: YearMonth,
    pub token_count: usize,
    pub text: String,
    pub provenance: Provenance,
}

/// Renders record metadata as labeled lines; empty optional fields are
/// omitted entirely rather than rendered blank.
pub fn render_metadata(record: &ThreatRecord) -> String {
    let mut lines: Vec<String> = Vec::new();
    lines.push(format!("CVE Identifier: {}", record.cve_id));
    lines.push(format!("Published: {}", record.published));
    if !record.description.is_empty() {
        lines.push(format!("Description: {}", record.description));
    }
    if let Some(actor) = &record.threat_actor {
        lines.push(format!("Threat Actor: {actor}"));
    }
    if !record.ttps.is_empty() {
        let ttps: Vec<&str> = record.ttps.iter().map(|s| s.as_str()).collect();
        lines.push(format!("TTPs: {}", ttps.join(", ")));
    }
    if let Some(campaign) = &record.campaign {
        lines.push(format!("Campaign: {campaign}"));
    }
    if !record.affected_systems.is_empty() {
        let systems: Vec<&str> = record.affected_systems.iter().map(|s| s.as_str()).collect();
        lines.push(format!("Affected Systems: {}", systems.join(", ")));
    }
    if !record.attack_infra.is_empty() {
        let infra: Vec<&str> = record.attack_infra.iter().map(|s| s.as_str()).collect();
        lines.push(format!("Attack Infrastructure: {}", infra.join(", ")));
    }
    if let Some(impact) = &record.impact {
        lines.push(format!("Impact: {impact}"));
    }
    if !record.cwe_ids.is_empty() {
        let cwes: Vec<&str> = record.cwe_ids.iter().map(|s| s.as_str()).collect();
        lines.push(format!("CWE Identifiers: {}", cwes.join(", ")));
    }
    if let Some(cvss) = &record.cvss {
        lines.push(format!("CVSS: {cvss}"));
    }
    if let Some(epss) = &record.epss {
        let points: Vec<String> = epss
            .points()
            .iter()
            .map(|p| format!("{}: {:.2}%", p.date, p.score))
            .collect();
        lines.push(format!("EPSS History: {}", points.join(", ")));
    }
    if let Some(remediation) = &record.remediation {
        let mut parts: Vec<String> = Vec::new();
        if !remediation.tools.is_empty() {
            let tools: Vec<&str> = remediation.tools.iter().map(|s| s.as_str()).collect();
            parts.push(format!("tools: {}", tools.join(", ")));
        }
        if let Some(patch) = &remediation.patch {
            parts.push(format!("patch: {patch}"));
        }
        if let Some(methodology) = &remediation.methodology {
            parts.push(format!("methodology: {methodology}"));
        }
        if let Some(advisory) = &remediation.advisory {
            parts.push(format!("advisory: {advisory}"));
        }
        if !parts.is_empty() {
            lines.push(format!("Remediation: {}", parts.join("; ")));
        }
    }
    if !record.references.is_empty() {
        let refs: Vec<String> = record
            .references
            .iter()
            .map(|r| format!("{} ({})", r.url, r.source))
            .collect();
        lines.push(format!("References: {}", refs.join(", ")));
    }
    lines.join("\n")
}

/// Substitutes the demo, then the metadata rendering, into a generation
/// template.
pub fn build_generation_prompt(
    template: &PromptTemplate,
    demo: &str,
    metadata: &ThreatRecord,
) -> Result<String, CorpusError> {
    if template.kind != TemplateKind::Generation {
        return Err(CorpusError::Template(
            "expected a generation-kind template".to_string(),
        ));
    }
    Ok(template
        .body
        .replace(DEMO_PLACEHOLDER, demo)
        .replace(METADATA_PLACEHOLDER, &render_metadata(metadata)))
}

/// Substitutes the draft verbatim into a revision template.
pub fn build_revision_prompt(
    template: &PromptTemplate,
    draft: &str,
) -> Result<String, CorpusError> {
    if template.kind != TemplateKind::Revision {
        return Err(CorpusError::Template(
            "expected a revision-kind template".to_string(),
        ));
    }
    Ok(template.body.replace(DRAFT_PLACEHOLDER, draft))
}

fn pick_backends<R: Rng + ?Sized>(registry: &BackendRegistry, rng: &mut R) -> (String, String) {
    let ids = registry.ids();
    let first = rng.random_range(0..ids.len());
    let second = if ids.len() == 1 {
        first
    } else {
        // Uniform over the remaining backends, so the reviser always differs
        // when more than one backend is registered.
        let offset = rng.random_range(1..ids.len());
        (first + offset) % ids.len()
    };
    (ids[first].to_string(), ids[second].to_string())
}

/// Runs the draft-then-revise flow for one record. Decision order is fixed:
/// demo, backend pair, generation params, revision params, then the two
/// calls.
pub fn generate_report(
    metadata: &ThreatRecord,
    demos: &DemoLibrary,
    registry: &BackendRegistry,
    rng: &mut rand_chacha::ChaCha8Rng,
    templates: &TemplatePair,
    master_seed: u64,
) -> Result<CorpusDocument, CorpusError> {
    if registry.is_empty() {
        return Err(CorpusError::EmptyRegistry);
    }
    let demo = &demos.demos()[rng.random_range(0..demos.len())];
    let (gen_backend, rev_backend) = pick_backends(registry, rng);
    let gen_params = sample_params(rng);
    let rev_params = sample_params(rng);

    let gen_prompt = build_generation_prompt(&templates.generation, &demo.text, metadata)?;
    let draft = registry
        .generate(&gen_backend, &GenerationRequest::text(&gen_prompt, gen_params))
        .map_err(|e| CorpusError::Stage {
            stage: GenStage::Generation,
            cve_id: metadata.cve_id.clone(),
            source: e,
        })?;

    let rev_prompt = build_revision_prompt(&templates.revision, &draft.text)?;
    let revised = registry
        .generate(&rev_backend, &GenerationRequest::text(&rev_prompt, rev_params))
        .map_err(|e| CorpusError::Stage {
            stage: GenStage::Revision,
            cve_id: metadata.cve_id.clone(),
            source: e,
        })?;

    Ok(CorpusDocument {
        doc_id: format!("doc-{}", metadata.cve_id),
        cve_id: metadata.cve_id.clone(),
        published: metadata.published,
        token_count: token_count(&revised.text),
        text: revised.text,
        provenance: Provenance {
            demo_id: demo.id.clone(),
            generation_backend: gen_backend,
            revision_backend: rev_backend,
            generation_params: gen_params,
            revision_params: rev_params,
            master_seed,
        },
    })
}

/// Re-runs both calls of a finished document from its provenance alone.
/// Under mock backends the output text is byte-identical.
pub fn regenerate(
    document: &CorpusDocument,
    metadata: &ThreatRecord,
    demos: &DemoLibrary,
    registry: &BackendRegistry,
    templates: &TemplatePair,
) -> Result<String, CorpusError> {
    let demo = demos
        .demos()
        .iter()
        .find(|d| d.id == document.provenance.demo_id)
        .ok_or_else(|| CorpusError::Template(format!(
            "provenance names unknown demo {:?}",
            document.provenance.demo_id
        )))?;
    let gen_prompt = build_generation_prompt(&templates.generation, &demo.text, metadata)?;
    let draft = registry
        .generate(
            &document.provenance.generation_backend,
            &GenerationRequest::text(&gen_prompt, document.provenance.generation_params),
        )
        .map_err(|e| CorpusError::Stage {
            stage: GenStage::Generation,
            cve_id: metadata.cve_id.clone(),
            source: e,
        })?;
    let rev_prompt = build_revision_prompt(&templates.revision, &draft.text)?;
    let revised = registry
        .generate(
            &document.provenance.revision_backend,
            &GenerationRequest::text(&rev_prompt, document.provenance.revision_params),
        )
        .map_err(|e| CorpusError::Stage {
            stage: GenStage::Revision,
            cve_id: metadata.cve_id.clone(),
            source: e,
        })?;
    Ok(revised.text)
}

#[derive(Clone, Debug)]
pub struct CorpusJobConfig {
    pub master_seed: u64,
    pub workers: usize,
    /// Optional scope; an empty filter selects the whole store.
    pub filter: ScopeFilter,
    pub templates: TemplatePair,
}

impl CorpusJobConfig {
    pub fn new(master_seed: u64) -> CorpusJobConfig {
        CorpusJobConfig {
            master_seed,
            workers: 4,
            filter: ScopeFilter::default(),
            templates: default_templates(),
        }
    }
}

#[derive(Debug, Default)]
pub struct CorpusBuildReport {
    pub documents: Vec<CorpusDocument>,
    /// (cve_id, reason) for every record that failed, in store order.
    pub skipped: Vec<(CveId, String)>,
}

/// Builds one document per selected record on a bounded worker pool.
/// Failures are logged and skipped; output keeps store order regardless of
/// scheduling.
pub fn build_corpus(
    store: &ThreatStore,
    demos: &DemoLibrary,
    registry: &BackendRegistry,
    config: &CorpusJobConfig,
) -> CorpusBuildReport {
    let records: Vec<&ThreatRecord> = query(store, &config.filter);
    let slots: Mutex<Vec<Option<Result<CorpusDocument, CorpusError>>>> =
        Mutex::new((0..records.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = config.workers.max(1).min(records.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= records.len() {
                    break;
                }
                let record = records[idx];
                let mut rng = seeded_rng(config.master_seed, record.cve_id.as_str());
                let result = generate_report(
                    record,
                    demos,
                    registry,
                    &mut rng,
                    &config.templates,
                    config.master_seed,
                );
                slots.lock().unwrap()[idx] = Some(result);
            });
        }
    });

    let mut report = CorpusBuildReport::default();
    for (idx, slot) in slots.into_inner().unwrap().into_iter().enumerate() {
        match slot.expect("every slot filled by the pool") {
            Ok(document) => report.documents.push(document),
            Err(error) => {
                let cve_id = records[idx].cve_id.clone();
                log::warn!("skipping {cve_id}: {error}");
                report.skipped.push((cve_id, error.to_string()));
            }
        }
    }
    report
}

pub fn write_corpus(
    path: &Path,
    documents: &[CorpusDocument],
    config_digest: &str,
    seed: u64,
) -> Result<(), ArtifactError> {
    let header = ArtifactHeader::new(CORPUS_ARTIFACT, config_digest, seed);
    write_artifact(path, &header, documents)
}

pub fn read_corpus(path: &Path) -> Result<(ArtifactHeader, Vec<CorpusDocument>), ArtifactError> {
    read_artifact(path, CORPUS_ARTIFACT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::store::store_from_records;
    use crate::ingest::{insert_label, ThreatRecord};
    use crate::modelio::testing::FailNTimesBackend;
    use crate::modelio::mock::MockBackend;
    use std::sync::Arc;

    fn record(cve: &str) -> ThreatRecord {
        let mut r = ThreatRecord::new(
            CveId::parse(cve).unwrap(),
            YearMonth::parse("2024-07").unwrap(),
        );
        r.description = "cleartext storage of sensitive information".to_string();
        insert_label(&mut r.source_ids, "nvd");
        r
    }

    #[test]
    fn generation_prompt_keeps_demo_before_metadata() {
        let template = PromptTemplate::generation("G|{demo}|{metadata}").unwrap();
        let prompt = build_generation_prompt(&template, "S", &record("CVE-2024-40594")).unwrap();
        assert!(prompt.starts_with("G|S|"));
        assert!(prompt.contains("CVE Identifier: CVE-2024-40594"));
    }

    #[test]
    fn template_validation_rejects_bad_shapes() {
        assert!(PromptTemplate::generation("{metadata} then {demo}").is_err());
        assert!(PromptTemplate::generation("only {demo}").is_err());
        assert!(PromptTemplate::revision("no placeholder").is_err());
        let revision = PromptTemplate::revision("R|{draft}").unwrap();
        assert!(build_generation_prompt(&revision, "S", &record("CVE-2024-40594")).is_err());
    }

    #[test]
    fn metadata_rendering_omits_empty_sections() {
        let rendered = render_metadata(&record("CVE-2024-40594"));
        assert!(rendered.contains("Description:"));
        assert!(!rendered.contains("Threat Actor:"));
        assert!(!rendered.contains("TTPs:"));
        assert!(!rendered.contains("CVSS:"));
    }

    #[test]
    fn fixed_seed_reproduces_the_document() {
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let demos = DemoLibrary::bundled();
        let templates = default_templates();
        let run = |seed| {
            let mut rng = seeded_rng(seed, "CVE-2024-40594");
            generate_report(&record("CVE-2024-40594"), &demos, &registry, &mut rng, &templates, seed)
                .unwrap()
        };
        let first = run(42);
        let second = run(42);
        assert_eq!(first, second);
        assert_eq!(first.doc_id, "doc-CVE-2024-40594");
        assert_eq!(first.token_count, token_count(&first.text));
    }

    #[test]
    fn singleton_registry_reuses_the_backend() {
        let registry = BackendRegistry::with_mocks(&["mock-only"]);
        let demos = DemoLibrary::bundled();
        let templates = default_templates();
        let mut rng = seeded_rng(1, "single");
        let doc = generate_report(&record("CVE-2024-40594"), &demos, &registry, &mut rng, &templates, 1)
            .unwrap();
        assert_eq!(doc.provenance.generation_backend, "mock-only");
        assert_eq!(doc.provenance.revision_backend, "mock-only");
    }

    #[test]
    fn reviser_always_differs_with_multiple_backends() {
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b", "mock-c"]);
        let demos = DemoLibrary::bundled();
        let templates = default_templates();
        for seed in 0..1_000u64 {
            let mut rng = seeded_rng(seed, "distinctness");
            let doc = generate_report(
                &record("CVE-2024-40594"),
                &demos,
                &registry,
                &mut rng,
                &templates,
                seed,
            )
            .unwrap();
            assert_ne!(
                doc.provenance.generation_backend, doc.provenance.revision_backend,
                "seed {seed} reused one backend for both calls"
            );
        }
    }

    #[test]
    fn provenance_regenerates_the_same_text() {
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let demos = DemoLibrary::bundled();
        let templates = default_templates();
        let metadata = record("CVE-2024-40594");
        let mut rng = seeded_rng(7, metadata.cve_id.as_str());
        let doc =
            generate_report(&metadata, &demos, &registry, &mut rng, &templates, 7).unwrap();
        let replayed = regenerate(&doc, &metadata, &demos, &registry, &templates).unwrap();
        assert_eq!(replayed, doc.text);
    }

    #[test]
    fn revision_prompt_embeds_the_draft_verbatim() {
        use crate::modelio::testing::ScriptedBackend;
        let scripted_a = Arc::new(ScriptedBackend::new("s-a", &["RESPONSE-FROM-A"]));
        let scripted_b = Arc::new(ScriptedBackend::new("s-b", &["RESPONSE-FROM-B"]));
        let mut registry = BackendRegistry::new();
        registry.register(scripted_a.clone()).unwrap();
        registry.register(scripted_b.clone()).unwrap();

        let demos = DemoLibrary::bundled();
        let templates = default_templates();
        let mut rng = seeded_rng(3, "draft-check");
        let doc = generate_report(&record("CVE-2024-40594"), &demos, &registry, &mut rng, &templates, 3)
            .unwrap();

        let (draft, reviser_prompts) =
            if doc.provenance.generation_backend == "s-a" {
                ("RESPONSE-FROM-A", scripted_b.prompts())
            } else {
                ("RESPONSE-FROM-B", scripted_a.prompts())
            };
        assert_eq!(reviser_prompts.len(), 1);
        assert!(reviser_prompts[0].contains(draft));
        assert_eq!(doc.text, format!("RESPONSE-FROM-{}", if draft.ends_with('A') { "B" } else { "A" }));
    }

    #[test]
    fn corpus_build_is_store_order_stable_and_skips_failures() {
        let store = store_from_records(vec![
            record("CVE-2024-0001"),
            record("CVE-2024-0002"),
            record("CVE-2024-0003"),
        ]);
        let demos = DemoLibrary::bundled();
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let config = CorpusJobConfig::new(42);

        let report = build_corpus(&store, &demos, &registry, &config);
        assert_eq!(report.documents.len(), 3);
        assert!(report.skipped.is_empty());
        let ids: Vec<&str> = report.documents.iter().map(|d| d.doc_id.as_str()).collect();
        assert_eq!(ids, ["doc-CVE-2024-0001", "doc-CVE-2024-0002", "doc-CVE-2024-0003"]);

        // A failing registry skips every record but stays non-fatal.
        let mut failing = BackendRegistry::new();
        failing
            .register(Arc::new(FailNTimesBackend::new(
                Arc::new(MockBackend::new("mock-a")),
                u32::MAX,
            )))
            .unwrap();
        let report = build_corpus(&store, &demos, &failing, &config);
        assert!(report.documents.is_empty());
        assert_eq!(report.skipped.len(), 3);
        assert!(report.skipped[0].1.contains("generation"));
    }

    #[test]
    fn per_record_seeding_ignores_store_order() {
        let demos = DemoLibrary::bundled();
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let config = CorpusJobConfig::new(42);

        let forward = store_from_records(vec![record("CVE-2024-0001"), record("CVE-2024-0002")]);
        let single = store_from_records(vec![record("CVE-2024-0002")]);
        let from_pair = build_corpus(&forward, &demos, &registry, &config);
        let from_single = build_corpus(&single, &demos, &registry, &config);
        let doc_pair = from_pair
            .documents
            .iter()
            .find(|d| d.cve_id.as_str() == "CVE-2024-0002")
            .unwrap();
        assert_eq!(doc_pair, &from_single.documents[0]);
    }

    #[test]
    fn master_seed_changes_the_draws() {
        let demos = DemoLibrary::bundled();
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let metadata = record("CVE-2024-40594");
        let templates = default_templates();
        let mut differing = 0;
        for pair in 0..100u64 {
            let seed_a = pair * 2;
            let seed_b = pair * 2 + 1;
            let mut rng_a = seeded_rng(seed_a, metadata.cve_id.as_str());
            let mut rng_b = seeded_rng(seed_b, metadata.cve_id.as_str());
            let doc_a =
                generate_report(&metadata, &demos, &registry, &mut rng_a, &templates, seed_a)
                    .unwrap();
            let doc_b =
                generate_report(&metadata, &demos, &registry, &mut rng_b, &templates, seed_b)
                    .unwrap();
            if doc_a.provenance.generation_params != doc_b.provenance.generation_params {
                differing += 1;
            }
        }
        assert!(differing >= 99, "only {differing}/100 seed pairs diverged");
    }

    #[test]
    fn corpus_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let store = store_from_records(vec![record("CVE-2024-0001")]);
        let demos = DemoLibrary::bundled();
        let registry = BackendRegistry::with_mocks(&["mock-a", "mock-b"]);
        let report = build_corpus(&store, &demos, &registry, &CorpusJobConfig::new(42));

        write_corpus(&path, &report.documents, "digest", 42).unwrap();
        let (header, docs) = read_corpus(&path).unwrap();
        assert_eq!(header.artifact, CORPUS_ARTIFACT);
        assert_eq!(docs, report.documents);
    }
}
