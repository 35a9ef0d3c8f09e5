//! Acceptance checks for the whole toolkit, one function per criterion.
//! Runs without the default test harness so every criterion prints its
//! own `[ACCEPT] <name>: PASS` line on the way through `cargo test`.
//! Each check verifies library behavior against an independent oracle:
//! closed-form counts for pacing, finite differences for gradients,
//! brute-force enumeration for set metrics, exact string reconstruction
//! for chain contexts, stage timings for scheduling, call counters for
//! caching, byte comparison for determinism, and a recording backend for
//! corpus provenance.

use chrono::NaiveDate;
use ctikit::cascade::{
    build_chain, serialize_chain, validate_chain, CascadeChain, QuestionLibrary, TaskGraph,
};
use ctikit::corpusgen::{build_corpus, CorpusDocument, CorpusJobConfig, Provenance};
use ctikit::curriculum::{emit_schedule, order_corpus, OrderedCorpus, PacingSchedule};
use ctikit::evalharness::{
    epss_rmse, hit_at_k, set_metrics, write_correlation_rows, write_epss_rows,
    write_set_predictions, CorrelationRow, EpssRow, RankedPrediction, SetPrediction,
    SetPredictionRecord,
};
use ctikit::infer::{
    retrieve, CacheKey, CachePolicy, FetchOrderRanker, KeywordTopicProvider, MockRetriever,
    RetrievalCache, SessionEngine, SessionTranscript, StageTiming, DEFAULT_INTENT_THRESHOLD,
};
use ctikit::ingest::cvss::CvssAssessment;
use ctikit::ingest::store::{merge_store, SourcePrecedence, ThreatStore};
use ctikit::ingest::{
    insert_label, insert_product, CveId, EpssPoint, EpssSeries, Reference, RemediationInfo,
    ThreatRecord, YearMonth,
};
use ctikit::modelio::mock::MockBackend;
use ctikit::modelio::testing::JitterBackend;
use ctikit::modelio::{
    BackendRegistry, GenerationRequest, ModelIoError, SamplingParams, TextBackend,
};
use ctikit::objective::{
    cascade_loss, clm_grad, clm_loss, ObjectiveConfig, TokenSequence, ToyModelParams,
    WhitespaceVocab,
};
use ctikit::taxonomy::{AnalyticalTarget, CtiTask, NlpModule};
use ctikit::util::seeded_rng;
use rand::Rng;
use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

fn main() {
    let checks: &[(&str, fn())] = &[
        ("pacing fidelity", pacing_fidelity),
        ("objective correctness", objective_correctness),
        ("metric oracles", metric_oracles),
        ("cascade dataset validity", cascade_dataset_validity),
        ("inference contract", inference_contract),
        ("cache behavior", cache_behavior),
        ("end-to-end determinism", end_to_end_determinism),
        ("corpus generation fidelity", corpus_generation_fidelity),
    ];
    let mut failures = 0usize;
    for (name, check) in checks {
        match catch_unwind(AssertUnwindSafe(check)) {
            Ok(()) => println!("[ACCEPT] {name}: PASS"),
            Err(panic) => {
                failures += 1;
                let message = panic
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| panic.downcast_ref::<&str>().copied())
                    .unwrap_or("panic without message");
                println!("[ACCEPT] {name}: FAIL ({message})");
            }
        }
    }
    if failures > 0 {
        std::process::exit(101);
    }
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

fn params() -> SamplingParams {
    SamplingParams::new(0.5, 0.9, 1).expect("valid params")
}

// ---------------------------------------------------------------------
// Pacing fidelity: emitted manifest sizes match the closed form
//   t <= T1:        floor(n * t / T1)
//   T1 < t <= T2:   n
//   t > T2:         2n - clamp(floor(beta * n * (t - T2) / (T - T2)), 0, n)
// for every preset and epoch, on corpora of 90, 100, and 240 documents.
// ---------------------------------------------------------------------

fn synthetic_corpus(n: usize) -> OrderedCorpus {
    let docs: Vec<CorpusDocument> = (0..n)
        .map(|i| CorpusDocument {
            doc_id: format!("doc-{i:04}"),
            cve_id: CveId::parse(&format!("CVE-2024-{:04}", 1000 + i)).expect("valid id"),
            published: YearMonth::new(2020 + (i % 5) as i32, 1 + (i % 12) as u32)
                .expect("valid month"),
            token_count: 40 + (i * 7) % 300,
            text: format!("synthetic report {i}"),
            provenance: Provenance {
                demo_id: "demo-0".to_string(),
                generation_backend: "mock-a".to_string(),
                revision_backend: "mock-b".to_string(),
                generation_params: params(),
                revision_params: params(),
                master_seed: 0,
            },
        })
        .collect();
    order_corpus(docs)
}

fn expected_epoch_len(n: usize, t: u32, sched: &PacingSchedule) -> usize {
    if t <= sched.linear_end {
        n * t as usize / sched.linear_end as usize
    } else if t <= sched.plateau_end {
        n
    } else {
        let raw = (sched.beta * n as f64 * (t - sched.plateau_end) as f64
            / (sched.total - sched.plateau_end) as f64)
            .floor() as i64;
        let cut = raw.clamp(0, n as i64) as usize;
        2 * n - cut
    }
}

fn pacing_fidelity() {
    let start = Instant::now();
    for preset in PacingSchedule::PRESET_NAMES {
        let sched = PacingSchedule::preset(preset).expect("known preset");
        for n in [90usize, 100, 240] {
            let corpus = synthetic_corpus(n);
            let manifests = emit_schedule(&corpus, &sched).expect("schedule emits");
            assert_eq!(manifests.len(), sched.total as usize, "{preset}/{n}: epoch count");
            for manifest in &manifests {
                assert_eq!(
                    manifest.entries.len(),
                    expected_epoch_len(n, manifest.epoch, &sched),
                    "{preset}/{n}: epoch {} size",
                    manifest.epoch
                );
            }
        }
    }

    let sched = PacingSchedule::preset("8B").expect("known preset");
    let corpus = synthetic_corpus(100);
    let sizes: Vec<usize> = emit_schedule(&corpus, &sched)
        .expect("schedule emits")
        .iter()
        .map(|m| m.entries.len())
        .collect();
    assert_eq!(sizes, vec![20, 40, 60, 80, 100, 180, 160, 140, 120, 100]);

    assert!(
        start.elapsed() < Duration::from_secs(1),
        "pacing check took {:?}",
        start.elapsed()
    );
}

// ---------------------------------------------------------------------
// Objective correctness: analytic gradients against central finite
// differences on 100 random instances; exact reductions at lambda = 0 and
// theta = theta0; chain loss additive over single-step slices.
// ---------------------------------------------------------------------

fn numeric_loss(theta: &ToyModelParams, corpus: &[TokenSequence], cfg: &ObjectiveConfig) -> f64 {
    clm_loss(theta, corpus, cfg).expect("loss evaluates")
}

fn fd_max_relative_error(
    theta: &ToyModelParams,
    corpus: &[TokenSequence],
    cfg: &ObjectiveConfig,
) -> f64 {
    let grad = clm_grad(theta, corpus, cfg).expect("gradient evaluates");
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, bump: &dyn Fn(&mut ToyModelParams, f64)| {
        let mut plus = theta.clone();
        bump(&mut plus, eps);
        let mut minus = theta.clone();
        bump(&mut minus, -eps);
        let numeric =
            (numeric_loss(&plus, corpus, cfg) - numeric_loss(&minus, corpus, cfg)) / (2.0 * eps);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
        worst = worst.max(rel);
    };
    let vocab = theta.vocab_size();
    for j in 0..vocab {
        check(grad.start[j], &|p, e| p.start[j] += e);
        for i in 0..vocab {
            check(grad.rows[i][j], &|p, e| p.rows[i][j] += e);
        }
    }
    worst
}

fn objective_correctness() {
    let mut rng = seeded_rng(4242, "acceptance:objective");
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let vocab = rng.random_range(2..=5);
        let theta = ToyModelParams::random(vocab, &mut rng, 1.5);
        let theta0 = ToyModelParams::random(vocab, &mut rng, 1.5);
        let lambda = rng.random::<f64>() * 0.8;
        let cfg = ObjectiveConfig::new(lambda, theta0.clone()).expect("valid config");
        let corpus: Vec<TokenSequence> = (0..rng.random_range(2..=5))
            .map(|_| {
                let len = rng.random_range(1..=8);
                TokenSequence::new((0..len).map(|_| rng.random_range(0..vocab)).collect())
                    .expect("valid tokens")
            })
            .collect();
        worst = worst.max(fd_max_relative_error(&theta, &corpus, &cfg));

        // lambda = 0 removes the anchor entirely: any theta0 gives the
        // same loss and gradient, bit for bit.
        let zero_a = ObjectiveConfig::new(0.0, theta0.clone()).expect("valid config");
        let zero_b = ObjectiveConfig::new(0.0, ToyModelParams::zeros(vocab)).expect("valid config");
        assert_eq!(
            numeric_loss(&theta, &corpus, &zero_a).to_bits(),
            numeric_loss(&theta, &corpus, &zero_b).to_bits(),
        );
        assert_eq!(
            clm_grad(&theta, &corpus, &zero_a).expect("gradient evaluates"),
            clm_grad(&theta, &corpus, &zero_b).expect("gradient evaluates"),
        );

        // theta = theta0 zeroes the penalty term exactly, so any lambda
        // gives the lambda = 0 loss and gradient.
        let anchored = ObjectiveConfig::new(lambda, theta.clone()).expect("valid config");
        let unanchored = ObjectiveConfig::new(0.0, theta.clone()).expect("valid config");
        assert_eq!(
            numeric_loss(&theta, &corpus, &anchored).to_bits(),
            numeric_loss(&theta, &corpus, &unanchored).to_bits(),
        );
        assert_eq!(
            clm_grad(&theta, &corpus, &anchored).expect("gradient evaluates"),
            clm_grad(&theta, &corpus, &unanchored).expect("gradient evaluates"),
        );
    }
    assert!(worst < 1e-6, "max gradient relative error {worst:.3e}");

    // Chain loss is a plain sum over steps, so evaluating the whole list
    // must equal the sum over its single-step slices.
    let graph = TaskGraph::standard();
    let library = QuestionLibrary::bundled();
    for i in 0..20 {
        let record = random_record(&mut rng, 9000 + i);
        let chain = build_chain(&record, &graph, &library).expect("chain builds");
        let contexts = serialize_chain(&chain);
        if contexts.is_empty() {
            continue;
        }
        let mut texts: Vec<&str> = Vec::new();
        for step in &contexts {
            texts.push(&step.context);
            texts.push(&step.answer);
        }
        let vocab = WhitespaceVocab::fit(texts.iter().copied());
        let theta = ToyModelParams::random(vocab.vocab_size(), &mut rng, 1.0);
        let whole = cascade_loss(&theta, &contexts, &vocab).expect("chain loss evaluates");
        let mut sum = 0.0;
        for k in 0..contexts.len() {
            sum += cascade_loss(&theta, &contexts[k..k + 1], &vocab).expect("step loss evaluates");
        }
        assert!(
            (whole - sum).abs() < 1e-12,
            "chain loss additivity gap {:.3e}",
            (whole - sum).abs()
        );
    }
}

// ---------------------------------------------------------------------
// Metric oracles: set metrics against brute-force enumeration, the
// IoU = F1 / (2 - F1) identity, hit@k monotonicity, and the two
// hand-computed EPSS RMSE cases.
// ---------------------------------------------------------------------

fn metric_oracles() {
    let mut rng = seeded_rng(777, "acceptance:metrics");
    let universe: Vec<String> = (0..12).map(|i| format!("item{i:02}")).collect();

    for _ in 0..1000 {
        let predicted: Vec<String> = universe
            .iter()
            .filter(|_| rng.random_bool(0.4))
            .cloned()
            .collect();
        let reference: Vec<String> = universe
            .iter()
            .filter(|_| rng.random_bool(0.4))
            .cloned()
            .collect();
        let metrics = set_metrics(&SetPrediction::new(predicted.iter(), reference.iter()));

        // Enumeration oracle: membership decided by scanning the raw
        // lists, ratios computed from the counted cardinalities.
        let hits = universe
            .iter()
            .filter(|u| predicted.contains(u) && reference.contains(u))
            .count() as f64;
        let union = universe
            .iter()
            .filter(|u| predicted.contains(u) || reference.contains(u))
            .count() as f64;
        let (precision, recall, f1, iou) = match (predicted.is_empty(), reference.is_empty()) {
            (true, true) => (1.0, 1.0, 1.0, 1.0),
            (true, false) | (false, true) => (0.0, 0.0, 0.0, 0.0),
            (false, false) => {
                let p = hits / predicted.len() as f64;
                let r = hits / reference.len() as f64;
                let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
                (p, r, f1, hits / union)
            }
        };
        assert_eq!(metrics.precision.to_bits(), precision.to_bits());
        assert_eq!(metrics.recall.to_bits(), recall.to_bits());
        assert_eq!(metrics.f1.to_bits(), f1.to_bits());
        assert_eq!(metrics.iou.to_bits(), iou.to_bits());
        assert!(
            (metrics.iou - metrics.f1 / (2.0 - metrics.f1)).abs() < 1e-12,
            "IoU/F1 identity violated: iou={} f1={}",
            metrics.iou,
            metrics.f1
        );
    }

    // hit@k can only pick up more of the list as k grows.
    for _ in 0..1000 {
        let len = rng.random_range(1..=10usize);
        let ranked: Vec<String> = (0..len).map(|i| format!("cand{i:02}")).collect();
        let truth: Vec<String> = (0..14)
            .map(|i| format!("cand{i:02}"))
            .filter(|_| rng.random_bool(0.2))
            .collect();
        let mut prev = 0u8;
        for k in 1..=len {
            let hit = hit_at_k(&RankedPrediction::new(ranked.iter(), truth.iter(), k))
                .expect("valid cutoff");
            assert!(hit >= prev, "hit@{k} dropped below hit@{}", k - 1);
            prev = hit;
        }
    }

    // Hand case: errors 0 and 6 over two dates give sqrt(18).
    let pred = EpssSeries::new(vec![
        EpssPoint { date: ymd(2025, 6, 1), score: 10.0 },
        EpssPoint { date: ymd(2025, 6, 8), score: 20.0 },
    ])
    .expect("valid series");
    let truth = EpssSeries::new(vec![
        EpssPoint { date: ymd(2025, 6, 1), score: 10.0 },
        EpssPoint { date: ymd(2025, 6, 8), score: 26.0 },
    ])
    .expect("valid series");
    let rmse = epss_rmse(&pred, &truth, &[ymd(2025, 6, 1), ymd(2025, 6, 8)])
        .expect("rmse evaluates");
    assert!(
        (rmse - 18f64.sqrt()).abs() < 1e-9,
        "expected sqrt(18), got {rmse}"
    );

    // Nearest-date rule: a query 6 days after one observation and 9 days
    // before the next must match the earlier one.
    let truth = EpssSeries::new(vec![
        EpssPoint { date: ymd(2025, 9, 25), score: 40.0 },
        EpssPoint { date: ymd(2025, 10, 10), score: 80.0 },
    ])
    .expect("valid series");
    let pred = EpssSeries::new(vec![EpssPoint { date: ymd(2025, 10, 1), score: 40.0 }])
        .expect("valid series");
    let rmse = epss_rmse(&pred, &truth, &[ymd(2025, 10, 1)]).expect("rmse evaluates");
    assert!(rmse < 1e-12, "query matched the later observation: rmse {rmse}");
}

// ---------------------------------------------------------------------
// Cascade dataset validity: 500 random records with random evidence
// subsets all build chains that validate cleanly, and every serialized
// step context is exactly the report, the prior answers, and the current
// question.
// ---------------------------------------------------------------------

fn random_record<R: Rng>(rng: &mut R, i: usize) -> ThreatRecord {
    let cve_id = CveId::parse(&format!("CVE-{}-{:04}", 2020 + i % 7, 1000 + i)).expect("valid id");
    let published =
        YearMonth::new(2021 + (i % 4) as i32, 1 + (i % 12) as u32).expect("valid month");
    let mut record = ThreatRecord::new(cve_id, published);
    record.description = format!(
        "Report {i}: crafted requests reach the archive handler in build {} and execute staged payloads.",
        rng.random_range(100..999)
    );
    if rng.random_bool(0.4) {
        record
            .description
            .push_str(&format!(" Vendor triage links this to CVE-2023-{:04}.", rng.random_range(1000..9999)));
    }
    // The impact field stays populated so every chain has at least one step.
    record.impact = Some("remote code execution on the archive tier".to_string());
    if rng.random_bool(0.5) {
        record.threat_actor = Some(format!("actor-{}", rng.random_range(0..50)));
    }
    if rng.random_bool(0.5) {
        insert_label(&mut record.ttps, &format!("T{:04}", 1000 + rng.random_range(0..600)));
    }
    if rng.random_bool(0.5) {
        record.campaign = Some(format!("campaign-{}", rng.random_range(0..30)));
    }
    if rng.random_bool(0.5) {
        insert_product(&mut record.affected_systems, "Widget Server 4.2");
    }
    if rng.random_bool(0.5) {
        insert_label(
            &mut record.attack_infra,
            &format!("relay-{}.example.net", rng.random_range(0..40)),
        );
    }
    if rng.random_bool(0.5) {
        record.insert_cwe(&format!("{}", rng.random_range(20..790)));
    }
    if rng.random_bool(0.5) {
        record.cvss = Some(CvssAssessment::default());
    }
    if rng.random_bool(0.5) {
        let base = ymd(2025, 3, 1);
        let points = (0..rng.random_range(1..=3u64))
            .map(|k| EpssPoint {
                date: base + chrono::Days::new(7 * k),
                score: rng.random::<f64>() * 80.0,
            })
            .collect();
        record.epss = Some(EpssSeries::new(points).expect("valid series"));
    }
    if rng.random_bool(0.5) {
        let mut remediation = RemediationInfo::default();
        remediation.tools.insert(format!("scanner-{}", rng.random_range(0..9)));
        remediation.patch = rng.random_bool(0.5).then(|| "apply vendor hotfix 12".to_string());
        remediation.methodology =
            rng.random_bool(0.5).then(|| "isolate, patch, then replay traffic".to_string());
        remediation.advisory = rng.random_bool(0.5).then(|| "vendor bulletin 2025-117".to_string());
        record.remediation = Some(remediation);
    }
    if rng.random_bool(0.5) {
        record.references.insert(Reference::new(
            &format!("https://example.org/advisories/CVE-2022-{:04}", rng.random_range(1000..9999)),
            "third-party",
        ));
    }
    record
}

fn assert_exact_contexts(chain: &CascadeChain) {
    let contexts = serialize_chain(chain);
    assert_eq!(contexts.len(), chain.steps.len());
    for (i, step) in contexts.iter().enumerate() {
        let mut parts: Vec<&str> = vec![chain.e0.as_str()];
        for prior in &chain.steps[..i] {
            parts.push(&prior.answer);
        }
        parts.push(&chain.steps[i].question);
        assert_eq!(
            step.context,
            parts.join(&chain.joiner),
            "step {} carries extra or missing conditioning text",
            step.index
        );
        assert_eq!(step.answer, chain.steps[i].answer);
        assert!(step.context.contains(&chain.e0));
        assert!(step.context.contains(&chain.steps[i].question));
        for prior in &chain.steps[..i] {
            assert!(step.context.contains(&prior.answer));
        }
    }
}

fn cascade_dataset_validity() {
    let graph = TaskGraph::standard();
    let library = QuestionLibrary::bundled();
    let mut rng = seeded_rng(31, "acceptance:cascade");
    for i in 0..500 {
        let record = random_record(&mut rng, i);
        let chain = build_chain(&record, &graph, &library).expect("chain builds");
        assert!(!chain.steps.is_empty(), "record {i} produced an empty chain");
        let report = validate_chain(&chain, &graph);
        assert!(
            report.is_empty(),
            "record {i} chain violations: {:?}",
            report.findings
        );
        assert_exact_contexts(&chain);
    }
}

// ---------------------------------------------------------------------
// Inference contract: across 1000 jittered mock runs of a remediation
// question, the final task's reasoning never starts before every
// prerequisite task finishes reasoning and summarizing, at least two
// distinct first-phase completion orders occur, and each involved task
// runs exactly the module set the task graph assigns it.
// ---------------------------------------------------------------------

fn stage_timing(transcript: &SessionTranscript, task: CtiTask, module: NlpModule) -> StageTiming {
    *transcript
        .timings
        .iter()
        .find(|t| t.task == task && t.module == module)
        .unwrap_or_else(|| panic!("missing timing for {}/{}", task.name(), module))
}

fn inference_contract() {
    let graph = TaskGraph::standard();
    let e0 = "Initial evidence: the relay.badcdn.net loader dropped a archive-handler exploit \
              attributed to actor-11 during the spring wave.";
    let question = "What remediation steps should we take to patch and mitigate this vulnerability?";
    let runs = 1000usize;
    let threads = 8usize;
    let interleavings: Mutex<BTreeSet<String>> = Mutex::new(BTreeSet::new());

    std::thread::scope(|scope| {
        for worker in 0..threads {
            let graph = &graph;
            let interleavings = &interleavings;
            scope.spawn(move || {
                for run in (worker..runs).step_by(threads) {
                    let mut registry = BackendRegistry::new();
                    registry
                        .register(Arc::new(JitterBackend::new(
                            Arc::new(MockBackend::new("mock-a")),
                            run as u64,
                            Duration::from_micros(300),
                        )))
                        .expect("fresh registry");
                    let retriever = MockRetriever::new();
                    let cache = RetrievalCache::new(CachePolicy::default());
                    let engine = SessionEngine {
                        graph,
                        registry: &registry,
                        backend_id: "mock-a",
                        topic_provider: &KeywordTopicProvider,
                        retriever: &retriever,
                        ranker: &FetchOrderRanker,
                        cache: &cache,
                        master_seed: run as u64,
                        intent_threshold: DEFAULT_INTENT_THRESHOLD,
                        bypass_cache: false,
                    };
                    let transcript = engine.run_session(e0, question).expect("session succeeds");
                    assert_eq!(transcript.plan.task, CtiTask::Remediation);

                    let mut by_task: BTreeMap<CtiTask, BTreeSet<NlpModule>> = BTreeMap::new();
                    for record in &transcript.stages {
                        by_task.entry(record.task).or_default().insert(record.module);
                    }
                    assert_eq!(by_task.len(), CtiTask::ALL.len(), "run {run}: task coverage");
                    for task in CtiTask::ALL {
                        assert_eq!(
                            &by_task[&task],
                            graph.modules_of(task),
                            "run {run}: module set for {}",
                            task.name()
                        );
                    }

                    let final_rea =
                        stage_timing(&transcript, CtiTask::Remediation, NlpModule::Rea);
                    for dep in graph.deps_of(CtiTask::Remediation) {
                        for module in [NlpModule::Rea, NlpModule::Sum] {
                            let upstream = stage_timing(&transcript, *dep, module);
                            assert!(
                                final_rea.started_us >= upstream.finished_us,
                                "run {run}: Remediation/REA started at {} before {}/{} \
                                 finished at {}",
                                final_rea.started_us,
                                dep.name(),
                                module,
                                upstream.finished_us
                            );
                        }
                    }

                    let mut phase_a: Vec<&StageTiming> = transcript
                        .timings
                        .iter()
                        .filter(|t| t.module != NlpModule::Rea && t.module != NlpModule::Sum)
                        .collect();
                    phase_a.sort_by_key(|t| (t.finished_us, t.task.index(), t.module));
                    let signature: Vec<String> = phase_a
                        .iter()
                        .map(|t| format!("{}/{}", t.task.name(), t.module))
                        .collect();
                    interleavings.lock().expect("set lock").insert(signature.join(","));
                }
            });
        }
    });

    let distinct = interleavings.lock().expect("set lock").len();
    assert!(distinct >= 2, "only {distinct} completion order(s) over {runs} runs");
}

// ---------------------------------------------------------------------
// Cache behavior: a hit returns byte-identical documents without calling
// the retriever; capacity-2 LRU evicts the oldest of three inserts; key
// canonicalization collapses case variants to one entry.
// ---------------------------------------------------------------------

fn cache_behavior() {
    let key = CacheKey::new(CtiTask::Attribution, AnalyticalTarget::ThreatActor, "APT41");
    let retriever = MockRetriever::new();
    let cache = RetrievalCache::new(CachePolicy { capacity: 8, ttl: None });

    let first = retrieve(&key, &cache, &retriever, &FetchOrderRanker, false)
        .expect("miss fetches");
    assert!(!first.cache_hit);
    assert_eq!(retriever.calls(), 1);

    let second = retrieve(&key, &cache, &retriever, &FetchOrderRanker, false)
        .expect("hit returns");
    assert!(second.cache_hit);
    assert_eq!(retriever.calls(), 1, "hit must not touch the retriever");
    assert_eq!(
        serde_json::to_vec(&first.documents).expect("serializes"),
        serde_json::to_vec(&second.documents).expect("serializes"),
        "hit returned different bytes"
    );

    // LRU at capacity 2: inserting a third key evicts the first, so the
    // first key misses and refetches.
    let cache = RetrievalCache::new(CachePolicy { capacity: 2, ttl: None });
    let retriever = MockRetriever::new();
    let keys: Vec<CacheKey> = ["alpha", "beta", "gamma"]
        .iter()
        .map(|e| CacheKey::new(CtiTask::Attribution, AnalyticalTarget::ThreatActor, e))
        .collect();
    for key in &keys {
        let out = retrieve(key, &cache, &retriever, &FetchOrderRanker, false).expect("fetches");
        assert!(!out.cache_hit);
    }
    assert_eq!(retriever.calls(), 3);
    assert_eq!(cache.len(), 2);
    let revisit = retrieve(&keys[0], &cache, &retriever, &FetchOrderRanker, false)
        .expect("refetches");
    assert!(!revisit.cache_hit, "evicted key must miss");
    assert_eq!(retriever.calls(), 4);
    let kept = retrieve(&keys[2], &cache, &retriever, &FetchOrderRanker, false)
        .expect("still cached");
    assert!(kept.cache_hit, "most recent key must survive");

    // Case and spacing variants share one entry.
    let cache = RetrievalCache::new(CachePolicy { capacity: 8, ttl: None });
    let retriever = MockRetriever::new();
    let upper = CacheKey::new(CtiTask::Attribution, AnalyticalTarget::ThreatActor, "APT41");
    let lower = CacheKey::new(CtiTask::Attribution, AnalyticalTarget::ThreatActor, "  apt41 ");
    assert_eq!(upper, lower);
    let miss = retrieve(&upper, &cache, &retriever, &FetchOrderRanker, false).expect("fetches");
    assert!(!miss.cache_hit);
    let hit = retrieve(&lower, &cache, &retriever, &FetchOrderRanker, false).expect("hits");
    assert!(hit.cache_hit, "case variant must hit the same entry");
    assert_eq!(retriever.calls(), 1);
    assert_eq!(cache.len(), 1);
}

// ---------------------------------------------------------------------
// End-to-end determinism: the full pipeline under mock backends and a
// fixed seed produces byte-identical artifacts in two fresh directories,
// within 60 seconds for a 50-record store.
// ---------------------------------------------------------------------

fn e2e_record(i: usize) -> ThreatRecord {
    let cve_id = CveId::parse(&format!("CVE-2024-{:04}", 1000 + i)).expect("valid id");
    let published = YearMonth::new(2024, 1 + (i % 12) as u32).expect("valid month");
    let mut record = ThreatRecord::new(cve_id, published);
    record.description = format!(
        "Service {i} mishandles crafted archive entries, allowing remote code execution. \
         Vendor triage links the flaw to CVE-2024-{:04}.",
        1000 + (i + 7) % 50
    );
    record.impact = Some(format!("remote code execution on tier {}", i % 4));
    if i.is_multiple_of(2) {
        record.threat_actor = Some(format!("actor-{}", i % 9));
    }
    if i.is_multiple_of(3) {
        record.campaign = Some(format!("campaign-{}", i % 5));
        insert_label(&mut record.ttps, &format!("T{:04}", 1000 + i % 600));
    }
    if i.is_multiple_of(4) {
        insert_product(&mut record.affected_systems, &format!("Widget Server {}.{}", i % 7, i % 3));
        insert_label(&mut record.attack_infra, &format!("relay-{i}.example.net"));
    }
    if i.is_multiple_of(5) {
        record.insert_cwe(&format!("{}", 20 + i % 700));
        record.cvss = Some(CvssAssessment::default());
    }
    if i.is_multiple_of(6) {
        let base = ymd(2025, 2, 3);
        let points = (0..4u64)
            .map(|k| EpssPoint {
                date: base + chrono::Days::new(11 * k),
                score: (3 * i) as f64 % 60.0 + k as f64,
            })
            .collect();
        record.epss = Some(EpssSeries::new(points).expect("valid series"));
    }
    if i.is_multiple_of(7) {
        let mut remediation = RemediationInfo::default();
        remediation.tools.insert(format!("scanner-{}", i % 4));
        remediation.patch = Some(format!("apply hotfix {}", 100 + i));
        record.remediation = Some(remediation);
    }
    record.references.insert(Reference::new(
        &format!("https://example.org/advisories/adv-{i:03}"),
        "third-party",
    ));
    record
}

const E2E_CONFIG: &str = r#"master_seed = 11

[[backends]]
id = "mock-a"
kind = "mock"

[[backends]]
id = "mock-b"
kind = "mock"
"#;

fn write_e2e_inputs(dir: &Path) {
    let feed: String = (0..50)
        .map(|i| serde_json::to_string(&e2e_record(i)).expect("serializes") + "\n")
        .collect();
    std::fs::write(dir.join("feed.jsonl"), feed).expect("feed writes");
    std::fs::write(dir.join("config.toml"), E2E_CONFIG).expect("config writes");
    std::fs::write(
        dir.join("report.txt"),
        "Analysts observed actor-2 exploiting the archive handler flaw tracked as \
         CVE-2024-1004, staging payloads from relay-4.example.net.\n",
    )
    .expect("report writes");

    let corr_rows: Vec<CorrelationRow> = (0..3)
        .map(|k| CorrelationRow {
            id: format!("row-{k}"),
            report: format!(
                "Incident {k}: exploitation consistent with CVE-2024-{:04} observed on the \
                 archive tier.",
                1001 + k
            ),
            truth: vec![format!("CVE-2024-{:04}", 1001 + k)],
        })
        .collect();
    write_correlation_rows(&dir.join("corr-rows.jsonl"), &corr_rows, "acceptance-input", 0)
        .expect("rows write");

    let truth = EpssSeries::new(
        (0..8u64)
            .map(|k| EpssPoint {
                date: ymd(2025, 3, 1) + chrono::Days::new(27 * k),
                score: 12.0 + 3.0 * k as f64,
            })
            .collect(),
    )
    .expect("valid series");
    let epss_rows: Vec<EpssRow> = (0..2)
        .map(|k| EpssRow {
            id: format!("epss-{k}"),
            report: format!("Exploitation likelihood review {k} for the archive handler flaw."),
            t0: ymd(2025, 6, 2),
            truth: truth.clone(),
        })
        .collect();
    write_epss_rows(&dir.join("epss-rows.jsonl"), &epss_rows, "acceptance-input", 0)
        .expect("rows write");

    let set_rows: Vec<SetPredictionRecord> = (0..3)
        .map(|k| SetPredictionRecord {
            id: format!("set-{k}"),
            predicted: vec!["alpha".to_string(), format!("x{k}")],
            reference: vec!["alpha".to_string(), "beta".to_string()],
        })
        .collect();
    write_set_predictions(&dir.join("set-preds.jsonl"), &set_rows, "acceptance-input", 0)
        .expect("rows write");
}

fn run_cli(dir: &Path, args: &[&str]) {
    let output = Command::new(env!("CARGO_BIN_EXE_ctikit"))
        .current_dir(dir)
        .args(["--config", "config.toml", "--seed", "11", "--workers", "2"])
        .args(args)
        .output()
        .expect("binary launches");
    assert!(
        output.status.success(),
        "ctikit {args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        output.status.code(),
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn run_pipeline(dir: &Path) {
    write_e2e_inputs(dir);
    run_cli(dir, &["ingest", "--feed", "nvd=feed.jsonl", "--out", "store.jsonl"]);
    run_cli(dir, &["corpus", "build", "--store", "store.jsonl", "--out", "corpus.jsonl"]);
    run_cli(dir, &["curriculum", "plan", "--corpus", "corpus.jsonl", "--out-dir", "curriculum"]);
    run_cli(
        dir,
        &[
            "cascade", "build", "--store", "store.jsonl", "--out", "cascade.jsonl",
            "--contexts", "contexts.jsonl",
        ],
    );
    run_cli(
        dir,
        &[
            "infer", "ask", "--report", "report.txt",
            "--question", "What remediation steps should we take to patch this flaw?",
            "--out", "transcript.jsonl", "--cache-file", "cache.json",
        ],
    );
    run_cli(
        dir,
        &[
            "eval", "metrics", "--predictions", "set-preds.jsonl", "--kind", "set",
            "--out", "set-report.jsonl",
        ],
    );
    run_cli(
        dir,
        &["eval", "correlation", "--rows", "corr-rows.jsonl", "--out", "corr-report.jsonl"],
    );
    run_cli(dir, &["eval", "epss", "--rows", "epss-rows.jsonl", "--out", "epss-report.jsonl"]);
}

fn collect_files(root: &Path, base: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(root).expect("directory lists") {
        let path = entry.expect("entry reads").path();
        if path.is_dir() {
            collect_files(&path, base, out);
        } else {
            let rel = path
                .strip_prefix(base)
                .expect("path under base")
                .to_string_lossy()
                .into_owned();
            out.insert(rel, std::fs::read(&path).expect("file reads"));
        }
    }
}

fn end_to_end_determinism() {
    let start = Instant::now();
    let root = tempfile::tempdir().expect("temp dir");
    let dir_a = root.path().join("a");
    let dir_b = root.path().join("b");
    std::fs::create_dir_all(&dir_a).expect("dir creates");
    std::fs::create_dir_all(&dir_b).expect("dir creates");

    run_pipeline(&dir_a);
    run_pipeline(&dir_b);

    let mut files_a = BTreeMap::new();
    let mut files_b = BTreeMap::new();
    collect_files(&dir_a, &dir_a, &mut files_a);
    collect_files(&dir_b, &dir_b, &mut files_b);

    let names_a: Vec<&String> = files_a.keys().collect();
    let names_b: Vec<&String> = files_b.keys().collect();
    assert_eq!(names_a, names_b, "runs produced different file sets");
    assert!(files_a.len() >= 20, "expected a full artifact tree, found {}", files_a.len());
    for (name, bytes) in &files_a {
        assert_eq!(bytes, &files_b[name], "{name} differs between runs");
    }

    assert!(
        start.elapsed() < Duration::from_secs(60),
        "pipeline pair took {:?}",
        start.elapsed()
    );
}

// ---------------------------------------------------------------------
// Corpus generation fidelity: in 200 seeded runs with two registered
// backends, the revision prompt quotes the generated draft verbatim and
// the revising backend always differs from the generating one.
// ---------------------------------------------------------------------

struct RecordingBackend {
    inner: MockBackend,
    log: Arc<Mutex<Vec<(String, String, String)>>>,
}

impl TextBackend for RecordingBackend {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<String, ModelIoError> {
        let output = self.inner.generate(request)?;
        self.log.lock().expect("log lock").push((
            self.inner.id().to_string(),
            request.prompt_text(),
            output.clone(),
        ));
        Ok(output)
    }
}

fn corpus_generation_fidelity() {
    let demos = ctikit::corpusgen::DemoLibrary::bundled();
    let mut rng = seeded_rng(55, "acceptance:corpus");
    for run in 0..200u64 {
        let log: Arc<Mutex<Vec<(String, String, String)>>> = Arc::new(Mutex::new(Vec::new()));
        let mut registry = BackendRegistry::new();
        for id in ["rec-a", "rec-b"] {
            registry
                .register(Arc::new(RecordingBackend {
                    inner: MockBackend::new(id),
                    log: Arc::clone(&log),
                }))
                .expect("fresh registry");
        }

        let record = random_record(&mut rng, run as usize);
        let store: ThreatStore = merge_store(&[record], &SourcePrecedence::default());
        let mut job = CorpusJobConfig::new(run);
        job.workers = 1;
        let report = build_corpus(&store, &demos, &registry, &job);
        assert!(report.skipped.is_empty(), "run {run}: {:?}", report.skipped);
        assert_eq!(report.documents.len(), 1);

        let calls = log.lock().expect("log lock");
        assert_eq!(calls.len(), 2, "run {run}: expected generate then revise");
        let (gen_backend, _, draft) = &calls[0];
        let (rev_backend, revision_prompt, _) = &calls[1];
        assert!(
            revision_prompt.contains(draft.as_str()),
            "run {run}: revision prompt does not quote the draft"
        );
        assert_ne!(gen_backend, rev_backend, "run {run}: same backend revised its own draft");

        let provenance = &report.documents[0].provenance;
        assert_eq!(&provenance.generation_backend, gen_backend);
        assert_eq!(&provenance.revision_backend, rev_backend);
        assert_eq!(provenance.master_seed, run);
    }
}
