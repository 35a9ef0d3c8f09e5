//! `ctikit infer ask` and `ctikit infer repl`: run the session engine over
//! a report, print the structured response, persist the transcript.

use super::RunContext;
use crate::config::{RankerKind, RetrieverKind, TopicProviderKind};
use crate::error::{pipeline_err, validation_err, CliResult};
use clap::{Args, Subcommand};
use ctikit::infer::{
    write_transcript, BackendRanker, BackendTopicProvider, FetchOrderRanker, FinalResponse,
    HttpRetriever, KeywordTopicProvider, MockRetriever, Ranker, Retriever, RetrievalCache,
    SessionEngine, SessionError, SessionTranscript, TopicProvider,
};
use ctikit::cascade::TaskGraph;
use ctikit::modelio::BackendRegistry;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::time::Duration;

#[derive(Subcommand, Debug)]
pub enum InferCommand {
    /// Answer a single question about a report.
    Ask(AskArgs),
    /// Interactive loop: one question per line, shared cache across turns.
    Repl(ReplArgs),
}

#[derive(Args, Debug)]
pub struct AskArgs {
    /// Path to the report text (E0).
    #[arg(long)]
    pub report: PathBuf,
    /// The analyst question.
    #[arg(long)]
    pub question: String,
    /// Transcript artifact path.
    #[arg(long, default_value = "transcript.jsonl")]
    pub out: PathBuf,
    /// Backend id override.
    #[arg(long)]
    pub backend: Option<String>,
    /// Skip cache reads; fetched results are still inserted.
    #[arg(long)]
    pub bypass_cache: bool,
    /// Cache artifact to load before and save after the run.
    #[arg(long)]
    pub cache_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ReplArgs {
    /// Path to the report text (E0).
    #[arg(long)]
    pub report: PathBuf,
    /// Transcript artifact path; one line per answered question.
    #[arg(long, default_value = "transcript.jsonl")]
    pub out: PathBuf,
    /// Backend id override.
    #[arg(long)]
    pub backend: Option<String>,
    /// Skip cache reads; fetched results are still inserted.
    #[arg(long)]
    pub bypass_cache: bool,
    /// Cache artifact to load before and save after the loop.
    #[arg(long)]
    pub cache_file: Option<PathBuf>,
}

/// Owns everything a SessionEngine borrows, so commands can build the
/// engine once and reuse it across questions.
pub struct EngineParts {
    pub graph: TaskGraph,
    pub registry: BackendRegistry,
    pub backend_id: String,
    pub topic: Box<dyn TopicProvider>,
    pub retriever: Box<dyn Retriever>,
    pub ranker: Box<dyn Ranker>,
    pub cache: RetrievalCache,
    pub master_seed: u64,
    pub intent_threshold: f64,
    pub bypass_cache: bool,
}

impl EngineParts {
    pub fn build(
        ctx: &RunContext,
        backend_flag: Option<&str>,
        cache_file: Option<&PathBuf>,
        bypass_cache: bool,
    ) -> CliResult<EngineParts> {
        let config = &ctx.config;
        let (registry, handles) = config.build_backends()?;
        let backend_id = config.backend_id(backend_flag)?;
        let handle = handles.get(&backend_id).expect("id validated").clone();

        let topic: Box<dyn TopicProvider> = match config.infer.topic {
            TopicProviderKind::Keyword => Box::new(KeywordTopicProvider),
            TopicProviderKind::Backend => {
                Box::new(BackendTopicProvider::new(handle.clone(), ctx.seed()))
            }
        };
        let ranker: Box<dyn Ranker> = match config.infer.ranker {
            RankerKind::FetchOrder => Box::new(FetchOrderRanker),
            RankerKind::Backend => Box::new(BackendRanker::new(handle, ctx.seed())),
        };
        let retriever: Box<dyn Retriever> = match config.retrieval.kind {
            RetrieverKind::Mock => Box::new(MockRetriever::new()),
            RetrieverKind::Http => Box::new(HttpRetriever::new(
                config.retrieval.url.as_deref().expect("validated at load"),
                config.retrieval.auth_env.as_deref(),
                Duration::from_millis(config.retrieval.timeout_ms),
            )),
        };
        let policy = config.cache.policy();
        let cache = match cache_file {
            Some(path) if path.exists() => {
                RetrievalCache::load(path, policy).map_err(pipeline_err)?
            }
            _ => RetrievalCache::new(policy),
        };
        Ok(EngineParts {
            graph: TaskGraph::standard(),
            registry,
            backend_id,
            topic,
            retriever,
            ranker,
            cache,
            master_seed: ctx.seed(),
            intent_threshold: config.infer.intent_threshold,
            bypass_cache,
        })
    }

    pub fn engine(&self) -> SessionEngine<'_> {
        SessionEngine {
            graph: &self.graph,
            registry: &self.registry,
            backend_id: &self.backend_id,
            topic_provider: self.topic.as_ref(),
            retriever: self.retriever.as_ref(),
            ranker: self.ranker.as_ref(),
            cache: &self.cache,
            master_seed: self.master_seed,
            intent_threshold: self.intent_threshold,
            bypass_cache: self.bypass_cache,
        }
    }

    fn save_cache(&self, ctx: &RunContext, path: Option<&PathBuf>) -> CliResult<()> {
        if let Some(path) = path {
            self.cache
                .save(path, &ctx.digest(), ctx.seed())
                .map_err(pipeline_err)?;
        }
        Ok(())
    }
}

pub fn render_response(response: &FinalResponse) -> String {
    let mut out = String::new();
    out.push_str(&format!("Topic: {}\n", response.topic));
    out.push_str("Entities:\n");
    for entity in &response.entities {
        out.push_str(&format!("  - {} ({})\n", entity.surface, entity.category));
    }
    out.push_str("Relations:\n");
    for relation in &response.relations {
        out.push_str(&format!("  - {relation}\n"));
    }
    out.push_str("Evidence:\n");
    for doc in &response.evidence {
        out.push_str(&format!("  - [{}] {}: {}\n", doc.source, doc.id, doc.text));
    }
    out.push_str(&format!("Reasoning: {}\n", response.reasoning));
    out.push_str(&format!("Summary: {}\n", response.summarization));
    out
}

fn read_report(path: &PathBuf) -> CliResult<String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| pipeline_err(format!("cannot read {}: {e}", path.display())))?;
    let trimmed = text.trim().to_string();
    if trimmed.is_empty() {
        return Err(validation_err(format!("report {} is empty", path.display())));
    }
    Ok(trimmed)
}

pub fn ask(ctx: &RunContext, args: &AskArgs) -> CliResult<()> {
    let e0 = read_report(&args.report)?;
    let parts = EngineParts::build(ctx, args.backend.as_deref(), args.cache_file.as_ref(), args.bypass_cache)?;
    let engine = parts.engine();
    match engine.run_session(&e0, &args.question) {
        Ok(transcript) => {
            if let Some(response) = &transcript.final_response {
                print!("{}", render_response(response));
            }
            write_transcript(&args.out, std::slice::from_ref(&transcript), &ctx.digest(), ctx.seed())
                .map_err(pipeline_err)?;
            parts.save_cache(ctx, args.cache_file.as_ref())?;
            println!("wrote transcript to {}", args.out.display());
            Ok(())
        }
        Err(SessionError::Plan(e)) => Err(validation_err(e)),
        Err(SessionError::Stage { task, module, error, partial }) => {
            write_transcript(&args.out, &[*partial], &ctx.digest(), ctx.seed())
                .map_err(pipeline_err)?;
            parts.save_cache(ctx, args.cache_file.as_ref())?;
            eprintln!("partial transcript written to {}", args.out.display());
            Err(pipeline_err(format!("stage {task}/{module} failed: {error}")))
        }
    }
}

pub fn repl(ctx: &RunContext, args: &ReplArgs) -> CliResult<()> {
    let e0 = read_report(&args.report)?;
    let parts = EngineParts::build(ctx, args.backend.as_deref(), args.cache_file.as_ref(), args.bypass_cache)?;
    let engine = parts.engine();
    let mut transcripts: Vec<SessionTranscript> = Vec::new();

    let stdin = std::io::stdin();
    let mut stdout = std::io::stdout();
    loop {
        print!("> ");
        stdout.flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).map_err(pipeline_err)? == 0 {
            break;
        }
        let question = line.trim();
        if question.is_empty() {
            continue;
        }
        if question == "exit" || question == "quit" {
            break;
        }
        match engine.run_session(&e0, question) {
            Ok(transcript) => {
                if let Some(response) = &transcript.final_response {
                    print!("{}", render_response(response));
                }
                transcripts.push(transcript);
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    if !transcripts.is_empty() {
        write_transcript(&args.out, &transcripts, &ctx.digest(), ctx.seed())
            .map_err(pipeline_err)?;
        println!("wrote {} transcripts to {}", transcripts.len(), args.out.display());
    }
    parts.save_cache(ctx, args.cache_file.as_ref())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AppConfig;

    fn ctx() -> RunContext {
        RunContext {
            config: AppConfig::load(None, Some(11)).unwrap(),
            workers: 2,
        }
    }

    #[test]
    fn ask_writes_transcript_and_renders_sections() {
        let dir = tempfile::tempdir().unwrap();
        let report = dir.path().join("report.txt");
        std::fs::write(
            &report,
            "APT28 actors exploited CVE-2024-40594 against FortiOS 7.4 devices.",
        )
        .unwrap();
        let out = dir.path().join("transcript.jsonl");
        let args = AskArgs {
            report,
            question: "Which threat actor is behind this campaign?".to_string(),
            out: out.clone(),
            backend: None,
            bypass_cache: false,
            cache_file: None,
        };
        ask(&ctx(), &args).unwrap();
        let (_, transcripts) = ctikit::infer::read_transcript(&out).unwrap();
        assert_eq!(transcripts.len(), 1);
        let response = transcripts[0].final_response.as_ref().unwrap();
        assert!(!response.topic.is_empty());
        let rendered = render_response(response);
        assert!(rendered.contains("Topic:") && rendered.contains("Summary:"));
    }

    #[test]
    fn unresolved_question_is_a_validation_failure() {
        let dir = tempfile::tempdir().unwrap();
        let report = dir.path().join("report.txt");
        std::fs::write(&report, "A short report.").unwrap();
        let args = AskArgs {
            report,
            question: "zzz qqq".to_string(),
            out: dir.path().join("t.jsonl"),
            backend: None,
            bypass_cache: false,
            cache_file: None,
        };
        let err = ask(&ctx(), &args).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn cache_file_round_trips_between_runs() {
        let dir = tempfile::tempdir().unwrap();
        let report = dir.path().join("report.txt");
        std::fs::write(
            &report,
            "APT28 actors exploited CVE-2024-40594 against FortiOS 7.4 devices.",
        )
        .unwrap();
        let cache_file = dir.path().join("cache.jsonl");
        let args = AskArgs {
            report,
            question: "Correlate this report with related campaigns.".to_string(),
            out: dir.path().join("t.jsonl"),
            backend: None,
            bypass_cache: false,
            cache_file: Some(cache_file.clone()),
        };
        let context = ctx();
        ask(&context, &args).unwrap();
        assert!(cache_file.exists());
        let policy = context.config.cache.policy();
        let cache = RetrievalCache::load(&cache_file, policy).unwrap();
        assert!(!cache.is_empty(), "RAG stage populated the cache");
    }
}
