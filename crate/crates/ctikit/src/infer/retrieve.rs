//! Evidence retrieval: fetch documents for a cache key, rank them, and
//! store the ranked list under the monotone LRU cache.

use super::cache::{retrieval_error, CacheKey, RetrievalCache};
use super::InferError;
use crate::modelio::mock::{DOCUMENTS_BEGIN, DOCUMENTS_END, REQ_SCORES};
use crate::modelio::{sample_params, GenerationRequest, TextBackend};
use crate::util::seeded_rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// A retrieved evidence document. Ids stay colon-free so they survive the
/// `id: snippet` lines of ranking prompts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
}

pub trait Retriever: Send + Sync {
    fn fetch(&self, key: &CacheKey) -> Result<Vec<Document>, InferError>;
}

/// Deterministic in-process retriever: three documents derived from the
/// key, with a call counter for cache-contract tests.
pub struct MockRetriever {
    calls: AtomicUsize,
}

impl MockRetriever {
    pub fn new() -> MockRetriever {
        MockRetriever {
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Default for MockRetriever {
    fn default() -> MockRetriever {
        MockRetriever::new()
    }
}

impl Retriever for MockRetriever {
    fn fetch(&self, key: &CacheKey) -> Result<Vec<Document>, InferError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let slug: String = key
            .entity()
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
            .collect();
        let sources = ["mitre-cve", "nvd", "third-party"];
        Ok((1..=3)
            .map(|i| Document {
                id: format!("doc-{slug}-{i}"),
                source: sources[i - 1].to_string(),
                text: format!(
                    "Reference {i} discussing {} for {} analysis.",
                    key.entity(),
                    key.target()
                ),
            })
            .collect())
    }
}

#[derive(Serialize)]
struct WireQuery<'q> {
    task: &'q str,
    target: &'q str,
    entity: &'q str,
}

#[derive(Deserialize)]
struct WireDocuments {
    documents: Vec<Document>,
}

/// Retriever speaking the wire style of the remote backend: POST the key as
/// JSON, read back `{"documents": [...]}`, bearer auth from an environment
/// variable when configured.
pub struct HttpRetriever {
    url: String,
    auth_env: Option<String>,
    client: reqwest::blocking::Client,
}

impl HttpRetriever {
    pub fn new(url: &str, auth_env: Option<&str>, timeout: Duration) -> HttpRetriever {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .expect("default TLS backend available");
        HttpRetriever {
            url: url.to_string(),
            auth_env: auth_env.map(|s| s.to_string()),
            client,
        }
    }
}

impl Retriever for HttpRetriever {
    fn fetch(&self, key: &CacheKey) -> Result<Vec<Document>, InferError> {
        let token = match &self.auth_env {
            None => None,
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| retrieval_error(key, format!("auth variable {var} not set")))?,
            ),
        };
        let body = WireQuery {
            task: key.task().name(),
            target: key.target().name(),
            entity: key.entity(),
        };
        let mut request = self.client.post(&self.url).json(&body);
        if let Some(token) = token {
            request = request.bearer_auth(token);
        }
        let response = request.send().map_err(|e| retrieval_error(key, e))?;
        let status = response.status();
        if !status.is_success() {
            return Err(retrieval_error(key, format!("wire status {status}")));
        }
        let parsed: WireDocuments = response
            .json()
            .map_err(|e| retrieval_error(key, format!("malformed wire response: {e}")))?;
        Ok(parsed.documents)
    }
}

pub trait Ranker: Send + Sync {
    fn rank(&self, query: &str, documents: Vec<Document>) -> Result<Vec<Document>, InferError>;
}

/// Keeps documents in fetch order.
#[derive(Clone, Copy, Debug, Default)]
pub struct FetchOrderRanker;

impl Ranker for FetchOrderRanker {
    fn rank(&self, _query: &str, documents: Vec<Document>) -> Result<Vec<Document>, InferError> {
        Ok(documents)
    }
}

#[derive(Deserialize)]
struct WireScore {
    id: String,
    score: f64,
}

#[derive(Deserialize)]
struct WireScores {
    scores: Vec<WireScore>,
}

/// Backend-prompted relevance ordering. Documents the backend does not
/// score count as zero; ties keep fetch order (stable sort).
pub struct BackendRanker {
    backend: Arc<dyn TextBackend>,
    master_seed: u64,
}

impl BackendRanker {
    pub fn new(backend: Arc<dyn TextBackend>, master_seed: u64) -> BackendRanker {
        BackendRanker {
            backend,
            master_seed,
        }
    }
}

impl Ranker for BackendRanker {
    fn rank(&self, query: &str, documents: Vec<Document>) -> Result<Vec<Document>, InferError> {
        if documents.len() <= 1 {
            return Ok(documents);
        }
        let listed: Vec<String> = documents
            .iter()
            .map(|d| {
                let snippet: String = d.text.replace(['\n', '\r'], " ").chars().take(80).collect();
                format!("- {}: {snippet}", d.id)
            })
            .collect();
        let prompt = format!(
            "Score each document's relevance to the query. {REQ_SCORES}\n\n\
             ## Query\n{query}\n\n{DOCUMENTS_BEGIN}\n{}\n{DOCUMENTS_END}\n\n\
             Respond with one JSON record: {{\"scores\": [{{\"id\": \"...\", \"score\": 0.0}}]}}.",
            listed.join("\n"),
        );
        let mut rng = seeded_rng(self.master_seed, &format!("rank:{query}"));
        let request = GenerationRequest::structured(&prompt, sample_params(&mut rng));
        let raw = self.backend.generate(&request)?;
        let parsed: WireScores = serde_json::from_str(&raw).map_err(|e| InferError::Ranking {
            message: e.to_string(),
        })?;

        let score_of = |id: &str| {
            parsed
                .scores
                .iter()
                .find(|s| s.id == id)
                .map(|s| s.score)
                .unwrap_or(0.0)
        };
        let mut ranked = documents;
        ranked.sort_by(|a, b| {
            score_of(&b.id)
                .partial_cmp(&score_of(&a.id))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        Ok(ranked)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalOutcome {
    pub documents: Vec<Document>,
    pub cache_hit: bool,
}

/// Cached retrieval. A hit returns the stored list without touching the
/// retriever. A miss fetches, ranks, and stores. `bypass` skips the cache
/// read for freshness but never replaces a live entry, so stored values
/// stay monotone.
pub fn retrieve(
    key: &CacheKey,
    cache: &RetrievalCache,
    retriever: &dyn Retriever,
    ranker: &dyn Ranker,
    bypass: bool,
) -> Result<RetrievalOutcome, InferError> {
    if !bypass {
        if let Some(documents) = cache.get(key) {
            return Ok(RetrievalOutcome {
                documents,
                cache_hit: true,
            });
        }
    }
    let fetched = retriever.fetch(key)?;
    let ranked = ranker.rank(key.entity(), fetched)?;
    let documents = if bypass {
        cache.insert_if_absent(key.clone(), ranked.clone());
        ranked
    } else {
        cache.insert_if_absent(key.clone(), ranked)
    };
    Ok(RetrievalOutcome {
        documents,
        cache_hit: false,
    })
}
