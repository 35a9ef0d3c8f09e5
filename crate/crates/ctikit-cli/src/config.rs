//! Declarative app configuration: one TOML file, flag overrides for seed
//! and workers, env vars only for auth secrets. Unknown keys are rejected
//! so typos fail at load time.

use crate::error::{config_err, CliResult};
use ctikit::corpusgen::{default_templates, DemoLibrary, PromptTemplate, TemplatePair};
use ctikit::curriculum::PacingSchedule;
use ctikit::infer::{CachePolicy, DEFAULT_CACHE_CAPACITY, DEFAULT_INTENT_THRESHOLD};
use ctikit::ingest::dialect::Dialect;
use ctikit::ingest::store::SourcePrecedence;
use ctikit::modelio::mock::MockBackend;
use ctikit::modelio::remote::RemoteBackend;
use ctikit::modelio::{BackendRegistry, RetryPolicy, TextBackend};
use ctikit::util::framed_digest_hex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

pub const DEFAULT_BACKEND_ID: &str = "mock-a";

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppConfig {
    #[serde(default)]
    pub master_seed: u64,
    /// Source name to dialect name; "canonical" needs no [dialects] entry.
    /// An empty map admits any source under the canonical dialect.
    #[serde(default)]
    pub sources: BTreeMap<String, String>,
    /// Merge precedence, highest first. Unlisted sources follow in name
    /// order.
    #[serde(default)]
    pub precedence: Vec<String>,
    /// Dialect name to {canonical field -> JSON pointer}.
    #[serde(default)]
    pub dialects: BTreeMap<String, BTreeMap<String, String>>,
    /// Defaults to one mock backend when empty.
    #[serde(default)]
    pub backends: Vec<BackendEntry>,
    /// Defaults to the first backend.
    #[serde(default)]
    pub default_backend: Option<String>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub pacing: PacingConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub infer: InferConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Mock,
    Remote,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendEntry {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    /// Name of the env var holding the bearer token; never the token.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

fn default_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    250
}

impl BackendEntry {
    pub fn mock(id: &str) -> BackendEntry {
        BackendEntry {
            id: id.to_string(),
            kind: BackendKind::Mock,
            url: None,
            model: None,
            auth_env: None,
            timeout_ms: default_timeout_ms(),
            retries: default_retries(),
            backoff_ms: default_backoff_ms(),
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// Demo report library; the bundled library when absent.
    #[serde(default)]
    pub demos: Option<PathBuf>,
    #[serde(default)]
    pub generation_template: Option<PathBuf>,
    #[serde(default)]
    pub revision_template: Option<PathBuf>,
    /// Question/answer templates for cascade datasets.
    #[serde(default)]
    pub questions: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacingConfig {
    /// "1B", "8B", "70B", or "custom".
    #[serde(default = "default_preset")]
    pub preset: String,
    #[serde(default)]
    pub total: Option<u32>,
    #[serde(default)]
    pub linear_end: Option<u32>,
    #[serde(default)]
    pub plateau_end: Option<u32>,
    #[serde(default)]
    pub beta: Option<f64>,
}

fn default_preset() -> String {
    "8B".to_string()
}

impl Default for PacingConfig {
    fn default() -> PacingConfig {
        PacingConfig {
            preset: default_preset(),
            total: None,
            linear_end: None,
            plateau_end: None,
            beta: None,
        }
    }
}

impl PacingConfig {
    /// Resolves the schedule; named presets must not carry explicit values,
    /// "custom" must carry all four.
    pub fn schedule(&self) -> CliResult<PacingSchedule> {
        let explicit = [
            self.total.is_some(),
            self.linear_end.is_some(),
            self.plateau_end.is_some(),
            self.beta.is_some(),
        ];
        if self.preset.trim().eq_ignore_ascii_case("custom") {
            if explicit.contains(&false) {
                return Err(config_err(
                    "pacing preset \"custom\" requires total, linear_end, plateau_end, and beta",
                ));
            }
            return PacingSchedule::new(
                self.total.unwrap(),
                self.linear_end.unwrap(),
                self.plateau_end.unwrap(),
                self.beta.unwrap(),
            )
            .map_err(config_err);
        }
        if explicit.contains(&true) {
            return Err(config_err(format!(
                "pacing preset {:?} does not take explicit values; use preset = \"custom\"",
                self.preset
            )));
        }
        PacingSchedule::preset(&self.preset).ok_or_else(|| {
            config_err(format!(
                "unknown pacing preset {:?} (known: {}, custom)",
                self.preset,
                PacingSchedule::PRESET_NAMES.join(", ")
            ))
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheConfig {
    #[serde(default = "default_cache_capacity")]
    pub capacity: usize,
    /// 0 disables expiry.
    #[serde(default)]
    pub ttl_seconds: u64,
}

fn default_cache_capacity() -> usize {
    DEFAULT_CACHE_CAPACITY
}

impl Default for CacheConfig {
    fn default() -> CacheConfig {
        CacheConfig { capacity: default_cache_capacity(), ttl_seconds: 0 }
    }
}

impl CacheConfig {
    pub fn policy(&self) -> CachePolicy {
        CachePolicy {
            capacity: self.capacity,
            ttl: (self.ttl_seconds > 0).then(|| Duration::from_secs(self.ttl_seconds)),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_descriptive_threshold")]
    pub descriptive_threshold: f64,
}

fn default_k() -> usize {
    10
}

fn default_descriptive_threshold() -> f64 {
    ctikit::evalharness::DESCRIPTIVE_THRESHOLD
}

impl Default for MetricsConfig {
    fn default() -> MetricsConfig {
        MetricsConfig {
            k: default_k(),
            descriptive_threshold: default_descriptive_threshold(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicProviderKind {
    #[default]
    Keyword,
    Backend,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    #[default]
    FetchOrder,
    Backend,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferConfig {
    #[serde(default = "default_intent_threshold")]
    pub intent_threshold: f64,
    #[serde(default)]
    pub topic: TopicProviderKind,
    #[serde(default)]
    pub ranker: RankerKind,
}

fn default_intent_threshold() -> f64 {
    DEFAULT_INTENT_THRESHOLD
}

impl Default for InferConfig {
    fn default() -> InferConfig {
        InferConfig {
            intent_threshold: default_intent_threshold(),
            topic: TopicProviderKind::default(),
            ranker: RankerKind::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    #[default]
    Mock,
    Http,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    #[serde(default)]
    pub kind: RetrieverKind,
    #[serde(default)]
    pub url: Option<String>,
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

impl Default for RetrievalConfig {
    fn default() -> RetrievalConfig {
        RetrievalConfig {
            kind: RetrieverKind::Mock,
            url: None,
            auth_env: None,
            timeout_ms: default_timeout_ms(),
        }
    }
}

impl AppConfig {
    /// Loads the file (or defaults), applies the seed override, fills the
    /// default backend, and validates.
    pub fn load(path: Option<&Path>, seed_override: Option<u64>) -> CliResult<AppConfig> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display())))?;
                toml::from_str(&text)
                    .map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => AppConfig::default(),
        };
        if let Some(seed) = seed_override {
            config.master_seed = seed;
        }
        if config.backends.is_empty() {
            config.backends.push(BackendEntry::mock(DEFAULT_BACKEND_ID));
        }
        config.validate()?;
        Ok(config)
    }

    /// Digest of the fully resolved config, embedded in every artifact.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        framed_digest_hex(&[&bytes])
    }

    fn validate(&self) -> CliResult<()> {
        for (source, dialect) in &self.sources {
            if dialect != "canonical" && !self.dialects.contains_key(dialect) {
                return Err(config_err(format!(
                    "source {source:?} names unknown dialect {dialect:?}"
                )));
            }
        }
        for (name, fields) in &self.dialects {
            Dialect::custom(name, fields.clone()).map_err(config_err)?;
        }
        for name in &self.precedence {
            if !self.sources.contains_key(name) {
                return Err(config_err(format!(
                    "precedence names unknown source {name:?}"
                )));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for entry in &self.backends {
            if entry.id.trim().is_empty() {
                return Err(config_err("backend id must be non-empty"));
            }
            if !ids.insert(entry.id.as_str()) {
                return Err(config_err(format!("duplicate backend id {:?}", entry.id)));
            }
            if entry.kind == BackendKind::Remote && (entry.url.is_none() || entry.model.is_none())
            {
                return Err(config_err(format!(
                    "remote backend {:?} requires url and model",
                    entry.id
                )));
            }
        }
        if let Some(id) = &self.default_backend {
            if !ids.contains(id.as_str()) {
                return Err(config_err(format!(
                    "default_backend {id:?} is not a configured backend"
                )));
            }
        }
        self.pacing.schedule()?;
        if self.infer.intent_threshold < 0.0 || !self.infer.intent_threshold.is_finite() {
            return Err(config_err("infer.intent_threshold must be finite and >= 0"));
        }
        if self.retrieval.kind == RetrieverKind::Http && self.retrieval.url.is_none() {
            return Err(config_err("retrieval.kind = \"http\" requires retrieval.url"));
        }
        Ok(())
    }

    /// Dialect for a feed source. With no [sources] map, any source parses
    /// under the canonical dialect.
    pub fn dialect_for(&self, source: &str) -> CliResult<Dialect> {
        if self.sources.is_empty() {
            return Ok(Dialect::canonical());
        }
        let name = self
            .sources
            .get(source)
            .ok_or_else(|| config_err(format!("unknown source {source:?}; add it to [sources]")))?;
        if name == "canonical" {
            return Ok(Dialect::canonical());
        }
        let fields = self.dialects.get(name).expect("validated at load");
        Dialect::custom(name, fields.clone()).map_err(config_err)
    }

    /// Merge precedence: listed sources first, then the rest in name order.
    pub fn precedence(&self) -> SourcePrecedence {
        let mut order: Vec<&str> = self.precedence.iter().map(String::as_str).collect();
        for source in self.sources.keys() {
            if !order.contains(&source.as_str()) {
                order.push(source);
            }
        }
        SourcePrecedence::new(&order)
    }

    /// Builds every configured backend, returning the registry plus the
    /// backend handles for components that hold their own reference.
    pub fn build_backends(
        &self,
    ) -> CliResult<(BackendRegistry, BTreeMap<String, Arc<dyn TextBackend>>)> {
        let mut registry = BackendRegistry::new();
        let mut handles: BTreeMap<String, Arc<dyn TextBackend>> = BTreeMap::new();
        for entry in &self.backends {
            let backend: Arc<dyn TextBackend> = match entry.kind {
                BackendKind::Mock => Arc::new(MockBackend::new(&entry.id)),
                BackendKind::Remote => Arc::new(RemoteBackend::new(
                    &entry.id,
                    entry.url.as_deref().expect("validated at load"),
                    entry.model.as_deref().expect("validated at load"),
                    entry.auth_env.as_deref(),
                    RetryPolicy {
                        attempts: entry.retries.max(1),
                        initial_backoff: Duration::from_millis(entry.backoff_ms),
                    },
                    Duration::from_millis(entry.timeout_ms),
                )),
            };
            handles.insert(entry.id.clone(), Arc::clone(&backend));
            registry.register(backend).map_err(config_err)?;
        }
        Ok((registry, handles))
    }

    /// Resolves the backend id: flag override, then default_backend, then
    /// the first configured backend.
    pub fn backend_id(&self, flag: Option<&str>) -> CliResult<String> {
        let id = flag
            .map(str::to_string)
            .or_else(|| self.default_backend.clone())
            .unwrap_or_else(|| self.backends[0].id.clone());
        if !self.backends.iter().any(|b| b.id == id) {
            return Err(config_err(format!("backend {id:?} is not configured")));
        }
        Ok(id)
    }

    pub fn demos(&self) -> CliResult<DemoLibrary> {
        match &self.paths.demos {
            None => Ok(DemoLibrary::bundled()),
            Some(path) => DemoLibrary::from_file(path)
                .map_err(|e| config_err(format!("{}: {e}", path.display()))),
        }
    }

    pub fn templates(&self) -> CliResult<TemplatePair> {
        let defaults = default_templates();
        let load = |path: &Option<PathBuf>| -> CliResult<Option<String>> {
            match path {
                None => Ok(None),
                Some(p) => std::fs::read_to_string(p)
                    .map(Some)
                    .map_err(|e| config_err(format!("cannot read {}: {e}", p.display()))),
            }
        };
        let generation = match load(&self.paths.generation_template)? {
            Some(body) => PromptTemplate::generation(&body).map_err(config_err)?,
            None => defaults.generation,
        };
        let revision = match load(&self.paths.revision_template)? {
            Some(body) => PromptTemplate::revision(&body).map_err(config_err)?,
            None => defaults.revision,
        };
        Ok(TemplatePair { generation, revision })
    }
}
