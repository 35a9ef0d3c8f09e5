//! Retrieval cache keyed by (task, target, canonical entity).
//!
//! Policy: LRU with a fixed capacity and an optional TTL. Entries are
//! monotone: once a key is stored its value never changes until the entry
//! is evicted (by capacity) or expires (by TTL), so concurrent readers can
//! never observe two values for one live key.

use super::retrieve::Document;
use super::InferError;
use crate::artifact::{read_artifact, write_artifact, ArtifactError, ArtifactHeader};
use crate::taxonomy::{AnalyticalTarget, CtiTask};
use crate::util::canonical_entity;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

pub const CACHE_ARTIFACT: &str = "retrieval-cache";
pub const DEFAULT_CACHE_CAPACITY: usize = 1024;

/// Cache key: entity strings are canonicalized (trimmed, lowercased,
/// internal whitespace collapsed) so case and spacing variants share one
/// entry.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CacheKey {
    task: CtiTask,
    target: AnalyticalTarget,
    entity: String,
}

impl CacheKey {
    pub fn new(task: CtiTask, target: AnalyticalTarget, entity: &str) -> CacheKey {
        CacheKey {
            task,
            target,
            entity: canonical_entity(entity),
        }
    }

    pub fn task(&self) -> CtiTask {
        self.task
    }

    pub fn target(&self) -> AnalyticalTarget {
        self.target
    }

    pub fn entity(&self) -> &str {
        &self.entity
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.task, self.target, self.entity)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CachePolicy {
    pub capacity: usize,
    pub ttl: Option<Duration>,
}

impl Default for CachePolicy {
    fn default() -> CachePolicy {
        CachePolicy {
            capacity: DEFAULT_CACHE_CAPACITY,
            ttl: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

struct StoredEntry {
    documents: Vec<Document>,
    inserted_at: Instant,
}

struct CacheState {
    map: IndexMap<CacheKey, StoredEntry>,
    stats: CacheStats,
}

/// LRU recency updates make every access a write, so one lock covers both
/// lookups and insertion.
pub struct RetrievalCache {
    policy: CachePolicy,
    state: Mutex<CacheState>,
}

impl RetrievalCache {
    pub fn new(policy: CachePolicy) -> RetrievalCache {
        RetrievalCache {
            policy,
            state: Mutex::new(CacheState {
                map: IndexMap::new(),
                stats: CacheStats::default(),
            }),
        }
    }

    pub fn policy(&self) -> CachePolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.state.lock().expect("cache lock").map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CacheStats {
        self.state.lock().expect("cache lock").stats
    }

    /// Stored documents for `key`, refreshing its recency. An expired entry
    /// is removed and reported as a miss.
    pub fn get(&self, key: &CacheKey) -> Option<Vec<Document>> {
        let mut state = self.state.lock().expect("cache lock");
        let Some(index) = state.map.get_index_of(key) else {
            state.stats.misses += 1;
            return None;
        };
        if let Some(ttl) = self.policy.ttl {
            let expired = state.map[index].inserted_at.elapsed() >= ttl;
            if expired {
                state.map.shift_remove_index(index);
                state.stats.misses += 1;
                return None;
            }
        }
        let last = state.map.len() - 1;
        state.map.move_index(index, last);
        state.stats.hits += 1;
        Some(state.map[last].documents.clone())
    }

    /// Stores `documents` under `key` unless the key is already live, and
    /// returns the stored list either way. Eviction removes the
    /// least-recently-used entries until the new entry fits.
    pub fn insert_if_absent(&self, key: CacheKey, documents: Vec<Document>) -> Vec<Document> {
        let mut state = self.state.lock().expect("cache lock");
        if let Some(index) = state.map.get_index_of(&key) {
            let expired = self
                .policy
                .ttl
                .is_some_and(|ttl| state.map[index].inserted_at.elapsed() >= ttl);
            if !expired {
                return state.map[index].documents.clone();
            }
            state.map.shift_remove_index(index);
        }
        while state.map.len() >= self.policy.capacity.max(1) {
            state.map.shift_remove_index(0);
            state.stats.evictions += 1;
        }
        let stored = documents.clone();
        state.map.insert(
            key,
            StoredEntry {
                documents,
                inserted_at: Instant::now(),
            },
        );
        stored
    }

    /// Keys in recency order, least recent first.
    pub fn keys(&self) -> Vec<CacheKey> {
        self.state
            .lock()
            .expect("cache lock")
            .map
            .keys()
            .cloned()
            .collect()
    }

    /// Entries are written in key order, not recency order: concurrent
    /// stages insert in scheduling order, and the file bytes must not
    /// depend on it.
    pub fn save(&self, path: &Path, config_digest: &str, seed: u64) -> Result<(), ArtifactError> {
        let state = self.state.lock().expect("cache lock");
        let mut records: Vec<CacheFileRecord> = state
            .map
            .iter()
            .map(|(key, entry)| CacheFileRecord {
                key: key.clone(),
                documents: entry.documents.clone(),
            })
            .collect();
        drop(state);
        records.sort_by(|a, b| a.key.cmp(&b.key));
        let header = ArtifactHeader::new(CACHE_ARTIFACT, config_digest, seed);
        write_artifact(path, &header, &records)
    }

    /// Rebuilds a cache from a saved file. Recency resets to the file's
    /// key order and entry ages are not persisted; loaded entries start a
    /// fresh TTL clock.
    pub fn load(path: &Path, policy: CachePolicy) -> Result<RetrievalCache, ArtifactError> {
        let (_, records): (_, Vec<CacheFileRecord>) = read_artifact(path, CACHE_ARTIFACT)?;
        let cache = RetrievalCache::new(policy);
        {
            let mut state = cache.state.lock().expect("cache lock");
            for record in records {
                while state.map.len() >= policy.capacity.max(1) {
                    state.map.shift_remove_index(0);
                }
                state.map.insert(
                    record.key,
                    StoredEntry {
                        documents: record.documents,
                        inserted_at: Instant::now(),
                    },
                );
            }
        }
        Ok(cache)
    }
}

#[derive(Serialize, Deserialize)]
struct CacheFileRecord {
    key: CacheKey,
    documents: Vec<Document>,
}

/// Convenience error constructor used by retrieval paths.
pub(crate) fn retrieval_error(key: &CacheKey, message: impl fmt::Display) -> InferError {
    InferError::Retrieval {
        key: key.to_string(),
        message: message.to_string(),
    }
}
