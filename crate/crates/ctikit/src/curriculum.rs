//! Curriculum ordering and the three-stage pacing function.
//!
//! The corpus is sorted chronologically, then shorter-first within a month.
//! Pacing for a 1-based epoch t over an ordered corpus D of size n:
//!
//! * t ≤ T1: the prefix of length floor(n · t / T1) (linear ramp)
//! * T1 < t ≤ T2: all of D (plateau)
//! * t > T2: all of D followed by the suffix D[floor(β · n · (t − T2) / (T − T2)) ..]
//!
//! The third stage concatenates, not unions: recent documents appear twice
//! on purpose. With β = 1 the suffix shrinks to empty at t = T.

use crate::corpusgen::CorpusDocument;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const MANIFEST_ARTIFACT: &str = "epoch-manifest";

#[derive(Debug, Error)]
pub enum CurriculumError {
    #[error("invalid pacing schedule: {0}")]
    InvalidSchedule(String),
    #[error("epoch {epoch} outside [1, {total}]")]
    EpochOutOfRange { epoch: u32, total: u32 },
    #[error("pacing requires a non-empty corpus")]
    EmptyCorpus,
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
}

/// Pacing constants. T is the total epoch count, T1 ends the linear ramp,
/// T2 ends the plateau, β scales the reinforcement cut.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PacingSchedule {
    pub total: u32,
    pub linear_end: u32,
    pub plateau_end: u32,
    pub beta: f64,
}

impl PacingSchedule {
    pub fn new(
        total: u32,
        linear_end: u32,
        plateau_end: u32,
        beta: f64,
    ) -> Result<PacingSchedule, CurriculumError> {
        if !(1 <= linear_end && linear_end <= plateau_end && plateau_end <= total) {
            return Err(CurriculumError::InvalidSchedule(format!(
                "need 1 <= T1 <= T2 <= T, got T={total}, T1={linear_end}, T2={plateau_end}"
            )));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(CurriculumError::InvalidSchedule(format!(
                "beta must be finite and >= 0, got {beta}"
            )));
        }
        Ok(PacingSchedule {
            total,
            linear_end,
            plateau_end,
            beta,
        })
    }

    /// Named presets matching the shipped re-training settings per model
    /// scale.
    pub fn preset(name: &str) -> Option<PacingSchedule> {
        let (total, linear_end, plateau_end, beta) = match name.trim().to_lowercase().as_str() {
            "1b" => (4, 3, 3, 1.0),
            "8b" => (10, 5, 5, 1.0),
            "70b" => (20, 10, 10, 1.0),
            _ => return None,
        };
        Some(PacingSchedule::new(total, linear_end, plateau_end, beta).expect("presets are valid"))
    }

    pub const PRESET_NAMES: [&'static str; 3] = ["1B", "8B", "70B"];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Linear,
    Plateau,
    Reinforced,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Linear => "linear",
            Stage::Plateau => "plateau",
            Stage::Reinforced => "reinforced",
        })
    }
}

/// The corpus in curriculum order: non-decreasing (published, token_count),
/// stable within full ties.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderedCorpus {
    docs: Vec<CorpusDocument>,
}

impl OrderedCorpus {
    pub fn docs(&self) -> &[CorpusDocument] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> Vec<String> {
        self.docs.iter().map(|d| d.doc_id.clone()).collect()
    }
}

pub fn order_corpus(docs: Vec<CorpusDocument>) -> OrderedCorpus {
    let mut docs = docs;
    docs.sort_by(|a, b| {
        (a.published, a.token_count).cmp(&(b.published, b.token_count))
    });
    OrderedCorpus { docs }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochManifest {
    pub epoch: u32,
    pub stage: Stage,
    pub entries: Vec<String>,
}

/// The reinforcement cut floor(β · n · (t − T2) / (T − T2)), clamped to
/// [0, n].
fn reinforcement_cut(n: usize, t: u32, sched: &PacingSchedule) -> usize {
    let numerator = (t - sched.plateau_end) as f64;
    let denominator = (sched.total - sched.plateau_end) as f64;
    let raw = (sched.beta * n as f64 * numerator / denominator).floor();
    (raw as i64).clamp(0, n as i64) as usize
}

/// Applies the pacing function for one epoch.
pub fn pace(
    corpus: &OrderedCorpus,
    t: u32,
    sched: &PacingSchedule,
) -> Result<EpochManifest, CurriculumError> {
    if t < 1 || t > sched.total {
        return Err(CurriculumError::EpochOutOfRange {
            epoch: t,
            total: sched.total,
        });
    }
    if corpus.is_empty() {
        return Err(CurriculumError::EmptyCorpus);
    }
    let ids = corpus.doc_ids();
    let n = ids.len();

    let (stage, entries) = if t <= sched.linear_end {
        let len = (n as u64 * t as u64 / sched.linear_end as u64) as usize;
        (Stage::Linear, ids[..len].to_vec())
    } else if t <= sched.plateau_end {
        (Stage::Plateau, ids)
    } else {
        let cut = reinforcement_cut(n, t, sched);
        let mut entries = ids.clone();
        entries.extend_from_slice(&ids[cut..]);
        (Stage::Reinforced, entries)
    };
    Ok(EpochManifest { epoch: t, stage, entries })
}

/// One manifest per epoch, t ascending from 1 to T.
pub fn emit_schedule(
    corpus: &OrderedCorpus,
    sched: &PacingSchedule,
) -> Result<Vec<EpochManifest>, CurriculumError> {
    (1..=sched.total).map(|t| pace(corpus, t, sched)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct ManifestHeader {
    artifact: String,
    config_digest: String,
    seed: u64,
    epoch: u32,
    stage: Stage,
    size: usize,
}

/// Writes one manifest file: a JSON header line carrying
/// {epoch, stage, size}, then one doc_id per line.
pub fn write_manifest(
    path: &Path,
    manifest: &EpochManifest,
    config_digest: &str,
    seed: u64,
) -> Result<(), CurriculumError> {
    let io_err = |source| CurriculumError::Io {
        path: path.display().to_string(),
        source,
    };
    let header = ManifestHeader {
        artifact: MANIFEST_ARTIFACT.to_string(),
        config_digest: config_digest.to_string(),
        seed,
        epoch: manifest.epoch,
        stage: manifest.stage,
        size: manifest.entries.len(),
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes"))
        .map_err(io_err)?;
    for doc_id in &manifest.entries {
        writeln!(out, "{doc_id}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn read_manifest(path: &Path) -> Result<EpochManifest, CurriculumError> {
    let file = std::fs::File::open(path).map_err(|source| CurriculumError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let malformed = |message: String| CurriculumError::Malformed {
        path: path.display().to_string(),
        message,
    };
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| malformed("empty manifest".to_string()))?
        .map_err(|e| malformed(e.to_string()))?;
    let header: ManifestHeader =
        serde_json::from_str(&first).map_err(|e| malformed(format!("bad header: {e}")))?;
    if header.artifact != MANIFEST_ARTIFACT {
        return Err(malformed(format!(
            "expected {MANIFEST_ARTIFACT:?}, found {:?}",
            header.artifact
        )));
    }
    let mut entries = Vec::with_capacity(header.size);
    for line in lines {
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if !line.trim().is_empty() {
            entries.push(line.trim().to_string());
        }
    }
    if entries.len() != header.size {
        return Err(malformed(format!(
            "header size {} disagrees with {} entries",
            header.size,
            entries.len()
        )));
    }
    Ok(EpochManifest {
        epoch: header.epoch,
        stage: header.stage,
        entries,
    })
}

/// Writes `epoch-NNN.manifest` files into `dir`, returning the paths.
pub fn write_schedule(
    dir: &Path,
    manifests: &[EpochManifest],
    config_digest: &str,
    seed: u64,
) -> Result<Vec<PathBuf>, CurriculumError> {
    let mut paths = Vec::with_capacity(manifests.len());
    for manifest in manifests {
        let path = dir.join(format!("epoch-{:03}.manifest", manifest.epoch));
        write_manifest(&path, manifest, config_digest, seed)?;
        paths.push(path);
    }
    Ok(paths)
}
