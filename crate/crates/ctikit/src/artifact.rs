//! Self-describing artifact files.
//!
//! Every artifact this toolkit writes is line-delimited JSON whose first line
//! is an [`ArtifactHeader`] naming the artifact kind, the digest of the
//! configuration that produced it, and the seed in effect. This lets any
//! consumer check provenance before trusting the payload, and makes two runs
//! with the same inputs byte-comparable.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub artifact: String,
    pub config_digest: String,
    pub seed: u64,
}

impl ArtifactHeader {
    pub fn new(artifact: &str, config_digest: &str, seed: u64) -> Self {
        ArtifactHeader {
            artifact: artifact.to_string(),
            config_digest: config_digest.to_string(),
            seed,
        }
    }
}

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed artifact line: {source}")]
    Malformed {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: expected artifact kind {expected:?}, found {found:?}")]
    KindMismatch {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: empty file, missing artifact header")]
    MissingHeader { path: String },
}

fn io_err(path: &Path, source: std::io::Error) -> ArtifactError {
    ArtifactError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes a header line followed by one JSON line per record.
pub fn write_artifact<T: Serialize>(
    path: &Path,
    header: &ArtifactHeader,
    records: &[T],
) -> Result<(), ArtifactError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    let head = serde_json::to_string(header).expect("header serializes");
    writeln!(out, "{head}").map_err(|e| io_err(path, e))?;
    for record in records {
        let line = serde_json::to_string(record).map_err(|e| ArtifactError::Malformed {
            path: path.display().to_string(),
            line: 0,
            source: e,
        })?;
        writeln!(out, "{line}").map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

/// Reads an artifact file, checking the header kind before decoding records.
pub fn read_artifact<T: DeserializeOwned>(
    path: &Path,
    expected_kind: &str,
) -> Result<(ArtifactHeader, Vec<T>), ArtifactError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, first) = lines.next().ok_or_else(|| ArtifactError::MissingHeader {
        path: path.display().to_string(),
    })?;
    let first = first.map_err(|e| io_err(path, e))?;
    let header: ArtifactHeader =
        serde_json::from_str(&first).map_err(|e| ArtifactError::Malformed {
            path: path.display().to_string(),
            line: 1,
            source: e,
        })?;
    if header.artifact != expected_kind {
        return Err(ArtifactError::KindMismatch {
            path: path.display().to_string(),
            expected: expected_kind.to_string(),
            found: header.artifact,
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| ArtifactError::Malformed {
            path: path.display().to_string(),
            line: idx + 1,
            source: e,
        })?;
        records.push(record);
    }
    Ok((header, records))
}
