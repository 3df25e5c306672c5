//! Wire formats: JSONL request input and the per-request output record.

use std::io::BufRead;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::decoder::DecodeTrace;
use crate::model::{ItemId, RankedList, ScoredItem};

/// Why a JSONL stream could not be read.
#[derive(Debug, thiserror::Error)]
pub enum ReadError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
    #[error("read failed: {0}")]
    Io(#[from] std::io::Error),
}

impl ReadError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ReadError::Parse { line, .. } | ReadError::Invalid { line, .. } => Some(*line),
            ReadError::Io(_) => None,
        }
    }
}

/// Parses one JSON value per non-blank line. Line numbers are 1-based.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<T>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|source| ReadError::Parse { line: i + 1, source })?;
        out.push(value);
    }
    Ok(out)
}

/// Reads requests and validates each, citing the offending line.
pub fn read_requests<R: BufRead>(reader: R) -> Result<Vec<crate::model::DecodeRequest>, ReadError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let req: crate::model::DecodeRequest =
            serde_json::from_str(&line).map_err(|source| ReadError::Parse { line: i + 1, source })?;
        req.check().map_err(|e| ReadError::Invalid {
            line: i + 1,
            message: format!("request {:?}: {e}", req.request_id),
        })?;
        out.push(req);
    }
    Ok(out)
}

/// Serializes values one per line, each terminated by `\n`.
pub fn to_jsonl<T: Serialize>(values: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    Ok(out)
}

/// One line of decode output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeRecord {
    pub request_id: String,
    pub effective_temperature: f64,
    pub entropy: f64,
    pub clusters: Vec<Vec<ItemId>>,
    pub ranking: Vec<ScoredItem>,
}

impl From<DecodeTrace> for DecodeRecord {
    fn from(t: DecodeTrace) -> Self {
        DecodeRecord {
            request_id: t.ranking.request_id,
            effective_temperature: t.ranking.effective_temperature,
            entropy: t.clusters.entropy,
            clusters: t.clusters.clusters.iter().map(|c| c.ids()).collect(),
            ranking: t.ranking.items,
        }
    }
}

impl DecodeRecord {
    /// Record for a baseline ranking: one singleton cluster per ranked item,
    /// entropy 0.
    pub fn from_baseline(r: RankedList) -> Self {
        DecodeRecord {
            request_id: r.request_id,
            effective_temperature: r.effective_temperature,
            entropy: 0.0,
            clusters: r.items.iter().map(|s| vec![s.id.clone()]).collect(),
            ranking: r.items,
        }
    }
}
