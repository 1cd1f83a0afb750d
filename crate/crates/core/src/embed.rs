//! Embedding backends, an exact-search vector index, and the in-batch
//! ranking loss used to score candidate encoders.
//!
//! The [`MockEmbedder`] is a deterministic bag-of-tokens hasher: it
//! casefolds, strips the mock translator's `[EN] `/`[EL] ` tags (so a
//! tagged anchor and its source text share a vector), buckets each token by
//! FNV-1a into a fixed number of dimensions, and L2-normalizes the counts.
//! It stands in for a real encoder wherever hermetic determinism matters
//! more than semantics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::jsonl::{self, JsonlError};
use crate::util;

/// Softmax temperature applied to cosine similarities in the ranking loss.
pub const DEFAULT_LOSS_SCALE: f64 = 20.0;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("vector for {id:?} is invalid: {reason}")]
    InvalidVector { id: String, reason: String },
    #[error("duplicate doc_id {0:?} in index")]
    DuplicateId(String),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("batch shape mismatch: {expected} inputs but backend returned {got} vectors")]
    BatchShape { expected: usize, got: usize },
    #[error("dimension mismatch: index holds {expected}-dim vectors, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("similarity matrix is not square: row {row} has {got} entries, expected {expected}")]
    RaggedMatrix {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("cosine undefined: {0}")]
    ZeroNorm(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// Whether a text is embedded as a query or as a passage. Encoders with
/// asymmetric prefixes honor the distinction; symmetric ones ignore it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedRole {
    Query,
    Passage,
}

pub trait EmbeddingBackend: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed_batch(&self, texts: &[String], role: EmbedRole) -> Result<Vec<Vec<f64>>, BackendError>;
}

/// Deterministic hashed bag-of-tokens embedder.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    pub dim: usize,
}

impl Default for MockEmbedder {
    fn default() -> Self {
        MockEmbedder { dim: 64 }
    }
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        MockEmbedder { dim }
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let mut stripped = text.trim();
        loop {
            if let Some(rest) = stripped.strip_prefix("[EN] ") {
                stripped = rest;
            } else if let Some(rest) = stripped.strip_prefix("[EL] ") {
                stripped = rest;
            } else {
                break;
            }
        }
        let mut v = vec![0.0f64; self.dim];
        for token in stripped.to_lowercase().split_whitespace() {
            let bucket = (util::fnv1a_64(token.as_bytes()) % self.dim as u64) as usize;
            v[bucket] += 1.0;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            for x in &mut v {
                *x /= norm;
            }
        }
        v
    }
}

impl EmbeddingBackend for MockEmbedder {
    fn id(&self) -> &str {
        "mock"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String], _role: EmbedRole) -> Result<Vec<Vec<f64>>, BackendError> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

/// Precomputed vectors loaded from a JSONL file of `{id, vector}` records,
/// keyed by the exact text. An optional leading header record (anything
/// carrying `format_version` instead of `id`) is skipped, so files written
/// by the indexing pipeline load directly.
pub struct FileVectorBackend {
    dim: usize,
    map: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VectorRecord {
    pub id: String,
    pub vector: Vec<f64>,
}

impl FileVectorBackend {
    pub fn load(path: &Path) -> Result<Self, EmbedError> {
        let mut map = BTreeMap::new();
        let mut dim = None;
        for item in jsonl::read_records::<serde_json::Value>(path)? {
            let located = item?;
            if located.line == 1
                && located.value.get("format_version").is_some()
                && located.value.get("id").is_none()
            {
                continue;
            }
            let record: VectorRecord =
                serde_json::from_value(located.value).map_err(|e| JsonlError::Malformed {
                    path: path.to_path_buf(),
                    line: located.line,
                    message: e.to_string(),
                })?;
            match dim {
                None => dim = Some(record.vector.len()),
                Some(d) if d != record.vector.len() => {
                    return Err(EmbedError::DimMismatch {
                        expected: d,
                        got: record.vector.len(),
                    })
                }
                _ => {}
            }
            map.insert(record.id, record.vector);
        }
        Ok(FileVectorBackend {
            dim: dim.unwrap_or(0),
            map,
        })
    }
}

impl EmbeddingBackend for FileVectorBackend {
    fn id(&self) -> &str {
        "file"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, texts: &[String], _role: EmbedRole) -> Result<Vec<Vec<f64>>, BackendError> {
        texts
            .iter()
            .map(|t| {
                self.map
                    .get(t)
                    .cloned()
                    .ok_or_else(|| BackendError::Rejected(format!(
                        "no precomputed vector for {:?}",
                        truncate_for_log(t)
                    )))
            })
            .collect()
    }
}

fn truncate_for_log(s: &str) -> String {
    if s.chars().count() > 48 {
        let head: String = s.chars().take(48).collect();
        format!("{head}…")
    } else {
        s.to_string()
    }
}

/// Exact cosine similarity; errors on dimension mismatch or zero vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroNorm("one of the vectors has zero norm".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub doc_id: String,
    pub score: f64,
}

/// Exhaustive-scan vector index over named documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorIndex {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f64>>,
    by_id: BTreeMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        VectorIndex {
            dim,
            ids: Vec::new(),
            vectors: Vec::new(),
            by_id: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn insert(&mut self, id: &str, vector: Vec<f64>) -> Result<(), EmbedError> {
        if vector.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(EmbedError::InvalidVector {
                id: id.to_string(),
                reason: "non-finite component".into(),
            });
        }
        if vector.iter().all(|x| *x == 0.0) {
            return Err(EmbedError::InvalidVector {
                id: id.to_string(),
                reason: "zero vector".into(),
            });
        }
        if self.by_id.contains_key(id) {
            return Err(EmbedError::DuplicateId(id.to_string()));
        }
        self.by_id.insert(id.to_string(), self.ids.len());
        self.ids.push(id.to_string());
        self.vectors.push(vector);
        Ok(())
    }

    /// The `min(k, len)` nearest documents by cosine, ties broken by
    /// ascending doc_id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<SearchHit>, EmbedError> {
        if query.len() != self.dim {
            return Err(EmbedError::DimMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let mut hits: Vec<SearchHit> = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| {
                Ok(SearchHit {
                    doc_id: id.clone(),
                    score: cosine(query, v)?,
                })
            })
            .collect::<Result<_, EmbedError>>()?;
        hits.sort_unstable_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .expect("scores are finite")
                .then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        hits.truncate(k.min(hits.len()));
        Ok(hits)
    }

    /// Persist as JSONL `{id, vector}` records behind a manifest header.
    pub fn save(&self, path: &Path, manifest: &BTreeMap<String, String>) -> Result<(), EmbedError> {
        #[derive(Serialize)]
        struct Header<'a> {
            format_version: u32,
            dim: usize,
            record_count: usize,
            #[serde(skip_serializing_if = "BTreeMap::is_empty")]
            manifest: &'a BTreeMap<String, String>,
        }
        let mut buf = serde_json::to_string(&Header {
            format_version: 1,
            dim: self.dim,
            record_count: self.ids.len(),
            manifest,
        })
        .expect("header serializes");
        buf.push('\n');
        for (id, vector) in self.ids.iter().zip(&self.vectors) {
            buf.push_str(
                &serde_json::to_string(&VectorRecord {
                    id: id.clone(),
                    vector: vector.clone(),
                })
                .expect("record serializes"),
            );
            buf.push('\n');
        }
        std::fs::write(path, buf).map_err(|source| EmbedError::Write {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Embed `(id, text)` documents in batches and build an index. Batch size
/// only groups backend calls; it cannot affect the result because each
/// vector depends on its text alone.
pub fn build_index(
    items: &[(String, String)],
    backend: &dyn EmbeddingBackend,
    batch_size: usize,
) -> Result<VectorIndex, EmbedError> {
    let mut index = VectorIndex::new(backend.dim());
    let batch_size = batch_size.max(1);
    for batch in items.chunks(batch_size) {
        let texts: Vec<String> = batch.iter().map(|(_, t)| t.clone()).collect();
        let vectors = backend.embed_batch(&texts, EmbedRole::Passage)?;
        if vectors.len() != batch.len() {
            return Err(EmbedError::BatchShape {
                expected: batch.len(),
                got: vectors.len(),
            });
        }
        for ((id, _), vector) in batch.iter().zip(vectors) {
            index.insert(id, vector)?;
        }
    }
    Ok(index)
}

/// Mean in-batch negative log-likelihood of matching each anchor to its own
/// positive: `-(1/B) Σ_i log softmax_j(scale · cos(a_i, p_j))_i`, computed
/// with the shifted log-sum-exp so large scales stay stable.
pub fn mnrl_loss(
    anchors: &[Vec<f64>],
    positives: &[Vec<f64>],
    scale: f64,
) -> Result<f64, EmbedError> {
    if anchors.is_empty() {
        return Err(EmbedError::EmptyBatch);
    }
    if anchors.len() != positives.len() {
        return Err(EmbedError::BatchShape {
            expected: anchors.len(),
            got: positives.len(),
        });
    }
    let b = anchors.len();
    let mut sims = vec![vec![0.0f64; b]; b];
    for (i, a) in anchors.iter().enumerate() {
        for (j, p) in positives.iter().enumerate() {
            sims[i][j] = cosine(a, p)?;
        }
    }
    mnrl_loss_from_similarities(&sims, scale)
}

/// The same loss on a precomputed square similarity matrix, `sims[i][j]`
/// being the anchor-i / positive-j similarity.
pub fn mnrl_loss_from_similarities(sims: &[Vec<f64>], scale: f64) -> Result<f64, EmbedError> {
    let b = sims.len();
    if b == 0 {
        return Err(EmbedError::EmptyBatch);
    }
    let mut total = 0.0f64;
    for (i, row) in sims.iter().enumerate() {
        if row.len() != b {
            return Err(EmbedError::RaggedMatrix {
                row: i,
                got: row.len(),
                expected: b,
            });
        }
        let scaled: Vec<f64> = row.iter().map(|s| scale * s).collect();
        let m = scaled.iter().fold(f64::NEG_INFINITY, |acc, &x| acc.max(x));
        let lse = m + scaled.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        total += lse - scaled[i];
    }
    Ok(total / b as f64)
}
