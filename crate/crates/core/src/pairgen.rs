//! Anchor-positive training pair generation from a knowledge graph.
//!
//! Stage II walks every chunk and samples anchors from three pools: the
//! chunk's atomic facts (up to `m_a`), its questions (up to `m_q`), and up
//! to `m_e` synthetic sentences mentioning a sample of the chunk's entities.
//! Each anchor pairs with the chunk text as its positive. Stage III makes
//! the dataset cross-lingual: Greek anchors gain an English translation,
//! and anchors from corpora flagged for it gain a Greek translation.
//! Positives are never translated, and native pairs are always retained.
//!
//! # Reproducibility
//!
//! Sampling uses ChaCha20 seeded per chunk from SHA-256(seed, chunk_id), so
//! a chunk's sample depends only on the seed and its own pools: adding or
//! removing other documents cannot perturb it. Selection without
//! replacement is a partial Fisher-Yates shuffle with rejection-sampled
//! uniform indices, all spelled out here rather than delegated, so output
//! is identical across platforms and library versions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{with_retries, BackendError, RetryPolicy};
use crate::extract::EntityMention;
use crate::jsonl::{self, JsonlError};
use crate::kg::{EdgeKind, KgError, KgNode, KnowledgeGraph, NodeKind};
use crate::util;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PairGenError {
    #[error("invalid pair generation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error("node {node} is missing attribute {attr}")]
    MissingAttr { node: String, attr: String },
    #[error("pair violates invariant: {0}")]
    Invariant(String),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: missing dataset header")]
    MissingHeader { path: PathBuf },
    #[error("{path}: dataset format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairGenConfig {
    /// Atomic-fact anchors sampled per chunk.
    pub m_a: usize,
    /// Question anchors sampled per chunk.
    pub m_q: usize,
    /// Entity-sentence anchors composed per chunk.
    pub m_e: usize,
    /// Entities mentioned per synthetic sentence.
    pub entities_per_sentence: usize,
    /// Master seed for the per-chunk sampling substreams.
    pub rng_seed: u64,
}

impl Default for PairGenConfig {
    fn default() -> Self {
        PairGenConfig {
            m_a: 2,
            m_q: 1,
            m_e: 1,
            entities_per_sentence: 5,
            rng_seed: 0,
        }
    }
}

impl PairGenConfig {
    pub fn validate(&self) -> Result<(), PairGenError> {
        if self.m_a + self.m_q + self.m_e == 0 {
            return Err(PairGenError::InvalidConfig(
                "at least one of m_a, m_q, m_e must be positive".into(),
            ));
        }
        if self.entities_per_sentence < 2 {
            return Err(PairGenError::InvalidConfig(
                "entities_per_sentence must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorKind {
    AtomicFact,
    Question,
    EntitySentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairOrigin {
    Native,
    Translated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairStage {
    Stage2,
    Stage3,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub anchor: String,
    pub anchor_kind: AnchorKind,
    pub anchor_lang: String,
    pub positive: String,
    pub positive_chunk_id: String,
    pub positive_lang: String,
    pub origin: PairOrigin,
    pub source_doc: String,
    pub stage: PairStage,
}

impl TrainingPair {
    fn dedup_key(&self) -> (String, String, String) {
        (
            self.anchor.clone(),
            self.positive_chunk_id.clone(),
            self.anchor_lang.clone(),
        )
    }

    fn check_invariants(&self) -> Result<(), PairGenError> {
        if self.anchor.is_empty() || self.positive.is_empty() {
            return Err(PairGenError::Invariant("empty anchor or positive text".into()));
        }
        if self.origin == PairOrigin::Translated && self.anchor_lang == self.positive_lang {
            return Err(PairGenError::Invariant(format!(
                "translated pair for chunk {} keeps anchor language {}",
                self.positive_chunk_id, self.anchor_lang
            )));
        }
        Ok(())
    }
}

/// Why a candidate pair was not added.
#[derive(Debug, Clone, Serialize)]
pub struct DroppedPair {
    pub reason: String,
    pub anchor: String,
    pub positive_chunk_id: String,
}

#[derive(Debug, PartialEq)]
pub enum PushOutcome {
    Added,
    DuplicateDropped,
    DegenerateDropped,
}

/// An ordered, deduplicated collection of training pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingDataset {
    pairs: Vec<TrainingPair>,
    seen: BTreeSet<(String, String, String)>,
}

impl TrainingDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Add a pair, enforcing hard invariants and soft-dropping exact
    /// duplicates ((anchor, positive_chunk_id, anchor_lang)) and degenerate
    /// pairs whose anchor equals their positive.
    pub fn push(&mut self, pair: TrainingPair) -> Result<PushOutcome, PairGenError> {
        pair.check_invariants()?;
        if pair.anchor == pair.positive {
            return Ok(PushOutcome::DegenerateDropped);
        }
        if !self.seen.insert(pair.dedup_key()) {
            return Ok(PushOutcome::DuplicateDropped);
        }
        self.pairs.push(pair);
        Ok(PushOutcome::Added)
    }
}

/// Seed a chunk-local sampling stream. The master seed and the chunk id are
/// hashed together, so every chunk owns an independent substream.
pub fn chunk_rng(seed: u64, chunk_id: &str) -> ChaCha20Rng {
    let digest = util::sha256_bytes(&[&seed.to_le_bytes(), chunk_id.as_bytes()]);
    ChaCha20Rng::from_seed(digest)
}

/// Uniform draw in `[0, bound)` by rejection: values at the top of the u64
/// range that would bias the modulus are re-drawn.
fn uniform_index(rng: &mut ChaCha20Rng, bound: usize) -> usize {
    debug_assert!(bound > 0);
    let bound = bound as u64;
    let limit = u64::MAX - u64::MAX % bound;
    loop {
        let v = rng.next_u64();
        if v < limit {
            return (v % bound) as usize;
        }
    }
}

/// Sample `k` distinct indices from `0..n` by partial Fisher-Yates: swap a
/// uniformly chosen remaining element into each successive position. The
/// returned order is the selection order.
pub fn sample_without_replacement(rng: &mut ChaCha20Rng, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let k = k.min(n);
    for i in 0..k {
        let j = i + uniform_index(rng, n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Optional generative backend for entity sentences.
pub trait SentenceBackend: Send + Sync {
    fn id(&self) -> &str;
    fn compose(&self, entities: &[EntityMention], language: &str) -> Result<String, BackendError>;
}

/// Deterministic template sentence mentioning every entity, used directly
/// or as the fallback when a backend's output fails validation.
pub fn template_sentence(entities: &[EntityMention], language: &str) -> String {
    let names: Vec<&str> = entities.iter().map(|e| e.name.as_str()).collect();
    let joined = match names.split_last() {
        None => String::new(),
        Some((last, rest)) if rest.is_empty() => (*last).to_string(),
        Some((last, rest)) => {
            let conj = if language == "el" { "και" } else { "and" };
            format!("{} {} {}", rest.join(", "), conj, last)
        }
    };
    if language == "el" {
        format!("Το κείμενο αναφέρεται σε {joined}.")
    } else {
        format!("The passage mentions {joined}.")
    }
}

/// Compose a sentence that mentions every given entity. A backend's output
/// is accepted only when it actually contains each entity name; otherwise
/// (or on backend failure) the template is used and the fallback is
/// reported as `true`.
pub fn generate_entity_sentence(
    entities: &[EntityMention],
    language: &str,
    backend: Option<&dyn SentenceBackend>,
) -> (String, bool) {
    if let Some(backend) = backend {
        match backend.compose(entities, language) {
            Ok(sentence) => {
                let complete = entities.iter().all(|e| sentence.contains(&e.name));
                if complete && !sentence.trim().is_empty() {
                    return (sentence, false);
                }
            }
            Err(_) => {}
        }
        (template_sentence(entities, language), true)
    } else {
        (template_sentence(entities, language), false)
    }
}

/// One sampled anchor before pairing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anchor {
    pub text: String,
    pub kind: AnchorKind,
    pub lang: String,
}

fn node_texts(nodes: &[&KgNode]) -> Vec<(String, String)> {
    nodes.iter().map(|n| (n.text.clone(), n.language.clone())).collect()
}

/// Stage II sampling for one chunk: `min(m_a, |facts|)` facts, then
/// `min(m_q, |questions|)` questions, then up to `m_e` entity sentences.
/// Entity sentences draw `entities_per_sentence` entities each (all of them
/// when the chunk has fewer, and none at all when it has fewer than two).
/// The random stream is consumed in exactly that order.
pub fn sample_anchors(
    graph: &KnowledgeGraph,
    chunk_id: &str,
    cfg: &PairGenConfig,
    sentence_backend: Option<&dyn SentenceBackend>,
) -> Result<Vec<Anchor>, PairGenError> {
    cfg.validate()?;
    let chunk = graph
        .node(chunk_id)
        .ok_or_else(|| PairGenError::Kg(KgError::UnknownNode { id: chunk_id.to_string() }))?;
    let facts = node_texts(&graph.linked(chunk_id, EdgeKind::HasAtomicFact)?);
    let questions = node_texts(&graph.linked(chunk_id, EdgeKind::HasQuestion)?);
    let entity_nodes = graph.linked(chunk_id, EdgeKind::HasEntity)?;
    let entities: Vec<EntityMention> = entity_nodes
        .iter()
        .map(|n| {
            Ok(EntityMention {
                name: n.text.clone(),
                entity_type: n
                    .attrs
                    .get("entity_type")
                    .cloned()
                    .ok_or_else(|| PairGenError::MissingAttr {
                        node: n.node_id.clone(),
                        attr: "entity_type".into(),
                    })?,
            })
        })
        .collect::<Result<_, PairGenError>>()?;

    let mut rng = chunk_rng(cfg.rng_seed, chunk_id);
    let mut anchors = Vec::new();

    for idx in sample_without_replacement(&mut rng, facts.len(), cfg.m_a) {
        let (text, lang) = facts[idx].clone();
        anchors.push(Anchor { text, kind: AnchorKind::AtomicFact, lang });
    }
    for idx in sample_without_replacement(&mut rng, questions.len(), cfg.m_q) {
        let (text, lang) = questions[idx].clone();
        anchors.push(Anchor { text, kind: AnchorKind::Question, lang });
    }
    if entities.len() >= 2 {
        for _ in 0..cfg.m_e {
            let take = cfg.entities_per_sentence.min(entities.len());
            let chosen: Vec<EntityMention> = sample_without_replacement(&mut rng, entities.len(), take)
                .into_iter()
                .map(|i| entities[i].clone())
                .collect();
            let (text, _fallback) = generate_entity_sentence(&chosen, &chunk.language, sentence_backend);
            anchors.push(Anchor {
                text,
                kind: AnchorKind::EntitySentence,
                lang: chunk.language.clone(),
            });
        }
    }
    Ok(anchors)
}

#[derive(Debug, Default)]
pub struct PairGenReport {
    pub dataset: TrainingDataset,
    pub dropped: Vec<DroppedPair>,
}

/// Stage II over the whole graph: chunks are visited in id order (document
/// id, then ordinal) and each sampled anchor pairs with its chunk text.
pub fn generate_pairs(
    graph: &KnowledgeGraph,
    cfg: &PairGenConfig,
    sentence_backend: Option<&dyn SentenceBackend>,
) -> Result<PairGenReport, PairGenError> {
    cfg.validate()?;
    let mut report = PairGenReport::default();
    let chunk_ids: Vec<String> = graph
        .nodes_of_kind(NodeKind::Chunk)
        .map(|n| n.node_id.clone())
        .collect();
    for chunk_id in chunk_ids {
        let chunk = graph.node(&chunk_id).expect("listed chunk exists");
        let doc_id = chunk
            .attrs
            .get("doc_id")
            .cloned()
            .ok_or_else(|| PairGenError::MissingAttr {
                node: chunk_id.clone(),
                attr: "doc_id".into(),
            })?;
        let positive = chunk.text.clone();
        let positive_lang = chunk.language.clone();
        for anchor in sample_anchors(graph, &chunk_id, cfg, sentence_backend)? {
            let pair = TrainingPair {
                anchor: anchor.text,
                anchor_kind: anchor.kind,
                anchor_lang: anchor.lang,
                positive: positive.clone(),
                positive_chunk_id: chunk_id.clone(),
                positive_lang: positive_lang.clone(),
                origin: PairOrigin::Native,
                source_doc: doc_id.clone(),
                stage: PairStage::Stage2,
            };
            record_push(&mut report, pair)?;
        }
    }
    Ok(report)
}

fn record_push(report: &mut PairGenReport, pair: TrainingPair) -> Result<(), PairGenError> {
    let (anchor, chunk) = (pair.anchor.clone(), pair.positive_chunk_id.clone());
    match report.dataset.push(pair)? {
        PushOutcome::Added => {}
        PushOutcome::DuplicateDropped => report.dropped.push(DroppedPair {
            reason: "duplicate (anchor, positive_chunk_id, anchor_lang)".into(),
            anchor,
            positive_chunk_id: chunk,
        }),
        PushOutcome::DegenerateDropped => report.dropped.push(DroppedPair {
            reason: "anchor text equals positive text".into(),
            anchor,
            positive_chunk_id: chunk,
        }),
    }
    Ok(())
}

/// Text-to-text translation backend.
pub trait TranslatorBackend: Send + Sync {
    fn id(&self) -> &str;
    fn translate(&self, text: &str, source_lang: &str, target_lang: &str)
        -> Result<String, BackendError>;
}

/// Deterministic stand-in translator: tags the text with the target
/// language instead of translating. The mock embedder strips these tags, so
/// a tagged anchor and its source embed identically.
#[derive(Debug, Clone, Default)]
pub struct MockTranslator;

impl TranslatorBackend for MockTranslator {
    fn id(&self) -> &str {
        "mock"
    }

    fn translate(&self, text: &str, _source_lang: &str, target_lang: &str)
        -> Result<String, BackendError> {
        match target_lang {
            "en" => Ok(format!("[EN] {text}")),
            "el" => Ok(format!("[EL] {text}")),
            other => Err(BackendError::Rejected(format!(
                "mock translator has no target language {other:?}"
            ))),
        }
    }
}

/// Which native pairs gain a Greek translation in Stage III. Greek-anchor
/// pairs always gain an English one; the reverse direction applies only to
/// documents from corpora flagged for it (the query-bearing English path).
#[derive(Debug, Clone)]
pub struct AugmentPolicy {
    pub greek: String,
    pub english: String,
    pub to_greek_docs: BTreeSet<String>,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            greek: "el".into(),
            english: "en".into(),
            to_greek_docs: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Default)]
pub struct AugmentReport {
    pub dataset: TrainingDataset,
    pub dropped: Vec<DroppedPair>,
    pub translation_failures: Vec<DroppedPair>,
}

/// Stage III: retain every native pair, then append the translated-anchor
/// pairs (Greek-to-English first, then flagged English-to-Greek, each in
/// native order). Positives are untouched. A translator failure skips that
/// pair and reports it.
pub fn augment_cross_lingual(
    dataset: &TrainingDataset,
    translator: &dyn TranslatorBackend,
    policy: &AugmentPolicy,
    retry: &RetryPolicy,
) -> Result<AugmentReport, PairGenError> {
    let mut report = AugmentReport::default();
    for pair in dataset.pairs() {
        record_augment_push(&mut report, pair.clone())?;
    }

    let natives: Vec<TrainingPair> = dataset
        .pairs()
        .iter()
        .filter(|p| p.origin == PairOrigin::Native)
        .cloned()
        .collect();

    let translate = |report: &mut AugmentReport, pair: &TrainingPair, target: &str| -> Result<(), PairGenError> {
        let outcome = with_retries(retry, |_| {
            translator.translate(&pair.anchor, &pair.anchor_lang, target)
        });
        match outcome {
            Ok((translated, _)) => {
                let new_pair = TrainingPair {
                    anchor: translated,
                    anchor_lang: target.to_string(),
                    origin: PairOrigin::Translated,
                    stage: PairStage::Stage3,
                    ..pair.clone()
                };
                record_augment_push(report, new_pair)?;
            }
            Err(exhausted) => report.translation_failures.push(DroppedPair {
                reason: format!("translation to {target} failed: {}", exhausted.last_error),
                anchor: pair.anchor.clone(),
                positive_chunk_id: pair.positive_chunk_id.clone(),
            }),
        }
        Ok(())
    };

    for pair in natives.iter().filter(|p| p.anchor_lang == policy.greek) {
        translate(&mut report, pair, &policy.english.clone())?;
    }
    for pair in natives.iter().filter(|p| {
        p.anchor_lang == policy.english && policy.to_greek_docs.contains(&p.source_doc)
    }) {
        translate(&mut report, pair, &policy.greek.clone())?;
    }
    Ok(report)
}

fn record_augment_push(report: &mut AugmentReport, pair: TrainingPair) -> Result<(), PairGenError> {
    let (anchor, chunk) = (pair.anchor.clone(), pair.positive_chunk_id.clone());
    match report.dataset.push(pair)? {
        PushOutcome::Added => {}
        PushOutcome::DuplicateDropped => report.dropped.push(DroppedPair {
            reason: "duplicate (anchor, positive_chunk_id, anchor_lang)".into(),
            anchor,
            positive_chunk_id: chunk,
        }),
        PushOutcome::DegenerateDropped => report.dropped.push(DroppedPair {
            reason: "anchor text equals positive text".into(),
            anchor,
            positive_chunk_id: chunk,
        }),
    }
    Ok(())
}

/// Header record leading a dataset file: format version, the generating
/// config, the fingerprint of the graph it came from, and free-form
/// manifest entries (config hash, input fingerprints).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub pairgen: PairGenConfig,
    pub kg_fingerprint: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub manifest: BTreeMap<String, String>,
}

/// Write a dataset as JSONL: header first, then one pair per line.
pub fn save_dataset(
    path: &Path,
    dataset: &TrainingDataset,
    header: &DatasetHeader,
) -> Result<(), PairGenError> {
    let mut buf = serde_json::to_string(header).expect("header serializes");
    buf.push('\n');
    buf.push_str(&jsonl::to_lines(dataset.pairs()).expect("pairs serialize"));
    std::fs::write(path, buf).map_err(|source| PairGenError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a dataset file, re-validating every pair invariant on the way in.
pub fn load_dataset(path: &Path) -> Result<(DatasetHeader, TrainingDataset), PairGenError> {
    let mut lines = jsonl::read_records::<serde_json::Value>(path)?;
    let header_line = lines.next().ok_or_else(|| PairGenError::MissingHeader {
        path: path.to_path_buf(),
    })??;
    let header: DatasetHeader = serde_json::from_value(header_line.value).map_err(|e| {
        PairGenError::Jsonl(JsonlError::Malformed {
            path: path.to_path_buf(),
            line: header_line.line,
            message: format!("bad dataset header: {e}"),
        })
    })?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(PairGenError::VersionMismatch {
            path: path.to_path_buf(),
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    let mut dataset = TrainingDataset::new();
    for item in lines {
        let located = item?;
        let pair: TrainingPair = serde_json::from_value(located.value).map_err(|e| {
            PairGenError::Jsonl(JsonlError::Malformed {
                path: path.to_path_buf(),
                line: located.line,
                message: e.to_string(),
            })
        })?;
        if dataset.push(pair)? != PushOutcome::Added {
            return Err(PairGenError::Invariant(format!(
                "{}: line {} duplicates an earlier pair or repeats its positive",
                path.display(),
                located.line
            )));
        }
    }
    Ok((header, dataset))
}
