//! Chunk-level extraction of entities, relations, atomic facts, and
//! questions, plus the orchestration that maps extraction output into the
//! knowledge graph.
//!
//! Extraction runs behind the [`ExtractorBackend`] trait. The shipped
//! [`MockExtractor`] is fully deterministic so end-to-end runs are
//! reproducible without network access; a remote LLM-backed client lives in
//! [`crate::remote`].
//!
//! Failed chunks degrade instead of failing the build: after the retry
//! budget is spent the chunk keeps its document and chunk nodes, gets no
//! extraction nodes, and is reported in the build's degradation list.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{with_retries, BackendError, RetryPolicy};
use crate::corpus::{chunk_document, ChunkRecord, ChunkingConfig, CorpusError, DocumentRecord};
use crate::kg::{
    entity_node_id, fact_node_id, question_node_id, EdgeKind, KgEdge, KgError, KgNode,
    KnowledgeGraph, NodeKind, OntologySchema,
};
use crate::util;

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("chunk {chunk_id}: precondition violated: {reason}")]
    Precondition { chunk_id: String, reason: String },
    #[error("chunk {chunk_id}: extractor exhausted after {attempts} attempts: {last_error}")]
    BackendExhausted {
        chunk_id: String,
        attempts: u32,
        last_error: BackendError,
    },
    #[error("invalid extraction payload: {0}")]
    InvalidPayload(String),
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub name: String,
    pub entity_type: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTriple {
    pub subject: String,
    pub label: String,
    pub object: String,
}

/// What one chunk yields. Lists are deduplicated and relation endpoints are
/// guaranteed to appear among the entities once [`normalize`] has run.
///
/// [`normalize`]: ExtractionResult::normalize
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionResult {
    #[serde(default)]
    pub entities: Vec<EntityMention>,
    #[serde(default)]
    pub relations: Vec<RelationTriple>,
    #[serde(default)]
    pub atomic_facts: Vec<String>,
    #[serde(default)]
    pub questions: Vec<String>,
}

impl ExtractionResult {
    /// Canonicalize and validate: entity names and relation endpoints are
    /// trimmed and casefolded (canonicalization happens here, in one place,
    /// for every backend), duplicates collapse keeping first occurrence,
    /// and empty strings or dangling relation endpoints are rejected.
    pub fn normalize(mut self) -> Result<Self, ExtractError> {
        let mut entities: Vec<EntityMention> = Vec::new();
        for e in &self.entities {
            let name = e.name.trim().to_lowercase();
            let entity_type = e.entity_type.trim().to_string();
            if name.is_empty() {
                return Err(ExtractError::InvalidPayload("empty entity name".into()));
            }
            if entity_type.is_empty() {
                return Err(ExtractError::InvalidPayload(format!(
                    "entity {name:?} has an empty type"
                )));
            }
            let mention = EntityMention { name, entity_type };
            if !entities.contains(&mention) {
                entities.push(mention);
            }
        }

        let mut relations: Vec<RelationTriple> = Vec::new();
        for r in &self.relations {
            let triple = RelationTriple {
                subject: r.subject.trim().to_lowercase(),
                label: r.label.trim().to_string(),
                object: r.object.trim().to_lowercase(),
            };
            if triple.label.is_empty() {
                return Err(ExtractError::InvalidPayload("relation with empty label".into()));
            }
            for endpoint in [&triple.subject, &triple.object] {
                if !entities.iter().any(|e| e.name == *endpoint) {
                    return Err(ExtractError::InvalidPayload(format!(
                        "relation endpoint {endpoint:?} does not appear among the entities"
                    )));
                }
            }
            if !relations.contains(&triple) {
                relations.push(triple);
            }
        }

        let mut atomic_facts: Vec<String> = Vec::new();
        for f in &self.atomic_facts {
            let fact = f.trim().to_string();
            if fact.is_empty() {
                return Err(ExtractError::InvalidPayload("empty atomic fact".into()));
            }
            if !atomic_facts.contains(&fact) {
                atomic_facts.push(fact);
            }
        }

        let mut questions: Vec<String> = Vec::new();
        for q in &self.questions {
            let question = q.trim().to_string();
            if question.is_empty() {
                return Err(ExtractError::InvalidPayload("empty question".into()));
            }
            if !questions.contains(&question) {
                questions.push(question);
            }
        }

        self.entities = entities;
        self.relations = relations;
        self.atomic_facts = atomic_facts;
        self.questions = questions;
        Ok(self)
    }
}

/// A chunk-level extraction engine.
pub trait ExtractorBackend: Send + Sync {
    /// Stable identifier recorded in manifests.
    fn id(&self) -> &str;

    /// Whether repeated calls on the same input return the same output.
    fn deterministic(&self) -> bool {
        false
    }

    /// Longest input (in characters) the backend accepts, if bounded.
    fn max_input_chars(&self) -> Option<usize> {
        None
    }

    fn extract(&self, text: &str, language: &str) -> Result<ExtractionResult, BackendError>;
}

/// Deterministic rule-based extractor for hermetic runs.
///
/// Rules, applied per sentence (sentences split on `.`, `!`, `?`, `;`):
/// * entities are maximal runs of capitalized tokens, except that a run may
///   not begin at the sentence's first token (sentence-initial capitals are
///   positional); names are casefolded and typed `"named"`;
/// * a copular sentence (one containing `είναι`, `is`, or `are`) also
///   yields its final token, casefolded, as an entity;
/// * the first entity co-occurs with every other entity;
/// * each sentence is one atomic fact, terminal punctuation included;
/// * each copular sentence yields one template question about its
///   final-token entity; a chunk with entities but no copular sentence gets
///   one template question about its first entity.
#[derive(Debug, Clone, Default)]
pub struct MockExtractor {
    /// Optional input cap, for exercising capability preconditions.
    pub max_chars: Option<usize>,
}

impl MockExtractor {
    pub fn new() -> Self {
        Self::default()
    }
}

pub(crate) fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        current.push(ch);
        if matches!(ch, '.' | '!' | '?' | ';') {
            let t = current.trim();
            if !t.is_empty() {
                sentences.push(t.to_string());
            }
            current.clear();
        }
    }
    let t = current.trim();
    if !t.is_empty() {
        sentences.push(t.to_string());
    }
    sentences
}

fn clean_token(tok: &str) -> &str {
    tok.trim_matches(|c: char| !c.is_alphanumeric())
}

fn is_capitalized(tok: &str) -> bool {
    tok.chars().next().is_some_and(char::is_uppercase)
}

/// The question template used for generated questions; Greek gets the Greek
/// question mark (the semicolon glyph), everything else gets English.
pub fn question_template(entity: &str, language: &str) -> String {
    if language == "el" {
        format!("Τι αναφέρεται για {entity};")
    } else {
        format!("What is stated about {entity}?")
    }
}

impl ExtractorBackend for MockExtractor {
    fn id(&self) -> &str {
        "mock"
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn max_input_chars(&self) -> Option<usize> {
        self.max_chars
    }

    fn extract(&self, text: &str, language: &str) -> Result<ExtractionResult, BackendError> {
        let mut entities: Vec<EntityMention> = Vec::new();
        let mut questions: Vec<String> = Vec::new();
        let mut atomic_facts: Vec<String> = Vec::new();

        let push_entity = |entities: &mut Vec<EntityMention>, name: String| {
            let mention = EntityMention {
                name,
                entity_type: "named".to_string(),
            };
            if !entities.contains(&mention) {
                entities.push(mention);
            }
        };

        for sentence in split_sentences(text) {
            let tokens: Vec<String> = sentence
                .split_whitespace()
                .map(clean_token)
                .filter(|t| !t.is_empty())
                .map(str::to_string)
                .collect();

            let mut i = 1;
            while i < tokens.len() {
                if is_capitalized(&tokens[i]) {
                    let start = i;
                    while i < tokens.len() && is_capitalized(&tokens[i]) {
                        i += 1;
                    }
                    push_entity(&mut entities, tokens[start..i].join(" ").to_lowercase());
                } else {
                    i += 1;
                }
            }

            let copular = tokens.iter().any(|t| {
                let l = t.to_lowercase();
                l == "είναι" || l == "is" || l == "are"
            });
            if copular {
                if let Some(last) = tokens.last() {
                    let name = last.to_lowercase();
                    push_entity(&mut entities, name.clone());
                    questions.push(question_template(&name, language));
                }
            }

            atomic_facts.push(sentence);
        }

        if questions.is_empty() {
            if let Some(first) = entities.first() {
                questions.push(question_template(&first.name, language));
            }
        }

        let relations = match entities.split_first() {
            Some((head, rest)) if !rest.is_empty() => rest
                .iter()
                .map(|e| RelationTriple {
                    subject: head.name.clone(),
                    label: "co_occurs_with".to_string(),
                    object: e.name.clone(),
                })
                .collect(),
            _ => Vec::new(),
        };

        Ok(ExtractionResult {
            entities,
            relations,
            atomic_facts,
            questions,
        })
    }
}

/// Run one chunk through a backend with retries, returning the normalized
/// result. Empty input and capability overruns are precondition errors and
/// never reach the backend.
pub fn extract_chunk(
    chunk: &ChunkRecord,
    backend: &dyn ExtractorBackend,
    retry: &RetryPolicy,
) -> Result<ExtractionResult, ExtractError> {
    if chunk.text.trim().is_empty() {
        return Err(ExtractError::Precondition {
            chunk_id: chunk.chunk_id.clone(),
            reason: "chunk text is empty".into(),
        });
    }
    if let Some(cap) = backend.max_input_chars() {
        let len = chunk.text.chars().count();
        if len > cap {
            return Err(ExtractError::Precondition {
                chunk_id: chunk.chunk_id.clone(),
                reason: format!("chunk is {len} chars but backend {:?} accepts {cap}", backend.id()),
            });
        }
    }
    let outcome = with_retries(retry, |_| {
        backend
            .extract(&chunk.text, &chunk.language)?
            .normalize()
            .map_err(|e| BackendError::Malformed(e.to_string()))
    });
    match outcome {
        Ok((result, _attempts)) => Ok(result),
        Err(exhausted) => Err(ExtractError::BackendExhausted {
            chunk_id: chunk.chunk_id.clone(),
            attempts: exhausted.attempts,
            last_error: exhausted.last_error,
        }),
    }
}

/// A chunk that spent its retry budget (or failed a precondition) and was
/// skipped; serialized into the degradation log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DegradedChunk {
    pub chunk_id: String,
    pub attempts: u32,
    pub last_error: String,
}

#[derive(Debug, Clone)]
pub struct KgBuildConfig {
    pub chunking: ChunkingConfig,
    pub retry: RetryPolicy,
    /// Maximum concurrent extraction calls.
    pub jobs: usize,
}

impl Default for KgBuildConfig {
    fn default() -> Self {
        KgBuildConfig {
            chunking: ChunkingConfig::default(),
            retry: RetryPolicy::default(),
            jobs: 1,
        }
    }
}

/// Per-corpus build options.
#[derive(Debug, Clone, Default)]
pub struct CorpusOptions {
    /// Corpus ships its own retrieval queries: they become the Question
    /// nodes (attached to the document's first chunk) and generated
    /// questions are not used.
    pub query_bearing: bool,
}

#[derive(Debug)]
pub struct BuildReport {
    pub graph: KnowledgeGraph,
    pub degraded: Vec<DegradedChunk>,
    pub documents: usize,
    pub chunks: usize,
}

/// Incremental graph construction over one or more corpora.
pub struct KgBuilder {
    cfg: KgBuildConfig,
    graph: KnowledgeGraph,
    degraded: Vec<DegradedChunk>,
    documents: usize,
    chunks: usize,
}

impl KgBuilder {
    pub fn new(schema: OntologySchema, cfg: KgBuildConfig) -> Self {
        KgBuilder {
            cfg,
            graph: KnowledgeGraph::new(schema),
            degraded: Vec::new(),
            documents: 0,
            chunks: 0,
        }
    }

    /// Chunk every document, extract concurrently (up to `jobs` in flight),
    /// then integrate results serially in (doc_id, ordinal) order so the
    /// resulting graph is identical whatever the scheduling.
    pub fn add_corpus(
        &mut self,
        docs: impl IntoIterator<Item = DocumentRecord>,
        backend: &dyn ExtractorBackend,
        opts: &CorpusOptions,
    ) -> Result<(), ExtractError> {
        let mut docs: Vec<DocumentRecord> = docs.into_iter().collect();
        docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));

        let mut all_chunks: Vec<ChunkRecord> = Vec::new();
        let mut per_doc: Vec<(DocumentRecord, std::ops::Range<usize>)> = Vec::new();
        for doc in docs {
            let chunks = chunk_document(&doc, &self.cfg.chunking)?;
            let start = all_chunks.len();
            all_chunks.extend(chunks);
            per_doc.push((doc, start..all_chunks.len()));
        }

        let extractions = extract_all(&all_chunks, backend, &self.cfg.retry, self.cfg.jobs);

        for (doc, range) in &per_doc {
            self.documents += 1;
            self.graph.add_node(
                KgNode::new(doc.doc_id.clone(), NodeKind::Document, doc.title.clone(), doc.language.clone())
                    .with_attr("source", doc.source.clone())
                    .with_attr("query_bearing", opts.query_bearing.to_string()),
            )?;
            for idx in range.clone() {
                let chunk = &all_chunks[idx];
                self.chunks += 1;
                self.graph.add_node(
                    KgNode::new(chunk.chunk_id.clone(), NodeKind::Chunk, chunk.text.clone(), chunk.language.clone())
                        .with_attr("doc_id", chunk.doc_id.clone())
                        .with_attr("ordinal", chunk.ordinal.to_string())
                        .with_attr("span_start", chunk.span_start.to_string())
                        .with_attr("span_end", chunk.span_end.to_string()),
                )?;
                self.graph.add_edge(KgEdge::new(
                    doc.doc_id.clone(),
                    EdgeKind::HasChunk,
                    chunk.chunk_id.clone(),
                ))?;

                match &extractions[idx] {
                    Ok(result) => {
                        self.integrate(doc, chunk, result, opts)?;
                    }
                    Err(ExtractError::BackendExhausted { chunk_id, attempts, last_error }) => {
                        self.degraded.push(DegradedChunk {
                            chunk_id: chunk_id.clone(),
                            attempts: *attempts,
                            last_error: last_error.to_string(),
                        });
                    }
                    Err(ExtractError::Precondition { chunk_id, reason }) => {
                        self.degraded.push(DegradedChunk {
                            chunk_id: chunk_id.clone(),
                            attempts: 0,
                            last_error: reason.clone(),
                        });
                    }
                    Err(other) => {
                        return Err(ExtractError::InvalidPayload(other.to_string()));
                    }
                }
            }

            if opts.query_bearing && !doc.queries.is_empty() {
                let first_chunk = util::chunk_id(&doc.doc_id, 0);
                for query in &doc.queries {
                    let qid = question_node_id(query, &first_chunk);
                    self.graph.add_node(KgNode::new(
                        qid.clone(),
                        NodeKind::Question,
                        query.clone(),
                        doc.language.clone(),
                    ))?;
                    self.graph.add_edge(KgEdge::new(
                        first_chunk.clone(),
                        EdgeKind::HasQuestion,
                        qid,
                    ))?;
                }
            }
        }
        Ok(())
    }

    fn integrate(
        &mut self,
        doc: &DocumentRecord,
        chunk: &ChunkRecord,
        result: &ExtractionResult,
        opts: &CorpusOptions,
    ) -> Result<(), ExtractError> {
        let scope = format!("{}:{}", doc.source, chunk.language);
        let mut entity_ids: Vec<(String, String)> = Vec::new();
        for entity in &result.entities {
            let id = entity_node_id(&entity.name, &entity.entity_type, &scope);
            self.graph.add_node(
                KgNode::new(id.clone(), NodeKind::Entity, entity.name.clone(), chunk.language.clone())
                    .with_attr("entity_type", entity.entity_type.clone()),
            )?;
            self.graph.add_edge(KgEdge::new(
                chunk.chunk_id.clone(),
                EdgeKind::HasEntity,
                id.clone(),
            ))?;
            entity_ids.push((entity.name.clone(), id));
        }

        for fact in &result.atomic_facts {
            let id = fact_node_id(fact, &chunk.chunk_id);
            self.graph.add_node(KgNode::new(
                id.clone(),
                NodeKind::AtomicFact,
                fact.clone(),
                chunk.language.clone(),
            ))?;
            self.graph.add_edge(KgEdge::new(
                chunk.chunk_id.clone(),
                EdgeKind::HasAtomicFact,
                id,
            ))?;
        }

        if !opts.query_bearing {
            for question in &result.questions {
                let id = question_node_id(question, &chunk.chunk_id);
                self.graph.add_node(KgNode::new(
                    id.clone(),
                    NodeKind::Question,
                    question.clone(),
                    chunk.language.clone(),
                ))?;
                self.graph.add_edge(KgEdge::new(
                    chunk.chunk_id.clone(),
                    EdgeKind::HasQuestion,
                    id,
                ))?;
            }
        }

        for relation in &result.relations {
            let src = entity_ids
                .iter()
                .find(|(name, _)| *name == relation.subject)
                .map(|(_, id)| id.clone())
                .ok_or_else(|| ExtractError::InvalidPayload(format!(
                    "relation subject {:?} missing from entity list",
                    relation.subject
                )))?;
            let dst = entity_ids
                .iter()
                .find(|(name, _)| *name == relation.object)
                .map(|(_, id)| id.clone())
                .ok_or_else(|| ExtractError::InvalidPayload(format!(
                    "relation object {:?} missing from entity list",
                    relation.object
                )))?;
            self.graph.add_edge(KgEdge::labeled(
                src,
                EdgeKind::Relation,
                dst,
                relation.label.clone(),
            ))?;
        }
        Ok(())
    }

    pub fn finish(self) -> BuildReport {
        BuildReport {
            graph: self.graph,
            degraded: self.degraded,
            documents: self.documents,
            chunks: self.chunks,
        }
    }
}

/// One-corpus convenience over [`KgBuilder`].
pub fn build_knowledge_graph(
    docs: impl IntoIterator<Item = DocumentRecord>,
    backend: &dyn ExtractorBackend,
    schema: OntologySchema,
    cfg: KgBuildConfig,
    opts: &CorpusOptions,
) -> Result<BuildReport, ExtractError> {
    let mut builder = KgBuilder::new(schema, cfg);
    builder.add_corpus(docs, backend, opts)?;
    Ok(builder.finish())
}

fn extract_all(
    chunks: &[ChunkRecord],
    backend: &dyn ExtractorBackend,
    retry: &RetryPolicy,
    jobs: usize,
) -> Vec<Result<ExtractionResult, ExtractError>> {
    let jobs = jobs.max(1).min(chunks.len().max(1));
    if jobs <= 1 || chunks.len() <= 1 {
        return chunks
            .iter()
            .map(|c| extract_chunk(c, backend, retry))
            .collect();
    }
    let slots: Mutex<Vec<Option<Result<ExtractionResult, ExtractError>>>> =
        Mutex::new((0..chunks.len()).map(|_| None).collect());
    let cursor = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                if i >= chunks.len() {
                    break;
                }
                let outcome = extract_chunk(&chunks[i], backend, retry);
                slots.lock().expect("result slot lock")[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .expect("result slot lock")
        .into_iter()
        .map(|slot| slot.expect("every chunk extracted"))
        .collect()
}
