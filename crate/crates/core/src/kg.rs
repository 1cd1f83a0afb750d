//! Typed property graph with a fixed five-concept ontology.
//!
//! Node kinds: `document`, `chunk`, `entity`, `question`, `atomic_fact`.
//! Every edge must match one of the schema rules below; anything else is
//! rejected at insertion time, so a constructed graph is valid by
//! construction.
//!
//! | edge kind        | source   | target      | labeled |
//! |------------------|----------|-------------|---------|
//! | `has_chunk`      | document | chunk       | no      |
//! | `has_entity`     | chunk    | entity      | no      |
//! | `has_atomic_fact`| chunk    | atomic_fact | no      |
//! | `has_question`   | chunk    | question    | no      |
//! | `relation`       | entity   | entity      | yes     |
//!
//! Identifiers are positional for documents and chunks (they mirror the
//! corpus ids) and content-addressed for the extracted kinds, so re-running
//! extraction can never mint a second node for the same entity, fact, or
//! question.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jsonl::{self, JsonlError};
use crate::util;

pub const KG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("node id collision on {id:?}: existing payload {existing}, incoming payload {incoming}")]
    NodeCollision {
        id: String,
        existing: String,
        incoming: String,
    },
    #[error("edge references unknown node {id:?}")]
    UnknownNode { id: String },
    #[error("edge {kind} from {src:?} to {dst:?} violates rule {rule}: {reason}")]
    RuleViolation {
        kind: EdgeKind,
        src: String,
        dst: String,
        rule: String,
        reason: String,
    },
    #[error("no schema rule for edge kind {kind}")]
    UnknownEdgeKind { kind: EdgeKind },
    #[error("chunk {chunk:?} already has parent {existing:?}; rejected second has_chunk from {incoming:?}")]
    SecondParent {
        chunk: String,
        existing: String,
        incoming: String,
    },
    #[error("label rule broken for {kind}: {reason}")]
    LabelRule { kind: EdgeKind, reason: String },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: missing header record")]
    MissingHeader { path: PathBuf },
    #[error("{path}: format version {found}, expected {expected}")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: ontology fingerprint {found} does not match schema fingerprint {expected}")]
    FingerprintMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{path}: header declares {declared} records but file holds {found} (truncated or padded)")]
    CountMismatch {
        path: PathBuf,
        declared: u64,
        found: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Document,
    Chunk,
    Entity,
    Question,
    AtomicFact,
}

impl std::fmt::Display for NodeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            NodeKind::Document => "document",
            NodeKind::Chunk => "chunk",
            NodeKind::Entity => "entity",
            NodeKind::Question => "question",
            NodeKind::AtomicFact => "atomic_fact",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    HasChunk,
    HasEntity,
    HasAtomicFact,
    HasQuestion,
    Relation,
}

impl std::fmt::Display for EdgeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            EdgeKind::HasChunk => "has_chunk",
            EdgeKind::HasEntity => "has_entity",
            EdgeKind::HasAtomicFact => "has_atomic_fact",
            EdgeKind::HasQuestion => "has_question",
            EdgeKind::Relation => "relation",
        };
        f.write_str(s)
    }
}

/// One admissible (edge kind, source kind, target kind) combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct EdgeRule {
    pub kind: EdgeKind,
    pub src: NodeKind,
    pub dst: NodeKind,
    pub labeled: bool,
}

impl std::fmt::Display for EdgeRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {} -> {}", self.kind, self.src, self.dst)
    }
}

/// The ontology: five node kinds and the edge rule table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OntologySchema {
    rules: Vec<EdgeRule>,
}

impl Default for OntologySchema {
    fn default() -> Self {
        Self::standard()
    }
}

impl OntologySchema {
    pub fn standard() -> Self {
        use EdgeKind::*;
        use NodeKind::*;
        OntologySchema {
            rules: vec![
                EdgeRule { kind: HasChunk, src: Document, dst: Chunk, labeled: false },
                EdgeRule { kind: HasEntity, src: Chunk, dst: Entity, labeled: false },
                EdgeRule { kind: HasAtomicFact, src: Chunk, dst: AtomicFact, labeled: false },
                EdgeRule { kind: HasQuestion, src: Chunk, dst: Question, labeled: false },
                EdgeRule { kind: Relation, src: Entity, dst: Entity, labeled: true },
            ],
        }
    }

    pub fn rules(&self) -> &[EdgeRule] {
        &self.rules
    }

    pub fn rule_for(&self, kind: EdgeKind) -> Option<&EdgeRule> {
        self.rules.iter().find(|r| r.kind == kind)
    }

    /// Stable hash of the rule table; persisted files carry it so a graph
    /// can never be silently loaded under a different ontology.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_string(&self.rules).expect("rule table serializes");
        util::sha256_hex(&[canonical.as_bytes()])[..32].to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgNode {
    pub node_id: String,
    pub kind: NodeKind,
    pub text: String,
    pub language: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub attrs: BTreeMap<String, String>,
}

impl KgNode {
    pub fn new(node_id: impl Into<String>, kind: NodeKind, text: impl Into<String>, language: impl Into<String>) -> Self {
        KgNode {
            node_id: node_id.into(),
            kind,
            text: text.into(),
            language: language.into(),
            attrs: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: impl Into<String>) -> Self {
        self.attrs.insert(key.to_string(), value.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct KgEdge {
    pub src: String,
    pub dst: String,
    pub kind: EdgeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl KgEdge {
    pub fn new(src: impl Into<String>, kind: EdgeKind, dst: impl Into<String>) -> Self {
        KgEdge {
            src: src.into(),
            dst: dst.into(),
            kind,
            label: None,
        }
    }

    pub fn labeled(src: impl Into<String>, kind: EdgeKind, dst: impl Into<String>, label: impl Into<String>) -> Self {
        KgEdge {
            src: src.into(),
            dst: dst.into(),
            kind,
            label: Some(label.into()),
        }
    }

    /// Deduplication key.
    fn key(&self) -> (String, EdgeKind, String, Option<String>) {
        (self.src.clone(), self.kind, self.dst.clone(), self.label.clone())
    }
}

/// Content-addressed id for an entity node. `scope` bounds deduplication
/// (one corpus plus language), so the same name in two corpora stays two
/// nodes while repeat mentions inside a corpus merge.
pub fn entity_node_id(canonical_name: &str, entity_type: &str, scope: &str) -> String {
    format!(
        "ent:{}",
        util::short_hash(&[canonical_name.as_bytes(), entity_type.as_bytes(), scope.as_bytes()])
    )
}

/// Content-addressed id for an atomic fact, scoped to its chunk.
pub fn fact_node_id(text: &str, chunk_id: &str) -> String {
    format!("fact:{}", util::short_hash(&[text.as_bytes(), chunk_id.as_bytes()]))
}

/// Content-addressed id for a question, scoped to its chunk.
pub fn question_node_id(text: &str, chunk_id: &str) -> String {
    format!("q:{}", util::short_hash(&[text.as_bytes(), chunk_id.as_bytes()]))
}

type AdjacencyKey = (String, EdgeKind);

/// In-memory graph, valid against its schema by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeGraph {
    schema: OntologySchema,
    nodes: BTreeMap<String, KgNode>,
    edges: BTreeMap<(String, EdgeKind, String, Option<String>), KgEdge>,
    outgoing: BTreeMap<AdjacencyKey, Vec<String>>,
    incoming: BTreeMap<AdjacencyKey, Vec<String>>,
}

impl KnowledgeGraph {
    pub fn new(schema: OntologySchema) -> Self {
        KnowledgeGraph {
            schema,
            nodes: BTreeMap::new(),
            edges: BTreeMap::new(),
            outgoing: BTreeMap::new(),
            incoming: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &OntologySchema {
        &self.schema
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node(&self, id: &str) -> Option<&KgNode> {
        self.nodes.get(id)
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &KgNode> {
        self.nodes.values()
    }

    /// Edges in (src, kind, dst, label) order.
    pub fn edges(&self) -> impl Iterator<Item = &KgEdge> {
        self.edges.values()
    }

    pub fn nodes_of_kind(&self, kind: NodeKind) -> impl Iterator<Item = &KgNode> {
        self.nodes.values().filter(move |n| n.kind == kind)
    }

    /// Insert a node. Returns `true` when newly stored, `false` when an
    /// identical node was already present; a differing payload under the
    /// same id is an error that reports both payloads.
    pub fn add_node(&mut self, node: KgNode) -> Result<bool, KgError> {
        if let Some(existing) = self.nodes.get(&node.node_id) {
            if *existing == node {
                return Ok(false);
            }
            return Err(KgError::NodeCollision {
                id: node.node_id.clone(),
                existing: serde_json::to_string(existing).unwrap_or_default(),
                incoming: serde_json::to_string(&node).unwrap_or_default(),
            });
        }
        self.nodes.insert(node.node_id.clone(), node);
        Ok(true)
    }

    /// Validate an edge against the schema and current graph without
    /// inserting it.
    pub fn validate_edge(&self, edge: &KgEdge) -> Result<(), KgError> {
        let rule = self
            .schema
            .rule_for(edge.kind)
            .ok_or(KgError::UnknownEdgeKind { kind: edge.kind })?;
        if rule.labeled && edge.label.is_none() {
            return Err(KgError::LabelRule {
                kind: edge.kind,
                reason: "label required but absent".into(),
            });
        }
        if !rule.labeled && edge.label.is_some() {
            return Err(KgError::LabelRule {
                kind: edge.kind,
                reason: "label present but not allowed".into(),
            });
        }
        let src = self
            .nodes
            .get(&edge.src)
            .ok_or_else(|| KgError::UnknownNode { id: edge.src.clone() })?;
        let dst = self
            .nodes
            .get(&edge.dst)
            .ok_or_else(|| KgError::UnknownNode { id: edge.dst.clone() })?;
        if src.kind != rule.src || dst.kind != rule.dst {
            return Err(KgError::RuleViolation {
                kind: edge.kind,
                src: edge.src.clone(),
                dst: edge.dst.clone(),
                rule: rule.to_string(),
                reason: format!("got {} -> {}", src.kind, dst.kind),
            });
        }
        if edge.kind == EdgeKind::HasChunk {
            if let Some(parents) = self.incoming.get(&(edge.dst.clone(), EdgeKind::HasChunk)) {
                if let Some(existing) = parents.iter().find(|p| **p != edge.src) {
                    return Err(KgError::SecondParent {
                        chunk: edge.dst.clone(),
                        existing: existing.clone(),
                        incoming: edge.src.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Insert an edge after validation. Returns `true` when newly stored,
    /// `false` when the identical edge already existed.
    pub fn add_edge(&mut self, edge: KgEdge) -> Result<bool, KgError> {
        self.validate_edge(&edge)?;
        let key = edge.key();
        if self.edges.contains_key(&key) {
            return Ok(false);
        }
        let out_key = (edge.src.clone(), edge.kind);
        let out = self.outgoing.entry(out_key).or_default();
        if !out.contains(&edge.dst) {
            out.push(edge.dst.clone());
            out.sort();
        }
        let in_key = (edge.dst.clone(), edge.kind);
        let inc = self.incoming.entry(in_key).or_default();
        if !inc.contains(&edge.src) {
            inc.push(edge.src.clone());
            inc.sort();
        }
        self.edges.insert(key, edge);
        Ok(true)
    }

    /// Targets of `(src_id, kind, ·)` edges in ascending node-id order.
    pub fn linked(&self, src_id: &str, kind: EdgeKind) -> Result<Vec<&KgNode>, KgError> {
        if !self.nodes.contains_key(src_id) {
            return Err(KgError::UnknownNode {
                id: src_id.to_string(),
            });
        }
        let ids = self
            .outgoing
            .get(&(src_id.to_string(), kind))
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        Ok(ids
            .iter()
            .map(|id| self.nodes.get(id).expect("adjacency points at stored node"))
            .collect())
    }

    /// Sources of `(·, kind, dst_id)` edges in ascending node-id order.
    pub fn linked_from(&self, dst_id: &str, kind: EdgeKind) -> Result<Vec<&KgNode>, KgError> {
        if !self.nodes.contains_key(dst_id) {
            return Err(KgError::UnknownNode {
                id: dst_id.to_string(),
            });
        }
        let ids = self
            .incoming
            .get(&(dst_id.to_string(), kind))
            .map(|v| v.as_slice())
            .unwrap_or(&[]);
        Ok(ids
            .iter()
            .map(|id| self.nodes.get(id).expect("adjacency points at stored node"))
            .collect())
    }

    /// Canonical serialization of the graph content (no headers), used for
    /// both persistence and fingerprinting.
    fn canonical_lines(&self) -> Result<(String, String), serde_json::Error> {
        let nodes: Vec<&KgNode> = self.nodes.values().collect();
        let edges: Vec<&KgEdge> = self.edges.values().collect();
        Ok((jsonl::to_lines(&nodes)?, jsonl::to_lines(&edges)?))
    }

    /// Stable content hash over the sorted node and edge serializations.
    /// Two graphs with equal content produce equal fingerprints regardless
    /// of insertion order.
    pub fn fingerprint(&self) -> String {
        let (nodes, edges) = self.canonical_lines().expect("graph serializes");
        util::sha256_hex(&[nodes.as_bytes(), edges.as_bytes()])[..32].to_string()
    }

    /// Write `nodes.jsonl` and `edges.jsonl` under `dir`, each led by a
    /// header record carrying the format version, the ontology fingerprint,
    /// and the record count.
    pub fn persist(&self, dir: &Path) -> Result<(), KgError> {
        self.persist_with_manifest(dir, &BTreeMap::new())
    }

    /// Like [`persist`](Self::persist), with provenance entries (config
    /// hash, input fingerprints) recorded in each file's header.
    pub fn persist_with_manifest(
        &self,
        dir: &Path,
        manifest: &BTreeMap<String, String>,
    ) -> Result<(), KgError> {
        std::fs::create_dir_all(dir).map_err(|source| KgError::Write {
            path: dir.to_path_buf(),
            source,
        })?;
        let (node_lines, edge_lines) = self.canonical_lines().map_err(|e| KgError::Write {
            path: dir.to_path_buf(),
            source: std::io::Error::other(e),
        })?;
        let fingerprint = self.schema.fingerprint();
        for (name, lines, count) in [
            ("nodes.jsonl", node_lines, self.nodes.len()),
            ("edges.jsonl", edge_lines, self.edges.len()),
        ] {
            let path = dir.join(name);
            let header = KgFileHeader {
                format_version: KG_FORMAT_VERSION,
                ontology_fingerprint: fingerprint.clone(),
                record_count: count as u64,
                manifest: manifest.clone(),
            };
            let mut buf = serde_json::to_string(&header).expect("header serializes");
            buf.push('\n');
            buf.push_str(&lines);
            std::fs::write(&path, buf).map_err(|source| KgError::Write { path, source })?;
        }
        Ok(())
    }

    /// Load a persisted graph. Fails cleanly (no partial graph) on version
    /// or fingerprint mismatch, corrupted lines, truncation, or any record
    /// that would not validate against the schema.
    pub fn load(dir: &Path, schema: OntologySchema) -> Result<Self, KgError> {
        let mut graph = KnowledgeGraph::new(schema);
        let expected = graph.schema.fingerprint();

        let nodes_path = dir.join("nodes.jsonl");
        let (node_header, node_values) = read_with_header::<KgNode>(&nodes_path)?;
        check_header(&nodes_path, &node_header, &expected, node_values.len() as u64)?;
        for node in node_values {
            graph.add_node(node)?;
        }

        let edges_path = dir.join("edges.jsonl");
        let (edge_header, edge_values) = read_with_header::<KgEdge>(&edges_path)?;
        check_header(&edges_path, &edge_header, &expected, edge_values.len() as u64)?;
        for edge in edge_values {
            graph.add_edge(edge)?;
        }
        Ok(graph)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct KgFileHeader {
    format_version: u32,
    ontology_fingerprint: String,
    record_count: u64,
    /// Free-form provenance (config hash, input fingerprints); not part of
    /// the integrity checks.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    manifest: BTreeMap<String, String>,
}

fn read_with_header<T: serde::de::DeserializeOwned>(
    path: &Path,
) -> Result<(KgFileHeader, Vec<T>), KgError> {
    let mut lines = jsonl::read_records::<serde_json::Value>(path)?;
    let header_line = lines
        .next()
        .ok_or_else(|| KgError::MissingHeader {
            path: path.to_path_buf(),
        })??;
    let header: KgFileHeader =
        serde_json::from_value(header_line.value).map_err(|e| KgError::Jsonl(JsonlError::Malformed {
            path: path.to_path_buf(),
            line: header_line.line,
            message: format!("bad header: {e}"),
        }))?;
    let mut values = Vec::new();
    for item in lines {
        let located = item?;
        let value: T = serde_json::from_value(located.value).map_err(|e| {
            KgError::Jsonl(JsonlError::Malformed {
                path: path.to_path_buf(),
                line: located.line,
                message: e.to_string(),
            })
        })?;
        values.push(value);
    }
    Ok((header, values))
}

fn check_header(
    path: &Path,
    header: &KgFileHeader,
    expected_fingerprint: &str,
    found: u64,
) -> Result<(), KgError> {
    if header.format_version != KG_FORMAT_VERSION {
        return Err(KgError::VersionMismatch {
            path: path.to_path_buf(),
            found: header.format_version,
            expected: KG_FORMAT_VERSION,
        });
    }
    if header.ontology_fingerprint != expected_fingerprint {
        return Err(KgError::FingerprintMismatch {
            path: path.to_path_buf(),
            found: header.ontology_fingerprint.clone(),
            expected: expected_fingerprint.to_string(),
        });
    }
    if header.record_count != found {
        return Err(KgError::CountMismatch {
            path: path.to_path_buf(),
            declared: header.record_count,
            found,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph_with_doc_and_chunk() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new(OntologySchema::standard());
        g.add_node(KgNode::new("doc1", NodeKind::Document, "τίτλος", "el")).unwrap();
        g.add_node(KgNode::new("doc1#0000", NodeKind::Chunk, "κείμενο", "el")).unwrap();
        g.add_edge(KgEdge::new("doc1", EdgeKind::HasChunk, "doc1#0000")).unwrap();
        g
    }

    #[test]
    fn identical_node_re_add_is_idempotent() {
        let mut g = graph_with_doc_and_chunk();
        let n = KgNode::new("doc1", NodeKind::Document, "τίτλος", "el");
        assert!(!g.add_node(n).unwrap());
        assert_eq!(g.node_count(), 2);
    }

    #[test]
    fn node_collision_reports_both_payloads() {
        let mut g = graph_with_doc_and_chunk();
        let err = g
            .add_node(KgNode::new("doc1", NodeKind::Document, "άλλος τίτλος", "el"))
            .unwrap_err();
        match err {
            KgError::NodeCollision { existing, incoming, .. } => {
                assert!(existing.contains("τίτλος"));
                assert!(incoming.contains("άλλος"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_endpoint_kind_is_rejected_naming_the_rule() {
        let mut g = graph_with_doc_and_chunk();
        g.add_node(KgNode::new("ent:1", NodeKind::Entity, "αθήνα", "el")).unwrap();
        let err = g
            .add_edge(KgEdge::new("doc1", EdgeKind::HasEntity, "ent:1"))
            .unwrap_err();
        match err {
            KgError::RuleViolation { rule, .. } => {
                assert!(rule.contains("has_entity"));
                assert!(rule.contains("chunk -> entity"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn relation_requires_label_and_others_forbid_it() {
        let mut g = graph_with_doc_and_chunk();
        g.add_node(KgNode::new("ent:1", NodeKind::Entity, "αθήνα", "el")).unwrap();
        g.add_node(KgNode::new("ent:2", NodeKind::Entity, "ελλάδα", "el")).unwrap();
        assert!(matches!(
            g.add_edge(KgEdge::new("ent:1", EdgeKind::Relation, "ent:2")),
            Err(KgError::LabelRule { .. })
        ));
        assert!(matches!(
            g.add_edge(KgEdge::labeled("doc1", EdgeKind::HasChunk, "doc1#0000", "x")),
            Err(KgError::LabelRule { .. })
        ));
        assert!(g
            .add_edge(KgEdge::labeled("ent:1", EdgeKind::Relation, "ent:2", "co_occurs_with"))
            .unwrap());
    }

    #[test]
    fn duplicate_edges_collapse() {
        let mut g = graph_with_doc_and_chunk();
        assert!(!g.add_edge(KgEdge::new("doc1", EdgeKind::HasChunk, "doc1#0000")).unwrap());
        assert_eq!(g.edge_count(), 1);
    }

    #[test]
    fn second_parent_for_a_chunk_is_rejected() {
        let mut g = graph_with_doc_and_chunk();
        g.add_node(KgNode::new("doc2", NodeKind::Document, "άλλο", "el")).unwrap();
        let err = g
            .add_edge(KgEdge::new("doc2", EdgeKind::HasChunk, "doc1#0000"))
            .unwrap_err();
        assert!(matches!(err, KgError::SecondParent { .. }));
    }

    #[test]
    fn missing_endpoint_is_rejected() {
        let mut g = graph_with_doc_and_chunk();
        assert!(matches!(
            g.add_edge(KgEdge::new("doc1", EdgeKind::HasChunk, "ghost")),
            Err(KgError::UnknownNode { .. })
        ));
    }

    #[test]
    fn linked_returns_targets_in_id_order() {
        let mut g = graph_with_doc_and_chunk();
        for id in ["ent:c", "ent:a", "ent:b"] {
            g.add_node(KgNode::new(id, NodeKind::Entity, id, "el")).unwrap();
            g.add_edge(KgEdge::new("doc1#0000", EdgeKind::HasEntity, id)).unwrap();
        }
        let ids: Vec<&str> = g
            .linked("doc1#0000", EdgeKind::HasEntity)
            .unwrap()
            .iter()
            .map(|n| n.node_id.as_str())
            .collect();
        assert_eq!(ids, vec!["ent:a", "ent:b", "ent:c"]);
        assert!(g.linked("nope", EdgeKind::HasEntity).is_err());
        assert!(g.linked("doc1", EdgeKind::HasQuestion).unwrap().is_empty());
    }

    fn build_sizable_graph() -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new(OntologySchema::standard());
        for d in 0..5 {
            let doc = format!("doc{d}");
            g.add_node(
                KgNode::new(doc.clone(), NodeKind::Document, format!("body {d}"), "el")
                    .with_attr("source", "test"),
            )
            .unwrap();
            for c in 0..3 {
                let chunk = util::chunk_id(&doc, c);
                g.add_node(KgNode::new(chunk.clone(), NodeKind::Chunk, format!("chunk {d}/{c}"), "el"))
                    .unwrap();
                g.add_edge(KgEdge::new(doc.clone(), EdgeKind::HasChunk, chunk.clone())).unwrap();
                let ent = entity_node_id(&format!("οντότητα {d} {c}"), "named", "test:el");
                g.add_node(
                    KgNode::new(ent.clone(), NodeKind::Entity, format!("οντότητα {d} {c}"), "el")
                        .with_attr("entity_type", "named")
                        .with_attr("b_attr", "2")
                        .with_attr("a_attr", "1"),
                )
                .unwrap();
                g.add_edge(KgEdge::new(chunk.clone(), EdgeKind::HasEntity, ent.clone())).unwrap();
                let fact = fact_node_id(&format!("γεγονός {d} {c}"), &chunk);
                g.add_node(KgNode::new(fact.clone(), NodeKind::AtomicFact, format!("γεγονός {d} {c}"), "el"))
                    .unwrap();
                g.add_edge(KgEdge::new(chunk.clone(), EdgeKind::HasAtomicFact, fact)).unwrap();
            }
        }
        g
    }

    #[test]
    fn persist_load_round_trip_compares_equal() {
        let g = build_sizable_graph();
        assert!(g.node_count() >= 35);
        let dir = tempfile::tempdir().unwrap();
        g.persist(dir.path()).unwrap();
        let loaded = KnowledgeGraph::load(dir.path(), OntologySchema::standard()).unwrap();
        assert_eq!(g, loaded);
        assert_eq!(g.fingerprint(), loaded.fingerprint());
    }

    #[test]
    fn fingerprint_is_insertion_order_independent() {
        let mut a = KnowledgeGraph::new(OntologySchema::standard());
        let mut b = KnowledgeGraph::new(OntologySchema::standard());
        let n1 = KgNode::new("doc1", NodeKind::Document, "x", "el");
        let n2 = KgNode::new("doc2", NodeKind::Document, "y", "el");
        a.add_node(n1.clone()).unwrap();
        a.add_node(n2.clone()).unwrap();
        b.add_node(n2).unwrap();
        b.add_node(n1).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let g = build_sizable_graph();
        let dir = tempfile::tempdir().unwrap();
        g.persist(dir.path()).unwrap();
        let nodes_path = dir.path().join("nodes.jsonl");
        let content = std::fs::read_to_string(&nodes_path).unwrap();
        let bumped = content.replacen("\"format_version\":1", "\"format_version\":99", 1);
        std::fs::write(&nodes_path, bumped).unwrap();
        assert!(matches!(
            KnowledgeGraph::load(dir.path(), OntologySchema::standard()),
            Err(KgError::VersionMismatch { found: 99, .. })
        ));
    }

    #[test]
    fn corrupted_line_is_reported_with_location() {
        let g = build_sizable_graph();
        let dir = tempfile::tempdir().unwrap();
        g.persist(dir.path()).unwrap();
        let edges_path = dir.path().join("edges.jsonl");
        let mut content = std::fs::read_to_string(&edges_path).unwrap();
        let lines: Vec<&str> = content.lines().collect();
        let mut mangled: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        mangled[3] = "{broken".to_string();
        content = mangled.join("\n");
        content.push('\n');
        std::fs::write(&edges_path, content).unwrap();
        match KnowledgeGraph::load(dir.path(), OntologySchema::standard()) {
            Err(KgError::Jsonl(JsonlError::Malformed { line, path, .. })) => {
                assert_eq!(line, 4);
                assert!(path.ends_with("edges.jsonl"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_file_fails_with_count_mismatch() {
        let g = build_sizable_graph();
        let dir = tempfile::tempdir().unwrap();
        g.persist(dir.path()).unwrap();
        let nodes_path = dir.path().join("nodes.jsonl");
        let content = std::fs::read_to_string(&nodes_path).unwrap();
        let kept: Vec<&str> = content.lines().take(content.lines().count() - 2).collect();
        std::fs::write(&nodes_path, format!("{}\n", kept.join("\n"))).unwrap();
        assert!(matches!(
            KnowledgeGraph::load(dir.path(), OntologySchema::standard()),
            Err(KgError::CountMismatch { .. })
        ));
    }

    #[test]
    fn content_addressed_ids_dedupe_by_scope() {
        assert_eq!(
            entity_node_id("αθήνα", "named", "wiki:el"),
            entity_node_id("αθήνα", "named", "wiki:el")
        );
        assert_ne!(
            entity_node_id("αθήνα", "named", "wiki:el"),
            entity_node_id("αθήνα", "named", "news:el")
        );
        assert_ne!(fact_node_id("x", "c1"), fact_node_id("x", "c2"));
    }
}
