//! The pipeline commands.
//!
//! Every command reads its inputs fully before writing anything, so a
//! failed run leaves no partial artifacts, and stamps each output's
//! manifest with the effective config hash and the fingerprints of the
//! inputs it consumed. Reruns over unchanged inputs rewrite every file with
//! identical bytes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pairforge::corpus::{self, ChunkRecord, DocumentRecord};
use pairforge::embed;
use pairforge::eval::{self, MetricReport, QueryRecord};
use pairforge::extract::{CorpusOptions, KgBuildConfig, KgBuilder};
use pairforge::jsonl;
use pairforge::kg::{EdgeKind, KnowledgeGraph, NodeKind, OntologySchema};
use pairforge::pairgen::{
    self, AnchorKind, AugmentPolicy, DatasetHeader, PairOrigin, TrainingDataset,
};
use pairforge::stats::{self, RankReport, ScoreMatrix};
use pairforge::util;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::backends;
use crate::config::{fingerprint_file, fingerprint_input, CorpusEntry, PipelineConfig};
use crate::error::{self, CliError};
use crate::logging::RunLog;

// ---------------------------------------------------------------------------
// Artifact layout
// ---------------------------------------------------------------------------

/// Fixed layout of artifacts under the output directory.
pub struct Paths {
    root: PathBuf,
}

impl Paths {
    pub fn new(root: &Path) -> Self {
        Paths {
            root: root.to_path_buf(),
        }
    }

    pub fn chunks(&self) -> PathBuf {
        self.root.join("chunks.jsonl")
    }

    pub fn ingest_summary(&self) -> PathBuf {
        self.root.join("ingest.json")
    }

    pub fn kg_dir(&self) -> PathBuf {
        self.root.join("kg")
    }

    pub fn kg_summary(&self) -> PathBuf {
        self.kg_dir().join("summary.json")
    }

    pub fn degraded(&self) -> PathBuf {
        self.kg_dir().join("degraded.jsonl")
    }

    pub fn native_dataset(&self) -> PathBuf {
        self.root.join("pairs/native.jsonl")
    }

    pub fn augmented_dataset(&self) -> PathBuf {
        self.root.join("pairs/augmented.jsonl")
    }

    pub fn export(&self) -> PathBuf {
        self.root.join("pairs/export.jsonl")
    }

    pub fn vectors(&self) -> PathBuf {
        self.root.join("index/vectors.jsonl")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn run_file(&self, model: &str, dataset: &str) -> PathBuf {
        self.reports_dir()
            .join(format!("run-{}-{}.jsonl", slug(model), slug(dataset)))
    }

    pub fn eval_file(&self, model: &str, dataset: &str) -> PathBuf {
        self.reports_dir()
            .join(format!("eval-{}-{}.json", slug(model), slug(dataset)))
    }

    pub fn stats_dir(&self) -> PathBuf {
        self.root.join("stats")
    }

    pub fn report_json(&self) -> PathBuf {
        self.root.join("report/report.json")
    }

    pub fn report_txt(&self) -> PathBuf {
        self.root.join("report/report.txt")
    }
}

/// Filesystem-safe label: lowercased, separators collapsed to `-`. When a
/// character had to be dropped entirely, a short content hash is appended so
/// labels differing only in dropped characters cannot collide.
pub fn slug(label: &str) -> String {
    let mut out = String::new();
    let mut lossy = false;
    for ch in label.chars() {
        if ch.is_alphanumeric() {
            out.extend(ch.to_lowercase());
        } else if matches!(ch, ' ' | '-' | '_' | '.') {
            if !out.ends_with('-') {
                out.push('-');
            }
        } else {
            lossy = true;
        }
    }
    let trimmed = out.trim_matches('-').to_string();
    let mut slug = if trimmed.is_empty() {
        "x".to_string()
    } else {
        trimmed
    };
    if lossy {
        let hash = format!("{:016x}", util::fnv1a_64(label.as_bytes()));
        slug.push('-');
        slug.push_str(&hash[..8]);
    }
    slug
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| error::write_error(parent, e))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| error::write_error(path, e))
}

fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json serializes");
    text.push('\n');
    write_text(path, &text)
}

// ---------------------------------------------------------------------------
// Shared loading steps
// ---------------------------------------------------------------------------

pub struct LoadedCorpus {
    pub entry: CorpusEntry,
    pub docs: Vec<DocumentRecord>,
    pub skipped: usize,
}

/// Read every configured corpus. Per-record problems are skipped and
/// logged; structural problems abort before anything is written.
fn load_corpora(config: &PipelineConfig, log: &mut RunLog) -> Result<Vec<LoadedCorpus>, CliError> {
    if config.corpora.is_empty() {
        return Err(CliError::Config(
            "config lists no corpora; add at least one [[corpora]] entry".into(),
        ));
    }
    let languages = corpus::default_languages();
    let mut out = Vec::new();
    for entry in &config.corpora {
        let iter = corpus::ingest_corpus(&entry.path, &languages)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let mut docs = Vec::new();
        let mut skipped = 0usize;
        for item in iter {
            match item {
                Ok(mut doc) => {
                    if doc.language != entry.language {
                        log.warn(
                            "language_mismatch",
                            &format!(
                                "document {} is {} but corpus {} is declared {}",
                                doc.doc_id, doc.language, entry.source, entry.language
                            ),
                            json!({"doc_id": doc.doc_id, "language": doc.language}),
                        );
                    }
                    doc.source = entry.source.clone();
                    docs.push(doc);
                }
                Err(e) if !e.is_fatal() => {
                    skipped += 1;
                    log.warn("skip_record", &e.to_string(), json!({"error": e.to_string()}));
                }
                Err(e) => return Err(CliError::Input(e.to_string())),
            }
        }
        out.push(LoadedCorpus {
            entry: entry.clone(),
            docs,
            skipped,
        });
    }
    Ok(out)
}

fn corpus_manifest(config: &PipelineConfig) -> Result<BTreeMap<String, String>, CliError> {
    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    for entry in &config.corpora {
        manifest.insert(
            format!("input:{}", entry.path.display()),
            fingerprint_input(&entry.path)?,
        );
    }
    Ok(manifest)
}

fn load_graph(paths: &Paths) -> Result<KnowledgeGraph, CliError> {
    let dir = paths.kg_dir();
    KnowledgeGraph::load(&dir, OntologySchema::standard()).map_err(|e| error::kg_load_error(e, &dir))
}

fn pairgen_error(e: pairgen::PairGenError) -> CliError {
    match &e {
        pairgen::PairGenError::InvalidConfig(_) => CliError::Config(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

fn anchor_label(kind: AnchorKind) -> &'static str {
    match kind {
        AnchorKind::AtomicFact => "atomic_fact",
        AnchorKind::Question => "question",
        AnchorKind::EntitySentence => "entity_sentence",
    }
}

fn dataset_counts(dataset: &TrainingDataset) -> BTreeMap<String, String> {
    let mut counts = BTreeMap::new();
    counts.insert("pairs".to_string(), dataset.pairs().len().to_string());
    let mut by_anchor: BTreeMap<&str, usize> = BTreeMap::new();
    let mut by_lang: BTreeMap<String, usize> = BTreeMap::new();
    let mut by_origin: BTreeMap<&str, usize> = BTreeMap::new();
    for pair in dataset.pairs() {
        *by_anchor.entry(anchor_label(pair.anchor_kind)).or_default() += 1;
        *by_lang.entry(pair.anchor_lang.clone()).or_default() += 1;
        *by_origin
            .entry(match pair.origin {
                PairOrigin::Native => "native",
                PairOrigin::Translated => "translated",
            })
            .or_default() += 1;
    }
    for (kind, n) in by_anchor {
        counts.insert(format!("anchors:{kind}"), n.to_string());
    }
    for (lang, n) in by_lang {
        counts.insert(format!("language:{lang}"), n.to_string());
    }
    for (origin, n) in by_origin {
        counts.insert(format!("origin:{origin}"), n.to_string());
    }
    counts
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ChunksHeader {
    format_version: u32,
    record_count: usize,
    manifest: BTreeMap<String, String>,
}

pub fn cmd_ingest(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let corpora = load_corpora(config, log)?;
    let manifest = corpus_manifest(config)?;
    let paths = Paths::new(&config.output_dir);

    let mut all_chunks: Vec<ChunkRecord> = Vec::new();
    let mut per_corpus = Vec::new();
    let mut skipped = 0usize;
    for loaded in &corpora {
        let mut chunk_count = 0usize;
        for doc in &loaded.docs {
            let chunks = corpus::chunk_document(doc, &config.chunking)
                .map_err(|e| CliError::Input(e.to_string()))?;
            chunk_count += chunks.len();
            all_chunks.extend(chunks);
        }
        skipped += loaded.skipped;
        per_corpus.push(json!({
            "source": loaded.entry.source,
            "language": loaded.entry.language,
            "documents": loaded.docs.len(),
            "chunks": chunk_count,
        }));
    }

    let header = ChunksHeader {
        format_version: 1,
        record_count: all_chunks.len(),
        manifest: manifest.clone(),
    };
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    text.push_str(&jsonl::to_lines(&all_chunks).expect("chunks serialize"));
    write_text(&paths.chunks(), &text)?;

    let documents: usize = corpora.iter().map(|c| c.docs.len()).sum();
    let summary = json!({
        "documents": documents,
        "chunks": all_chunks.len(),
        "skipped_records": skipped,
        "corpora": per_corpus,
        "manifest": manifest,
    });
    write_json(&paths.ingest_summary(), &summary)?;
    log.info(
        "ingest_done",
        &format!(
            "ingested {documents} documents into {} chunks ({skipped} records skipped)",
            all_chunks.len()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// build-kg
// ---------------------------------------------------------------------------

fn node_kinds() -> [(NodeKind, &'static str); 5] {
    [
        (NodeKind::Document, "document"),
        (NodeKind::Chunk, "chunk"),
        (NodeKind::Entity, "entity"),
        (NodeKind::Question, "question"),
        (NodeKind::AtomicFact, "atomic_fact"),
    ]
}

fn edge_kinds() -> [(EdgeKind, &'static str); 5] {
    [
        (EdgeKind::HasChunk, "has_chunk"),
        (EdgeKind::HasEntity, "has_entity"),
        (EdgeKind::HasAtomicFact, "has_atomic_fact"),
        (EdgeKind::HasQuestion, "has_question"),
        (EdgeKind::Relation, "relation"),
    ]
}

pub fn cmd_build_kg(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let corpora = load_corpora(config, log)?;
    let manifest = corpus_manifest(config)?;
    let backend = backends::build_extractor(&config.backends.extractor)?;
    let paths = Paths::new(&config.output_dir);

    let build_cfg = KgBuildConfig {
        chunking: config.chunking,
        retry: config.retry.policy(),
        jobs: config.jobs,
    };
    let mut builder = KgBuilder::new(OntologySchema::standard(), build_cfg);
    for loaded in corpora {
        let opts = CorpusOptions {
            query_bearing: loaded.entry.query_bearing,
        };
        builder
            .add_corpus(loaded.docs, backend.as_ref(), &opts)
            .map_err(error::extract_error)?;
    }
    let report = builder.finish();

    report
        .graph
        .persist_with_manifest(&paths.kg_dir(), &manifest)
        .map_err(|e| CliError::Validation(e.to_string()))?;

    let degraded_header = ChunksHeader {
        format_version: 1,
        record_count: report.degraded.len(),
        manifest: manifest.clone(),
    };
    let mut text = serde_json::to_string(&degraded_header).expect("header serializes");
    text.push('\n');
    text.push_str(&jsonl::to_lines(&report.degraded).expect("degraded serialize"));
    write_text(&paths.degraded(), &text)?;

    let mut node_counts = serde_json::Map::new();
    for (kind, label) in node_kinds() {
        let n = report.graph.nodes_of_kind(kind).count();
        node_counts.insert(label.to_string(), json!(n));
    }
    node_counts.insert("total".to_string(), json!(report.graph.node_count()));
    let mut edge_counts = serde_json::Map::new();
    for (kind, label) in edge_kinds() {
        let n = report.graph.edges().filter(|e| e.kind == kind).count();
        edge_counts.insert(label.to_string(), json!(n));
    }
    edge_counts.insert("total".to_string(), json!(report.graph.edge_count()));

    let summary = json!({
        "fingerprint": report.graph.fingerprint(),
        "nodes": Value::Object(node_counts),
        "edges": Value::Object(edge_counts),
        "documents": report.documents,
        "chunks": report.chunks,
        "degraded_chunks": report.degraded.len(),
        "manifest": manifest,
    });
    write_json(&paths.kg_summary(), &summary)?;

    if !report.degraded.is_empty() {
        log.warn(
            "degraded_chunks",
            &format!(
                "{} chunk(s) kept without extraction results; see {}",
                report.degraded.len(),
                paths.degraded().display()
            ),
            json!({"count": report.degraded.len()}),
        );
    }
    log.info(
        "build_kg_done",
        &format!(
            "graph: {} nodes, {} edges from {} documents / {} chunks ({} degraded)",
            report.graph.node_count(),
            report.graph.edge_count(),
            report.documents,
            report.chunks,
            report.degraded.len()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// gen-pairs
// ---------------------------------------------------------------------------

pub fn cmd_gen_pairs(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let graph = load_graph(&paths)?;
    let report = pairgen::generate_pairs(&graph, &config.pairgen, None).map_err(pairgen_error)?;

    let mut manifest = dataset_counts(&report.dataset);
    manifest.insert("config_hash".to_string(), config.config_hash());
    manifest.insert("input:kg".to_string(), graph.fingerprint());
    manifest.insert("dropped".to_string(), report.dropped.len().to_string());

    let header = DatasetHeader {
        format_version: pairgen::DATASET_FORMAT_VERSION,
        pairgen: config.pairgen,
        kg_fingerprint: graph.fingerprint(),
        manifest: manifest.clone(),
    };
    ensure_parent(&paths.native_dataset())?;
    pairgen::save_dataset(&paths.native_dataset(), &report.dataset, &header)
        .map_err(pairgen_error)?;

    for dropped in &report.dropped {
        log.warn(
            "pair_dropped",
            &format!(
                "dropped candidate pair for chunk {}: {}",
                dropped.positive_chunk_id, dropped.reason
            ),
            serde_json::to_value(dropped).expect("dropped serializes"),
        );
    }
    let summary = json!({
        "pairs": report.dataset.pairs().len(),
        "dropped": report.dropped.len(),
        "seed": config.pairgen.rng_seed,
        "manifest": manifest,
    });
    log.info(
        "gen_pairs_done",
        &format!(
            "sampled {} native pairs ({} candidates dropped) with seed {}",
            report.dataset.pairs().len(),
            report.dropped.len(),
            config.pairgen.rng_seed
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// augment
// ---------------------------------------------------------------------------

pub fn cmd_augment(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let native_path = paths.native_dataset();
    let (header, native) = pairgen::load_dataset(&native_path)
        .map_err(|e| error::dataset_load_error(e, &native_path, "gen-pairs"))?;
    let graph = load_graph(&paths)?;
    if header.kg_fingerprint != graph.fingerprint() {
        return Err(CliError::Validation(format!(
            "dataset {} was generated from graph {} but the current graph is {}; re-run gen-pairs",
            native_path.display(),
            header.kg_fingerprint,
            graph.fingerprint()
        )));
    }

    let flagged: std::collections::BTreeSet<&str> = config
        .corpora
        .iter()
        .filter(|c| c.augment_to_greek)
        .map(|c| c.source.as_str())
        .collect();
    let to_greek_docs = graph
        .nodes_of_kind(NodeKind::Document)
        .filter(|n| {
            n.attrs
                .get("source")
                .is_some_and(|s| flagged.contains(s.as_str()))
        })
        .map(|n| n.node_id.clone())
        .collect();
    let policy = AugmentPolicy {
        greek: "el".into(),
        english: "en".into(),
        to_greek_docs,
    };

    let translator = backends::build_translator(&config.backends.translator)?;
    let report =
        pairgen::augment_cross_lingual(&native, translator.as_ref(), &policy, &config.retry.policy())
            .map_err(pairgen_error)?;

    let mut manifest = dataset_counts(&report.dataset);
    manifest.insert("config_hash".to_string(), config.config_hash());
    manifest.insert(
        format!("input:{}", native_path.display()),
        fingerprint_file(&native_path)?,
    );
    manifest.insert("input:kg".to_string(), graph.fingerprint());
    manifest.insert(
        "translation_failures".to_string(),
        report.translation_failures.len().to_string(),
    );
    manifest.insert("dropped".to_string(), report.dropped.len().to_string());

    let out_header = DatasetHeader {
        format_version: pairgen::DATASET_FORMAT_VERSION,
        pairgen: header.pairgen,
        kg_fingerprint: header.kg_fingerprint,
        manifest: manifest.clone(),
    };
    ensure_parent(&paths.augmented_dataset())?;
    pairgen::save_dataset(&paths.augmented_dataset(), &report.dataset, &out_header)
        .map_err(pairgen_error)?;

    for failed in &report.translation_failures {
        log.warn(
            "translation_failed",
            &format!(
                "translator gave up on a pair for chunk {}: {}",
                failed.positive_chunk_id, failed.reason
            ),
            serde_json::to_value(failed).expect("failure serializes"),
        );
    }
    let native_count = manifest.get("origin:native").cloned().unwrap_or_default();
    let translated_count = manifest
        .get("origin:translated")
        .cloned()
        .unwrap_or_else(|| "0".to_string());
    let summary = json!({
        "pairs": report.dataset.pairs().len(),
        "native": native_count,
        "translated": translated_count,
        "translation_failures": report.translation_failures.len(),
        "manifest": manifest,
    });
    log.info(
        "augment_done",
        &format!(
            "augmented dataset holds {} pairs (native {native_count}, translated {translated_count})",
            report.dataset.pairs().len()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// export-dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ExportPair {
    anchor: String,
    positive: String,
}

pub fn cmd_export(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let augmented = paths.augmented_dataset();
    let native = paths.native_dataset();
    let (source_path, produced_by) = if augmented.is_file() {
        (augmented, "augment")
    } else if native.is_file() {
        (native, "gen-pairs")
    } else {
        return Err(CliError::Input(format!(
            "no dataset found at {} or {}; run gen-pairs (and augment) first",
            paths.augmented_dataset().display(),
            paths.native_dataset().display()
        )));
    };
    let (_, dataset) = pairgen::load_dataset(&source_path)
        .map_err(|e| error::dataset_load_error(e, &source_path, produced_by))?;

    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    manifest.insert(
        format!("input:{}", source_path.display()),
        fingerprint_file(&source_path)?,
    );
    manifest.insert("pairs".to_string(), dataset.pairs().len().to_string());

    let header = ChunksHeader {
        format_version: 1,
        record_count: dataset.pairs().len(),
        manifest: manifest.clone(),
    };
    let exported: Vec<ExportPair> = dataset
        .pairs()
        .iter()
        .map(|p| ExportPair {
            anchor: p.anchor.clone(),
            positive: p.positive.clone(),
        })
        .collect();
    let mut text = serde_json::to_string(&header).expect("header serializes");
    text.push('\n');
    text.push_str(&jsonl::to_lines(&exported).expect("pairs serialize"));
    write_text(&paths.export(), &text)?;

    let summary = json!({
        "pairs": exported.len(),
        "source": source_path.display().to_string(),
        "manifest": manifest,
    });
    log.info(
        "export_done",
        &format!(
            "exported {} anchor-positive pairs from {}",
            exported.len(),
            source_path.display()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// index
// ---------------------------------------------------------------------------

pub fn cmd_index(
    config: &PipelineConfig,
    log: &mut RunLog,
    batch_size: usize,
) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let graph = load_graph(&paths)?;
    let items: Vec<(String, String)> = graph
        .nodes_of_kind(NodeKind::Chunk)
        .map(|n| (n.node_id.clone(), n.text.clone()))
        .collect();
    if items.is_empty() {
        return Err(CliError::Input(
            "knowledge graph holds no chunks to index".into(),
        ));
    }
    let backend = backends::build_embedder(&config.backends.embedder)?;
    let index = embed::build_index(&items, backend.as_ref(), batch_size).map_err(error::embed_error)?;

    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    manifest.insert("input:kg".to_string(), graph.fingerprint());
    manifest.insert("backend".to_string(), backend.id().to_string());
    ensure_parent(&paths.vectors())?;
    index
        .save(&paths.vectors(), &manifest)
        .map_err(error::embed_error)?;

    let summary = json!({
        "vectors": index.len(),
        "dim": index.dim(),
        "backend": backend.id(),
        "manifest": manifest,
    });
    log.info(
        "index_done",
        &format!(
            "indexed {} chunks into {}-dim vectors via {}",
            index.len(),
            index.dim(),
            backend.id()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct BenchDoc {
    doc_id: String,
    text: String,
}

/// On-disk shape of `reports/eval-*.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct EvalReportFile {
    pub model: String,
    pub dataset: String,
    pub ks: Vec<usize>,
    /// Metric fractions in [0, 1], keyed `acc@k` / `ndcg@k`.
    pub metrics: BTreeMap<String, f64>,
    /// The same metrics formatted as percentages with two decimals.
    pub percent: BTreeMap<String, String>,
    pub manifest: BTreeMap<String, String>,
}

pub struct EvaluateArgs {
    pub queries: PathBuf,
    pub corpus: PathBuf,
    pub dataset: String,
    pub model: Option<String>,
}

pub fn cmd_evaluate(
    config: &PipelineConfig,
    log: &mut RunLog,
    args: &EvaluateArgs,
) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let queries: Vec<QueryRecord> =
        jsonl::read_all(&args.queries).map_err(|e| CliError::Input(e.to_string()))?;
    let corpus_docs: Vec<BenchDoc> =
        jsonl::read_all(&args.corpus).map_err(|e| CliError::Input(e.to_string()))?;
    let corpus_pairs: Vec<(String, String)> = corpus_docs
        .into_iter()
        .map(|d| (d.doc_id, d.text))
        .collect();

    let backend = backends::build_embedder(&config.backends.embedder)?;
    let label = args
        .model
        .clone()
        .unwrap_or_else(|| backend.id().to_string());
    let (mut run, _) = eval::run_benchmark(
        &queries,
        &corpus_pairs,
        backend.as_ref(),
        &config.eval.ks,
        config.eval.batch_size,
    )
    .map_err(error::eval_error)?;
    run.backend_id = label.clone();
    let report = MetricReport::from_run(&run, &queries, &config.eval.ks).map_err(error::eval_error)?;

    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    manifest.insert(
        format!("input:{}", args.queries.display()),
        fingerprint_file(&args.queries)?,
    );
    manifest.insert(
        format!("input:{}", args.corpus.display()),
        fingerprint_file(&args.corpus)?,
    );
    let run_path = paths.run_file(&label, &args.dataset);
    ensure_parent(&run_path)?;
    eval::save_run(&run, &run_path, &manifest).map_err(error::eval_error)?;

    let percent: BTreeMap<String, String> = report
        .metrics
        .iter()
        .map(|(k, v)| (k.clone(), eval::percent(*v)))
        .collect();
    let file = EvalReportFile {
        model: label.clone(),
        dataset: args.dataset.clone(),
        ks: config.eval.ks.clone(),
        metrics: report.metrics.clone(),
        percent,
        manifest,
    };
    write_json(
        &paths.eval_file(&label, &args.dataset),
        &serde_json::to_value(&file).expect("report serializes"),
    )?;

    let table = eval::render_score_table(std::slice::from_ref(&report));
    let summary = serde_json::to_value(&file).expect("report serializes");
    log.info(
        "evaluate_done",
        &format!("{} on {} ({} queries)\n{table}", label, args.dataset, queries.len()),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// stats
// ---------------------------------------------------------------------------

/// On-disk shape of `stats/*.json`.
#[derive(Debug, Serialize, Deserialize)]
pub struct StatsFile {
    pub name: String,
    pub alpha: f64,
    pub models: Vec<String>,
    pub datasets: Vec<String>,
    pub report: RankReport,
    pub manifest: BTreeMap<String, String>,
}

pub struct StatsArgs {
    pub scores: Option<PathBuf>,
    pub from_reports: bool,
    pub metric: Option<String>,
}

fn matrix_from_reports(
    reports_dir: &Path,
    metric: &str,
) -> Result<(ScoreMatrix, Vec<PathBuf>), CliError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(reports_dir)
        .map_err(|e| {
            CliError::Input(format!(
                "cannot read {}: {e}; run evaluate first",
                reports_dir.display()
            ))
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("eval-"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Input(format!(
            "no eval-*.json reports under {}; run evaluate first",
            reports_dir.display()
        )));
    }

    let mut models: Vec<String> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for path in &files {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        let report: EvalReportFile = serde_json::from_str(&text)
            .map_err(|e| CliError::Input(format!("cannot parse {}: {e}", path.display())))?;
        let score = *report.metrics.get(metric).ok_or_else(|| {
            CliError::Input(format!(
                "{} has no metric {metric:?} (model {}, dataset {})",
                path.display(),
                report.model,
                report.dataset
            ))
        })?;
        let mi = models
            .iter()
            .position(|m| *m == report.model)
            .unwrap_or_else(|| {
                models.push(report.model.clone());
                models.len() - 1
            });
        let di = datasets
            .iter()
            .position(|d| *d == report.dataset)
            .unwrap_or_else(|| {
                datasets.push(report.dataset.clone());
                datasets.len() - 1
            });
        if cells.insert((mi, di), score * 100.0).is_some() {
            return Err(CliError::Input(format!(
                "duplicate report for model {:?} on dataset {:?}",
                report.model, report.dataset
            )));
        }
    }

    let mut missing = Vec::new();
    for (mi, model) in models.iter().enumerate() {
        for (di, dataset) in datasets.iter().enumerate() {
            if !cells.contains_key(&(mi, di)) {
                missing.push(format!("({model}, {dataset})"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Input(format!(
            "incomplete score matrix; missing cells: {}",
            missing.join(", ")
        )));
    }
    let scores: Vec<Vec<f64>> = (0..models.len())
        .map(|mi| (0..datasets.len()).map(|di| cells[&(mi, di)]).collect())
        .collect();
    let matrix = ScoreMatrix::new(models, datasets, scores).map_err(error::stats_error)?;
    Ok((matrix, files))
}

pub fn cmd_stats(
    config: &PipelineConfig,
    log: &mut RunLog,
    args: &StatsArgs,
) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    if args.scores.is_some() && args.from_reports {
        return Err(CliError::Config(
            "choose one of --scores and --from-reports".into(),
        ));
    }

    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    let (matrix, name) = if let Some(path) = &args.scores {
        let matrix = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => ScoreMatrix::from_csv(path).map_err(error::stats_error)?,
            Some("jsonl") => ScoreMatrix::from_jsonl(path).map_err(error::stats_error)?,
            _ => {
                return Err(CliError::Input(format!(
                    "scores file {} must end in .csv or .jsonl",
                    path.display()
                )));
            }
        };
        manifest.insert(
            format!("input:{}", path.display()),
            fingerprint_file(path)?,
        );
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scores".to_string());
        (matrix, slug(&stem))
    } else if args.from_reports {
        let metric = args.metric.as_deref().unwrap_or("acc@3");
        let (matrix, files) = matrix_from_reports(&paths.reports_dir(), metric)?;
        for file in &files {
            manifest.insert(
                format!("input:{}", file.display()),
                fingerprint_file(file)?,
            );
        }
        (matrix, format!("ranks-{}", slug(metric)))
    } else {
        return Err(CliError::Config(
            "stats needs --scores FILE or --from-reports".into(),
        ));
    };

    if matrix.datasets.len() < 2 {
        return Err(CliError::Input(format!(
            "score matrix has {} dataset(s); the rank tests need n >= 2 datasets",
            matrix.datasets.len()
        )));
    }

    let report = stats::rank_significance(&matrix, config.stats.alpha).map_err(error::stats_error)?;
    let rendered = stats::render_rank_report(&report);

    let file = StatsFile {
        name: name.clone(),
        alpha: config.stats.alpha,
        models: matrix.models.clone(),
        datasets: matrix.datasets.clone(),
        report,
        manifest,
    };
    let json_path = paths.stats_dir().join(format!("{name}.json"));
    let txt_path = paths.stats_dir().join(format!("{name}.txt"));
    write_json(&json_path, &serde_json::to_value(&file).expect("stats serialize"))?;
    write_text(&txt_path, &rendered)?;

    print!("{rendered}");
    let summary = serde_json::to_value(&file).expect("stats serialize");
    log.info(
        "stats_done",
        &format!(
            "ranked {} models over {} datasets; wrote {}",
            file.models.len(),
            file.datasets.len(),
            json_path.display()
        ),
        summary.clone(),
    );
    Ok(summary)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn read_json_if_present(path: &Path) -> Result<Option<Value>, CliError> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let value = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("cannot parse {}: {e}", path.display())))?;
    Ok(Some(value))
}

fn read_first_line_json(path: &Path) -> Result<Option<Value>, CliError> {
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let Some(line) = text.lines().next() else {
        return Ok(None);
    };
    let value = serde_json::from_str(line)
        .map_err(|e| CliError::Validation(format!("cannot parse {}: {e}", path.display())))?;
    Ok(Some(value))
}

fn sorted_json_files(dir: &Path, prefix: &str) -> Vec<PathBuf> {
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Vec::new();
    };
    let mut files: Vec<PathBuf> = entries
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|ext| ext == "json")
                && p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with(prefix))
        })
        .collect();
    files.sort();
    files
}

pub fn cmd_report(config: &PipelineConfig, log: &mut RunLog) -> Result<Value, CliError> {
    let paths = Paths::new(&config.output_dir);
    let mut sections = serde_json::Map::new();
    let mut text = String::from("Pipeline report\n===============\n");

    if let Some(ingest) = read_json_if_present(&paths.ingest_summary())? {
        text.push_str(&format!(
            "\nIngest: {} documents, {} chunks, {} records skipped\n",
            ingest["documents"], ingest["chunks"], ingest["skipped_records"]
        ));
        sections.insert("ingest".to_string(), ingest);
    }
    if let Some(kg) = read_json_if_present(&paths.kg_summary())? {
        text.push_str(&format!(
            "\nKnowledge graph: {} nodes, {} edges, {} degraded chunk(s)\n",
            kg["nodes"]["total"], kg["edges"]["total"], kg["degraded_chunks"]
        ));
        text.push_str(&format!(
            "  entities {}, questions {}, atomic facts {}\n",
            kg["nodes"]["entity"], kg["nodes"]["question"], kg["nodes"]["atomic_fact"]
        ));
        sections.insert("knowledge_graph".to_string(), kg);
    }
    if let Some(native) = read_first_line_json(&paths.native_dataset())? {
        text.push_str(&format!(
            "\nNative pairs: {}\n",
            native["manifest"]["pairs"].as_str().unwrap_or("?")
        ));
        sections.insert("native_dataset".to_string(), native);
    }
    if let Some(augmented) = read_first_line_json(&paths.augmented_dataset())? {
        text.push_str(&format!(
            "Augmented pairs: {} (native {}, translated {})\n",
            augmented["manifest"]["pairs"].as_str().unwrap_or("?"),
            augmented["manifest"]["origin:native"].as_str().unwrap_or("?"),
            augmented["manifest"]["origin:translated"]
                .as_str()
                .unwrap_or("0"),
        ));
        sections.insert("augmented_dataset".to_string(), augmented);
    }
    if let Some(index) = read_first_line_json(&paths.vectors())? {
        text.push_str(&format!(
            "\nVector index: {} vectors, dim {}\n",
            index["record_count"], index["dim"]
        ));
        sections.insert("index".to_string(), index);
    }

    let eval_files = sorted_json_files(&paths.reports_dir(), "eval-");
    if !eval_files.is_empty() {
        let mut reports: Vec<EvalReportFile> = Vec::new();
        for path in &eval_files {
            let text_file = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            reports.push(serde_json::from_str(&text_file).map_err(|e| {
                CliError::Validation(format!("cannot parse {}: {e}", path.display()))
            })?);
        }
        text.push_str("\nRetrieval evaluation\n--------------------\n");
        let mut datasets: Vec<String> = reports.iter().map(|r| r.dataset.clone()).collect();
        datasets.dedup();
        let mut seen = std::collections::BTreeSet::new();
        datasets.retain(|d| seen.insert(d.clone()));
        for dataset in &datasets {
            let group: Vec<MetricReport> = reports
                .iter()
                .filter(|r| r.dataset == *dataset)
                .map(|r| MetricReport {
                    backend_id: r.model.clone(),
                    ks: r.ks.clone(),
                    metrics: r.metrics.clone(),
                })
                .collect();
            text.push_str(&format!("\n{dataset}:\n"));
            text.push_str(&eval::render_score_table(&group));
        }
        let values: Vec<Value> = reports
            .iter()
            .map(|r| serde_json::to_value(r).expect("report serializes"))
            .collect();
        sections.insert("evaluation".to_string(), Value::Array(values));
    }

    let stats_files = sorted_json_files(&paths.stats_dir(), "");
    if !stats_files.is_empty() {
        text.push_str("\nRank significance\n-----------------\n");
        let mut values = Vec::new();
        for path in &stats_files {
            let text_file = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
            let file: StatsFile = serde_json::from_str(&text_file).map_err(|e| {
                CliError::Validation(format!("cannot parse {}: {e}", path.display()))
            })?;
            text.push_str(&format!("\n{}:\n", file.name));
            text.push_str(&stats::render_rank_report(&file.report));
            values.push(serde_json::to_value(&file).expect("stats serialize"));
        }
        sections.insert("rank_significance".to_string(), Value::Array(values));
    }

    if sections.is_empty() {
        return Err(CliError::Input(format!(
            "no artifacts under {}; run the pipeline first",
            config.output_dir.display()
        )));
    }

    let mut manifest = BTreeMap::new();
    manifest.insert("config_hash".to_string(), config.config_hash());
    let report = json!({
        "sections": Value::Object(sections),
        "manifest": manifest,
    });
    write_json(&paths.report_json(), &report)?;
    write_text(&paths.report_txt(), &text)?;
    print!("{text}");
    log.info(
        "report_done",
        &format!(
            "wrote {} and {}",
            paths.report_json().display(),
            paths.report_txt().display()
        ),
        report.clone(),
    );
    Ok(report)
}
