//! Retrieval evaluation: Acc@k and NDCG@k over ranked runs, plus a
//! benchmark driver that embeds a corpus, retrieves for every query, and
//! renders the scores as percentages.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::{self, EmbedError, EmbedRole, EmbeddingBackend, SearchHit};
use crate::jsonl::{self, JsonlError};

pub const RUN_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no queries to evaluate")]
    EmptyRun,
    #[error("no cut-offs requested")]
    NoCutoffs,
    #[error("query {query_id:?} lists no relevant documents")]
    NoRelevant { query_id: String },
    #[error("query {query_id:?} names relevant documents missing from the corpus: {missing:?}")]
    UnknownRelevant {
        query_id: String,
        missing: Vec<String>,
    },
    #[error("duplicate query_id {0:?}")]
    DuplicateQuery(String),
    #[error("run has no result list for query {0:?}")]
    MissingQuery(String),
    #[error("run contains query {0:?} absent from the query set")]
    UnknownQuery(String),
    #[error("run depth {depth} cannot answer k={k} over a corpus of {corpus_size}")]
    DepthTooShallow {
        depth: usize,
        k: usize,
        corpus_size: usize,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    BadHeader { path: PathBuf, message: String },
}

/// An evaluation query with its gold documents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: String,
    pub text: String,
    pub language: String,
    pub relevant_doc_ids: Vec<String>,
}

/// Ranked retrieval results for a whole query set, cut at `depth`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievalRun {
    pub backend_id: String,
    pub depth: usize,
    pub corpus_size: usize,
    pub results: BTreeMap<String, Vec<SearchHit>>,
}

fn relevance_sets(queries: &[QueryRecord]) -> Result<BTreeMap<&str, BTreeSet<&str>>, EvalError> {
    let mut out: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for q in queries {
        if q.relevant_doc_ids.is_empty() {
            return Err(EvalError::NoRelevant {
                query_id: q.query_id.clone(),
            });
        }
        let set: BTreeSet<&str> = q.relevant_doc_ids.iter().map(|d| d.as_str()).collect();
        if out.insert(q.query_id.as_str(), set).is_some() {
            return Err(EvalError::DuplicateQuery(q.query_id.clone()));
        }
    }
    Ok(out)
}

fn check_alignment(run: &RetrievalRun, queries: &[QueryRecord], k: usize) -> Result<(), EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    if k > run.depth && run.depth < run.corpus_size {
        return Err(EvalError::DepthTooShallow {
            depth: run.depth,
            k,
            corpus_size: run.corpus_size,
        });
    }
    for q in queries {
        if !run.results.contains_key(&q.query_id) {
            return Err(EvalError::MissingQuery(q.query_id.clone()));
        }
    }
    if run.results.len() != queries.len() {
        let known: BTreeSet<&str> = queries.iter().map(|q| q.query_id.as_str()).collect();
        let stray = run
            .results
            .keys()
            .find(|id| !known.contains(id.as_str()))
            .expect("count mismatch implies a stray id");
        return Err(EvalError::UnknownQuery(stray.clone()));
    }
    Ok(())
}

/// Fraction of queries with at least one relevant document in the top `k`.
pub fn acc_at_k(run: &RetrievalRun, queries: &[QueryRecord], k: usize) -> Result<f64, EvalError> {
    check_alignment(run, queries, k)?;
    let relevant = relevance_sets(queries)?;
    let mut hits = 0usize;
    for q in queries {
        let rel = &relevant[q.query_id.as_str()];
        let list = &run.results[&q.query_id];
        if list.iter().take(k).any(|h| rel.contains(h.doc_id.as_str())) {
            hits += 1;
        }
    }
    Ok(hits as f64 / queries.len() as f64)
}

/// Mean NDCG@k with binary gains: DCG sums `1/log2(rank+1)` over relevant
/// hits in the top `k`; the ideal places `min(k, |relevant|)` ones first.
pub fn ndcg_at_k(run: &RetrievalRun, queries: &[QueryRecord], k: usize) -> Result<f64, EvalError> {
    check_alignment(run, queries, k)?;
    let relevant = relevance_sets(queries)?;
    let mut total = 0.0f64;
    for q in queries {
        let rel = &relevant[q.query_id.as_str()];
        let list = &run.results[&q.query_id];
        let dcg: f64 = list
            .iter()
            .take(k)
            .enumerate()
            .filter(|(_, h)| rel.contains(h.doc_id.as_str()))
            .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
            .sum();
        let ideal_hits = k.min(rel.len());
        let idcg: f64 = (0..ideal_hits).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
        total += dcg / idcg;
    }
    Ok(total / queries.len() as f64)
}

/// Scores for one backend, keyed `acc@k` / `ndcg@k`, stored as fractions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub backend_id: String,
    pub ks: Vec<usize>,
    pub metrics: BTreeMap<String, f64>,
}

impl MetricReport {
    pub fn from_run(
        run: &RetrievalRun,
        queries: &[QueryRecord],
        ks: &[usize],
    ) -> Result<Self, EvalError> {
        if ks.is_empty() {
            return Err(EvalError::NoCutoffs);
        }
        let mut metrics = BTreeMap::new();
        for &k in ks {
            metrics.insert(format!("acc@{k}"), acc_at_k(run, queries, k)?);
            metrics.insert(format!("ndcg@{k}"), ndcg_at_k(run, queries, k)?);
        }
        Ok(MetricReport {
            backend_id: run.backend_id.clone(),
            ks: ks.to_vec(),
            metrics,
        })
    }

    /// Column labels in report order: accuracies first, then NDCG, each in
    /// ascending k.
    pub fn column_keys(ks: &[usize]) -> Vec<String> {
        let mut sorted: Vec<usize> = ks.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        let mut keys: Vec<String> = sorted.iter().map(|k| format!("acc@{k}")).collect();
        keys.extend(sorted.iter().map(|k| format!("ndcg@{k}")));
        keys
    }
}

/// Render a fraction as a percentage with two decimals: `0.925` → `92.50`.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

/// Aligned text table over one or more reports sharing the same cut-offs.
pub fn render_score_table(reports: &[MetricReport]) -> String {
    if reports.is_empty() {
        return String::new();
    }
    let keys = MetricReport::column_keys(&reports[0].ks);
    let headers: Vec<String> = std::iter::once("model".to_string())
        .chain(keys.iter().map(|k| {
            let (name, at) = k.split_once('@').unwrap_or((k.as_str(), ""));
            let label = match name {
                "acc" => "Acc",
                "ndcg" => "NDCG",
                other => other,
            };
            format!("{label}@{at}")
        }))
        .collect();
    let mut rows: Vec<Vec<String>> = vec![headers];
    for report in reports {
        let mut row = vec![report.backend_id.clone()];
        for key in &keys {
            row.push(match report.metrics.get(key) {
                Some(v) => percent(*v),
                None => "-".to_string(),
            });
        }
        rows.push(row);
    }
    let width: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                if c == 0 {
                    format!("{cell:<w$}", w = width[c])
                } else {
                    format!("{cell:>w$}", w = width[c])
                }
            })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Embed the corpus and queries, retrieve the deepest requested cut-off for
/// every query, and score the run.
pub fn run_benchmark(
    queries: &[QueryRecord],
    corpus: &[(String, String)],
    backend: &dyn EmbeddingBackend,
    ks: &[usize],
    batch_size: usize,
) -> Result<(RetrievalRun, MetricReport), EvalError> {
    if queries.is_empty() {
        return Err(EvalError::EmptyRun);
    }
    if ks.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    let corpus_ids: BTreeSet<&str> = corpus.iter().map(|(id, _)| id.as_str()).collect();
    for q in queries {
        if q.relevant_doc_ids.is_empty() {
            return Err(EvalError::NoRelevant {
                query_id: q.query_id.clone(),
            });
        }
        let missing: Vec<String> = q
            .relevant_doc_ids
            .iter()
            .filter(|d| !corpus_ids.contains(d.as_str()))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(EvalError::UnknownRelevant {
                query_id: q.query_id.clone(),
                missing,
            });
        }
    }
    let index = embed::build_index(corpus, backend, batch_size)?;
    let depth = *ks.iter().max().expect("ks non-empty");

    let mut results = BTreeMap::new();
    let batch_size = batch_size.max(1);
    for chunk in queries.chunks(batch_size) {
        let texts: Vec<String> = chunk.iter().map(|q| q.text.clone()).collect();
        let vectors = backend
            .embed_batch(&texts, EmbedRole::Query)
            .map_err(EmbedError::from)?;
        if vectors.len() != chunk.len() {
            return Err(EmbedError::BatchShape {
                expected: chunk.len(),
                got: vectors.len(),
            }
            .into());
        }
        for (q, v) in chunk.iter().zip(vectors) {
            if results.contains_key(&q.query_id) {
                return Err(EvalError::DuplicateQuery(q.query_id.clone()));
            }
            results.insert(q.query_id.clone(), index.top_k(&v, depth)?);
        }
    }
    let run = RetrievalRun {
        backend_id: backend.id().to_string(),
        depth,
        corpus_size: corpus.len(),
        results,
    };
    let report = MetricReport::from_run(&run, queries, ks)?;
    Ok((run, report))
}

#[derive(Debug, Serialize, Deserialize)]
struct RunHeader {
    format_version: u32,
    backend_id: String,
    depth: usize,
    corpus_size: usize,
    record_count: usize,
    #[serde(default)]
    manifest: BTreeMap<String, String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RunLine {
    query_id: String,
    hits: Vec<SearchHit>,
}

/// Persist a run for audit: a manifest header line, then one ranked list
/// per query.
pub fn save_run(
    run: &RetrievalRun,
    path: &Path,
    manifest: &BTreeMap<String, String>,
) -> Result<(), EvalError> {
    let header = RunHeader {
        format_version: RUN_FORMAT_VERSION,
        backend_id: run.backend_id.clone(),
        depth: run.depth,
        corpus_size: run.corpus_size,
        record_count: run.results.len(),
        manifest: manifest.clone(),
    };
    let mut buf = serde_json::to_string(&header).expect("header serializes");
    buf.push('\n');
    for (query_id, hits) in &run.results {
        let line = RunLine {
            query_id: query_id.clone(),
            hits: hits.clone(),
        };
        buf.push_str(&serde_json::to_string(&line).expect("line serializes"));
        buf.push('\n');
    }
    std::fs::write(path, buf).map_err(|source| EvalError::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_run(path: &Path) -> Result<RetrievalRun, EvalError> {
    let mut iter = jsonl::read_records::<serde_json::Value>(path)?;
    let header_line = iter.next().ok_or_else(|| EvalError::BadHeader {
        path: path.to_path_buf(),
        message: "missing header line".into(),
    })??;
    let header: RunHeader =
        serde_json::from_value(header_line.value).map_err(|e| EvalError::BadHeader {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    if header.format_version != RUN_FORMAT_VERSION {
        return Err(EvalError::BadHeader {
            path: path.to_path_buf(),
            message: format!(
                "format_version {} unsupported (expected {})",
                header.format_version, RUN_FORMAT_VERSION
            ),
        });
    }
    let mut results = BTreeMap::new();
    for item in iter {
        let located = item?;
        let line: RunLine =
            serde_json::from_value(located.value).map_err(|e| JsonlError::Malformed {
                path: path.to_path_buf(),
                line: located.line,
                message: e.to_string(),
            })?;
        results.insert(line.query_id, line.hits);
    }
    if results.len() != header.record_count {
        return Err(EvalError::BadHeader {
            path: path.to_path_buf(),
            message: format!(
                "header promises {} records, found {}",
                header.record_count,
                results.len()
            ),
        });
    }
    Ok(RetrievalRun {
        backend_id: header.backend_id,
        depth: header.depth,
        corpus_size: header.corpus_size,
        results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MockEmbedder;
    use proptest::prelude::*;

    fn hit(id: &str, score: f64) -> SearchHit {
        SearchHit {
            doc_id: id.into(),
            score,
        }
    }

    fn single_query_run(list: Vec<SearchHit>, corpus_size: usize) -> (RetrievalRun, Vec<QueryRecord>) {
        let mut results = BTreeMap::new();
        results.insert("q1".to_string(), list);
        let run = RetrievalRun {
            backend_id: "test".into(),
            depth: 10,
            corpus_size,
            results,
        };
        let queries = vec![QueryRecord {
            query_id: "q1".into(),
            text: "t".into(),
            language: "en".into(),
            relevant_doc_ids: vec!["gold".into()],
        }];
        (run, queries)
    }

    #[test]
    fn acc_counts_any_relevant_in_cutoff() {
        let (run, queries) = single_query_run(
            vec![hit("a", 0.9), hit("b", 0.8), hit("c", 0.7), hit("gold", 0.6)],
            20,
        );
        assert_eq!(acc_at_k(&run, &queries, 3).unwrap(), 0.0);
        assert_eq!(acc_at_k(&run, &queries, 4).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_matches_hand_value_for_relevant_at_rank_two() {
        let (run, queries) =
            single_query_run(vec![hit("x", 0.9), hit("gold", 0.8), hit("y", 0.7)], 20);
        let got = ndcg_at_k(&run, &queries, 3).unwrap();
        assert!((got - 0.630_929_753_571_457_4).abs() < 1e-12, "{got}");
    }

    #[test]
    fn ndcg_with_two_relevant_documents() {
        let mut results = BTreeMap::new();
        results.insert(
            "q1".to_string(),
            vec![hit("g1", 0.9), hit("x", 0.8), hit("g2", 0.7)],
        );
        let run = RetrievalRun {
            backend_id: "test".into(),
            depth: 3,
            corpus_size: 10,
            results,
        };
        let queries = vec![QueryRecord {
            query_id: "q1".into(),
            text: "t".into(),
            language: "en".into(),
            relevant_doc_ids: vec!["g1".into(), "g2".into()],
        }];
        // DCG = 1 + 1/log2(4); IDCG = 1 + 1/log2(3)
        let expected = (1.0 + 0.5) / (1.0 + 1.0 / 3.0f64.log2());
        let got = ndcg_at_k(&run, &queries, 3).unwrap();
        assert!((got - expected).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_scores_one() {
        let (run, queries) = single_query_run(vec![hit("gold", 1.0), hit("b", 0.5)], 2);
        assert_eq!(acc_at_k(&run, &queries, 3).unwrap(), 1.0);
        assert_eq!(ndcg_at_k(&run, &queries, 3).unwrap(), 1.0);
    }

    #[test]
    fn depth_shallower_than_k_is_an_error_unless_corpus_is_small() {
        let (mut run, queries) = single_query_run(vec![hit("gold", 1.0)], 50);
        run.depth = 3;
        assert!(matches!(
            acc_at_k(&run, &queries, 10),
            Err(EvalError::DepthTooShallow { .. })
        ));
        run.corpus_size = 1;
        assert_eq!(acc_at_k(&run, &queries, 10).unwrap(), 1.0);
    }

    #[test]
    fn alignment_errors() {
        let (run, mut queries) = single_query_run(vec![hit("gold", 1.0)], 5);
        let extra = QueryRecord {
            query_id: "q2".into(),
            text: "t".into(),
            language: "en".into(),
            relevant_doc_ids: vec!["gold".into()],
        };
        let mut with_extra = queries.clone();
        with_extra.push(extra);
        assert!(matches!(
            acc_at_k(&run, &with_extra, 1),
            Err(EvalError::MissingQuery(_))
        ));

        queries[0].query_id = "other".into();
        assert!(matches!(
            acc_at_k(&run, &queries, 1),
            Err(EvalError::MissingQuery(_))
        ));
    }

    #[test]
    fn zero_relevant_query_is_rejected() {
        let (run, mut queries) = single_query_run(vec![hit("gold", 1.0)], 5);
        queries[0].relevant_doc_ids.clear();
        assert!(matches!(
            acc_at_k(&run, &queries, 1),
            Err(EvalError::NoRelevant { .. })
        ));
    }

    #[test]
    fn percent_renders_two_decimals() {
        assert_eq!(percent(1.0), "100.00");
        assert_eq!(percent(0.630_929_753_5), "63.09");
        assert_eq!(percent(0.9262), "92.62");
    }

    #[test]
    fn score_table_has_report_column_order() {
        let mut metrics = BTreeMap::new();
        metrics.insert("acc@3".to_string(), 0.9262);
        metrics.insert("acc@10".to_string(), 0.9754);
        metrics.insert("ndcg@3".to_string(), 0.8725);
        metrics.insert("ndcg@10".to_string(), 0.8925);
        let report = MetricReport {
            backend_id: "mock".into(),
            ks: vec![3, 10],
            metrics,
        };
        let table = render_score_table(&[report]);
        let mut lines = table.lines();
        let header = lines.next().unwrap();
        assert!(header.contains("Acc@3"));
        let cols: Vec<&str> = header.split_whitespace().collect();
        assert_eq!(cols, vec!["model", "Acc@3", "Acc@10", "NDCG@3", "NDCG@10"]);
        let row = lines.next().unwrap();
        assert_eq!(
            row.split_whitespace().collect::<Vec<_>>(),
            vec!["mock", "92.62", "97.54", "87.25", "89.25"]
        );
    }

    #[test]
    fn self_retrieval_scores_a_hundred_percent() {
        let corpus: Vec<(String, String)> = vec![
            ("d1".into(), "η ακρόπολη των αθηνών".into()),
            ("d2".into(), "the parliament building".into()),
            ("d3".into(), "το σύνταγμα της ελλάδας".into()),
            ("d4".into(), "public administration records".into()),
        ];
        let queries: Vec<QueryRecord> = corpus
            .iter()
            .map(|(id, text)| QueryRecord {
                query_id: format!("q-{id}"),
                text: text.clone(),
                language: "el".into(),
                relevant_doc_ids: vec![id.clone()],
            })
            .collect();
        let backend = MockEmbedder::default();
        let (_, report) = run_benchmark(&queries, &corpus, &backend, &[3, 10], 32).unwrap();
        for key in ["acc@3", "acc@10", "ndcg@3", "ndcg@10"] {
            assert_eq!(percent(report.metrics[key]), "100.00", "{key}");
        }
    }

    #[test]
    fn benchmark_rejects_unknown_relevant_docs() {
        let corpus = vec![("d1".to_string(), "text".to_string())];
        let queries = vec![QueryRecord {
            query_id: "q1".into(),
            text: "text".into(),
            language: "en".into(),
            relevant_doc_ids: vec!["ghost".into()],
        }];
        let backend = MockEmbedder::default();
        let err = run_benchmark(&queries, &corpus, &backend, &[3], 8).unwrap_err();
        match err {
            EvalError::UnknownRelevant { missing, .. } => assert_eq!(missing, vec!["ghost"]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn run_round_trips_through_disk() {
        let (run, _) = single_query_run(vec![hit("gold", 1.0), hit("b", 0.25)], 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut manifest = BTreeMap::new();
        manifest.insert("config".to_string(), "abc123".to_string());
        save_run(&run, &path, &manifest).unwrap();
        let loaded = load_run(&path).unwrap();
        assert_eq!(loaded.backend_id, run.backend_id);
        assert_eq!(loaded.depth, run.depth);
        assert_eq!(loaded.corpus_size, run.corpus_size);
        assert_eq!(loaded.results, run.results);
    }

    #[test]
    fn truncated_run_file_is_detected() {
        let (run, _) = single_query_run(vec![hit("gold", 1.0)], 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        save_run(&run, &path, &BTreeMap::new()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let header_only = text.lines().next().unwrap();
        std::fs::write(&path, format!("{header_only}\n")).unwrap();
        assert!(matches!(load_run(&path), Err(EvalError::BadHeader { .. })));
    }

    proptest! {
        /// Accuracy and NDCG live in [0, 1] and never decrease with k.
        #[test]
        fn metrics_bounded_and_monotone_in_k(
            gold_rank in 0usize..12,
            list_len in 12usize..20,
        ) {
            let list: Vec<SearchHit> = (0..list_len)
                .map(|i| {
                    let id = if i == gold_rank { "gold".to_string() } else { format!("d{i}") };
                    hit(&id, 1.0 - i as f64 / 100.0)
                })
                .collect();
            let (mut run, queries) = single_query_run(list, 64);
            run.depth = 20;
            let mut last_acc = 0.0f64;
            let mut last_ndcg = 0.0f64;
            for k in [1usize, 3, 10, 20] {
                let acc = acc_at_k(&run, &queries, k).unwrap();
                let ndcg = ndcg_at_k(&run, &queries, k).unwrap();
                prop_assert!((0.0..=1.0).contains(&acc));
                prop_assert!((0.0..=1.0).contains(&ndcg));
                prop_assert!(acc + 1e-12 >= last_acc);
                prop_assert!(ndcg + 1e-12 >= last_ndcg);
                last_acc = acc;
                last_ndcg = ndcg;
            }
        }
    }
}
