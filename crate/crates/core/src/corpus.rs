//! Corpus ingestion and character-based chunking.
//!
//! Documents arrive as JSON Lines (`doc_id`, `language`, `title`, `body`,
//! `source`, optional `queries`). Text is normalized to Unicode NFC at the
//! door so every downstream stage sees one canonical composed form; chunking
//! then operates purely on character counts, which keeps results identical
//! across platforms.
//!
//! # Chunking
//!
//! A document body is cut into consecutive chunks of at most `chunk_size`
//! characters. Each provisional cut snaps backward to the rightmost
//! whitespace within `boundary_slack` characters so words stay intact; when
//! the window holds no whitespace the cut lands hard at `chunk_size`. The
//! whitespace run at a snapped boundary belongs to no chunk, so joining the
//! chunk texts with the skipped runs reproduces the body exactly.
//!
//! ```
//! use pairforge::corpus::{chunk_document, ChunkingConfig, DocumentRecord};
//!
//! let doc = DocumentRecord::new("d1", "en", "t", "alpha beta gamma delta", "demo");
//! let cfg = ChunkingConfig { chunk_size: 12, boundary_slack: 6 };
//! let chunks = chunk_document(&doc, &cfg).unwrap();
//! assert_eq!(chunks[0].text, "alpha beta");
//! assert_eq!(chunks[1].text, "gamma delta");
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::jsonl::{self, JsonlError};
use crate::util;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("cannot read corpus location {path}: {source}")]
    Location {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid record in {path} at line {line}: {message}")]
    InvalidRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate doc_id {doc_id:?} in {path} at line {line}")]
    DuplicateDocId {
        doc_id: String,
        path: PathBuf,
        line: usize,
    },
    #[error("invalid chunking config: {0}")]
    InvalidChunking(String),
}

impl CorpusError {
    /// Per-record problems are reportable and skippable; everything else
    /// should abort the run.
    pub fn is_fatal(&self) -> bool {
        !matches!(
            self,
            CorpusError::InvalidRecord { .. } | CorpusError::Jsonl(JsonlError::Malformed { .. })
        )
    }
}

/// Languages the pipeline accepts; documents tagged outside the set are
/// rejected at ingestion.
pub type LanguageSet = BTreeSet<String>;

/// The default bilingual configuration: Greek and English.
pub fn default_languages() -> LanguageSet {
    ["el", "en"].iter().map(|s| s.to_string()).collect()
}

/// One source document. `queries` carries retrieval queries shipped with
/// query-bearing corpora; it stays empty everywhere else.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub language: String,
    pub title: String,
    pub body: String,
    /// Corpus label; files may omit it, the pipeline stamps it at ingestion.
    #[serde(default)]
    pub source: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub queries: Vec<String>,
}

impl DocumentRecord {
    pub fn new(doc_id: &str, language: &str, title: &str, body: &str, source: &str) -> Self {
        DocumentRecord {
            doc_id: doc_id.to_string(),
            language: language.to_string(),
            title: title.to_string(),
            body: body.to_string(),
            source: source.to_string(),
            queries: Vec::new(),
        }
        .normalized()
    }

    /// NFC-normalize the textual payload.
    pub fn normalized(mut self) -> Self {
        self.title = nfc(&self.title);
        self.body = nfc(&self.body);
        self.queries = self.queries.iter().map(|q| nfc(q)).collect();
        self
    }

    fn validate(&self) -> Result<(), String> {
        if self.doc_id.is_empty() {
            return Err("doc_id is empty".into());
        }
        if self.body.is_empty() {
            return Err(format!("document {:?} has an empty body", self.doc_id));
        }
        if self.language.is_empty() {
            return Err(format!("document {:?} has no language tag", self.doc_id));
        }
        Ok(())
    }
}

/// Normalize to Unicode NFC.
pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

/// One chunk of a document. Spans are character offsets into the normalized
/// body, so `body[span_start..span_end]` (counted in chars) equals `text`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: u32,
    pub text: String,
    pub language: String,
    pub span_start: usize,
    pub span_end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkingConfig {
    /// Maximum chunk length in characters.
    pub chunk_size: usize,
    /// How far a cut may snap backward to find whitespace.
    pub boundary_slack: usize,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        ChunkingConfig {
            chunk_size: 480,
            boundary_slack: 48,
        }
    }
}

impl ChunkingConfig {
    pub fn validate(&self) -> Result<(), CorpusError> {
        if self.chunk_size == 0 {
            return Err(CorpusError::InvalidChunking("chunk_size must be > 0".into()));
        }
        if self.boundary_slack >= self.chunk_size {
            return Err(CorpusError::InvalidChunking(format!(
                "boundary_slack ({}) must be smaller than chunk_size ({})",
                self.boundary_slack, self.chunk_size
            )));
        }
        Ok(())
    }
}

/// Split a document body into chunks. Ordinals are contiguous from zero and
/// spans ascend without overlap; the only characters not covered by a span
/// are the whitespace runs at snapped boundaries.
pub fn chunk_document(
    doc: &DocumentRecord,
    cfg: &ChunkingConfig,
) -> Result<Vec<ChunkRecord>, CorpusError> {
    cfg.validate()?;
    let chars: Vec<char> = doc.body.chars().collect();
    let n = chars.len();
    let mut chunks = Vec::new();
    let mut pos = 0usize;
    let mut ordinal = 0u32;
    while pos < n {
        let end = if n - pos <= cfg.chunk_size {
            n
        } else {
            let hard = pos + cfg.chunk_size;
            let floor = hard - cfg.boundary_slack;
            (floor..=hard)
                .rev()
                .find(|&c| chars[c].is_whitespace())
                .unwrap_or(hard)
        };
        chunks.push(ChunkRecord {
            chunk_id: util::chunk_id(&doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            ordinal,
            text: chars[pos..end].iter().collect(),
            language: doc.language.clone(),
            span_start: pos,
            span_end: end,
        });
        ordinal += 1;
        pos = end;
        while pos < n && chars[pos].is_whitespace() {
            pos += 1;
        }
    }
    Ok(chunks)
}

/// Stream documents from a `.jsonl` file or a directory of `.jsonl` files
/// (read in name order). Each yielded item is either a validated,
/// NFC-normalized record or a per-record error; a duplicate `doc_id` anywhere
/// in the stream is a fatal error.
pub fn ingest_corpus(
    path: &Path,
    languages: &LanguageSet,
) -> Result<impl Iterator<Item = Result<DocumentRecord, CorpusError>>, CorpusError> {
    let files = corpus_files(path)?;
    let languages = languages.clone();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    let mut iters = Vec::new();
    for file in files {
        let records = jsonl::read_records::<DocumentRecord>(&file)?;
        iters.push((file, records));
    }
    Ok(iters.into_iter().flat_map(move |(file, records)| {
        let languages = languages.clone();
        // `seen` is shared across files via the captured set.
        let mut local_seen = std::mem::take(&mut seen);
        let collected: Vec<Result<DocumentRecord, CorpusError>> = records
            .map(|item| match item {
                Err(e) => Err(CorpusError::Jsonl(e)),
                Ok(located) => {
                    let doc = located.value.normalized();
                    if let Err(message) = doc.validate() {
                        return Err(CorpusError::InvalidRecord {
                            path: file.clone(),
                            line: located.line,
                            message,
                        });
                    }
                    if !languages.contains(&doc.language) {
                        return Err(CorpusError::InvalidRecord {
                            path: file.clone(),
                            line: located.line,
                            message: format!(
                                "document {:?} has language {:?}, not one of the configured languages",
                                doc.doc_id, doc.language
                            ),
                        });
                    }
                    if !local_seen.insert(doc.doc_id.clone()) {
                        return Err(CorpusError::DuplicateDocId {
                            doc_id: doc.doc_id.clone(),
                            path: file.clone(),
                            line: located.line,
                        });
                    }
                    Ok(doc)
                }
            })
            .collect();
        seen = local_seen;
        collected.into_iter()
    }))
}

fn corpus_files(path: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let meta = std::fs::metadata(path).map_err(|source| CorpusError::Location {
        path: path.to_path_buf(),
        source,
    })?;
    if meta.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|source| CorpusError::Location {
            path: path.to_path_buf(),
            source,
        })?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc(body: &str) -> DocumentRecord {
        DocumentRecord::new("d1", "el", "τίτλος", body, "test")
    }

    /// Independent enumeration of legal cut points: list every whitespace
    /// position in the slack window, take the greatest, fall back to the
    /// hard cut.
    fn oracle_cuts(body: &str, cfg: &ChunkingConfig) -> Vec<(usize, usize)> {
        let chars: Vec<char> = body.chars().collect();
        let mut spans = Vec::new();
        let mut pos = 0;
        while pos < chars.len() {
            let remaining = chars.len() - pos;
            let end = if remaining <= cfg.chunk_size {
                chars.len()
            } else {
                let hard = pos + cfg.chunk_size;
                let candidates: Vec<usize> = (hard - cfg.boundary_slack..=hard)
                    .filter(|&c| chars[c].is_whitespace())
                    .collect();
                candidates.into_iter().max().unwrap_or(hard)
            };
            spans.push((pos, end));
            pos = end;
            while pos < chars.len() && chars[pos].is_whitespace() {
                pos += 1;
            }
        }
        spans
    }

    #[test]
    fn snaps_back_to_whitespace() {
        let cfg = ChunkingConfig {
            chunk_size: 12,
            boundary_slack: 6,
        };
        let chunks = chunk_document(&doc("alpha beta gamma delta"), &cfg).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "alpha beta");
        assert_eq!(chunks[1].text, "gamma delta");
        let expected = oracle_cuts("alpha beta gamma delta", &cfg);
        let actual: Vec<(usize, usize)> =
            chunks.iter().map(|c| (c.span_start, c.span_end)).collect();
        assert_eq!(actual, expected);
    }

    #[test]
    fn short_body_is_one_chunk() {
        let cfg = ChunkingConfig {
            chunk_size: 100,
            boundary_slack: 10,
        };
        let chunks = chunk_document(&doc("σύντομο κείμενο"), &cfg).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, "σύντομο κείμενο");
        assert_eq!(chunks[0].ordinal, 0);
    }

    #[test]
    fn unbroken_run_forces_hard_cuts() {
        let cfg = ChunkingConfig {
            chunk_size: 50,
            boundary_slack: 20,
        };
        let body = "a".repeat(100);
        let chunks = chunk_document(&doc(&body), &cfg).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.text.chars().count() == 50));
    }

    #[test]
    fn zero_chunk_size_is_rejected() {
        let cfg = ChunkingConfig {
            chunk_size: 0,
            boundary_slack: 0,
        };
        assert!(chunk_document(&doc("x"), &cfg).is_err());
    }

    #[test]
    fn slack_must_stay_below_chunk_size() {
        let cfg = ChunkingConfig {
            chunk_size: 10,
            boundary_slack: 10,
        };
        assert!(matches!(
            chunk_document(&doc("x"), &cfg),
            Err(CorpusError::InvalidChunking(_))
        ));
    }

    #[test]
    fn nfc_normalization_composes_decomposed_greek() {
        // "ά" written as alpha + combining acute becomes the composed form.
        let decomposed = "\u{03b1}\u{0301}";
        let record = DocumentRecord::new("d", "el", "", decomposed, "t");
        assert_eq!(record.body, "\u{03ac}");
        assert_eq!(record.body.chars().count(), 1);
    }

    #[test]
    fn ingest_reports_malformed_line_and_keeps_valid_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(
            f,
            "{}",
            serde_json::json!({"doc_id": "a", "language": "el", "title": "", "body": "κείμενο", "source": "t"})
        )
        .unwrap();
        writeln!(f, "not json").unwrap();
        drop(f);

        let items: Vec<_> = ingest_corpus(&path, &default_languages())
            .unwrap()
            .collect();
        assert_eq!(items.len(), 2);
        assert!(items[0].is_ok());
        match items[1].as_ref().unwrap_err() {
            CorpusError::Jsonl(JsonlError::Malformed { line, .. }) => assert_eq!(*line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(!items[1].as_ref().unwrap_err().is_fatal());
    }

    #[test]
    fn ingest_rejects_duplicate_doc_ids_as_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let rec = serde_json::json!({"doc_id": "a", "language": "el", "title": "", "body": "x", "source": "t"});
        std::fs::write(&path, format!("{rec}\n{rec}\n")).unwrap();
        let items: Vec<_> = ingest_corpus(&path, &default_languages())
            .unwrap()
            .collect();
        assert!(items[0].is_ok());
        let err = items[1].as_ref().unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateDocId { .. }));
        assert!(err.is_fatal());
    }

    #[test]
    fn ingest_rejects_unknown_language_and_empty_body() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let bad_lang = serde_json::json!({"doc_id": "a", "language": "fr", "title": "", "body": "x", "source": "t"});
        let empty_body = serde_json::json!({"doc_id": "b", "language": "el", "title": "", "body": "", "source": "t"});
        std::fs::write(&path, format!("{bad_lang}\n{empty_body}\n")).unwrap();
        let items: Vec<_> = ingest_corpus(&path, &default_languages())
            .unwrap()
            .collect();
        assert!(items
            .iter()
            .all(|i| matches!(i, Err(CorpusError::InvalidRecord { .. }))));
    }

    #[test]
    fn ingest_empty_directory_yields_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let items: Vec<_> = ingest_corpus(dir.path(), &default_languages())
            .unwrap()
            .collect();
        assert!(items.is_empty());
    }

    proptest! {
        /// Joining chunk texts with the skipped boundary whitespace
        /// reproduces the body, chunk lengths respect the cap, ordinals are
        /// contiguous, and spans match the independent cut enumeration.
        #[test]
        fn chunking_reconstructs_body(
            words in proptest::collection::vec("[a-zα-ω]{1,12}", 1..60),
            seps in proptest::collection::vec(prop_oneof![Just(" "), Just("  "), Just("\n"), Just("\t ")], 0..59),
            chunk_size in 4usize..40,
            slack_frac in 0usize..100,
        ) {
            let mut body = String::new();
            for (i, w) in words.iter().enumerate() {
                if i > 0 {
                    body.push_str(seps.get(i - 1).copied().unwrap_or(" "));
                }
                body.push_str(w);
            }
            let slack = (chunk_size - 1) * slack_frac / 100;
            let cfg = ChunkingConfig { chunk_size, boundary_slack: slack };
            let record = doc(&body);
            let chunks = chunk_document(&record, &cfg).unwrap();
            let chars: Vec<char> = record.body.chars().collect();

            let expected = oracle_cuts(&record.body, &cfg);
            let actual: Vec<(usize, usize)> = chunks.iter().map(|c| (c.span_start, c.span_end)).collect();
            prop_assert_eq!(&actual, &expected);

            let mut rebuilt = String::new();
            let mut cursor = 0usize;
            for c in &chunks {
                prop_assert_eq!(c.ordinal as usize, chunks.iter().position(|x| x.chunk_id == c.chunk_id).unwrap());
                prop_assert!(c.span_start >= cursor);
                let gap: String = chars[cursor..c.span_start].iter().collect();
                prop_assert!(gap.chars().all(char::is_whitespace));
                rebuilt.push_str(&gap);
                rebuilt.push_str(&c.text);
                prop_assert!(c.text.chars().count() <= cfg.chunk_size + cfg.boundary_slack);
                prop_assert!(c.text.chars().count() <= cfg.chunk_size);
                cursor = c.span_end;
            }
            let tail: String = chars[cursor..].iter().collect();
            prop_assert!(tail.chars().all(char::is_whitespace));
            rebuilt.push_str(&tail);
            prop_assert_eq!(rebuilt, record.body);
        }
    }
}
