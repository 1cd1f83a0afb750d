//! Error-to-exit-code policy.
//!
//! Exit 1 covers anything wrong with what the user handed us: unreadable or
//! malformed config, missing inputs, bad score matrices. Exit 2 is reserved
//! for a backend that stayed down through every retry. Exit 3 means an
//! artifact this tool previously wrote failed its own integrity checks
//! (version or fingerprint mismatch, broken pair invariants), which points
//! at tampering or a mixed-up output directory rather than user input.

use std::path::Path;

use pairforge::embed::EmbedError;
use pairforge::eval::EvalError;
use pairforge::extract::ExtractError;
use pairforge::jsonl::JsonlError;
use pairforge::kg::KgError;
use pairforge::pairgen::PairGenError;
use pairforge::stats::StatsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration: unparseable file, invalid settings, broken flags.
    #[error("{0}")]
    Config(String),
    /// Missing or malformed input data.
    #[error("{0}")]
    Input(String),
    /// A backend kept failing after every allowed retry.
    #[error("{0}")]
    Backend(String),
    /// A previously written artifact failed validation on the way back in.
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) => 1,
            CliError::Backend(_) => 2,
            CliError::Validation(_) => 3,
        }
    }
}

fn is_open(e: &JsonlError) -> bool {
    matches!(e, JsonlError::Open { .. })
}

/// Failure while loading the knowledge graph: absent files mean the stage
/// was never run; anything else means the files are damaged.
pub fn kg_load_error(e: KgError, dir: &Path) -> CliError {
    match &e {
        KgError::Jsonl(j) if is_open(j) => CliError::Input(format!(
            "knowledge graph not found under {}: {e}; run build-kg first",
            dir.display()
        )),
        _ => CliError::Validation(format!(
            "knowledge graph under {} failed validation: {e}",
            dir.display()
        )),
    }
}

/// Failure while loading a pair dataset; `produced_by` names the command
/// that should have written it.
pub fn dataset_load_error(e: PairGenError, path: &Path, produced_by: &str) -> CliError {
    match &e {
        PairGenError::Jsonl(j) if is_open(j) => CliError::Input(format!(
            "dataset not found at {}: {e}; run {produced_by} first",
            path.display()
        )),
        _ => CliError::Validation(format!(
            "dataset at {} failed validation: {e}",
            path.display()
        )),
    }
}

/// Extraction failures that escape the degraded-chunk path are payload or
/// integration bugs, not user input problems.
pub fn extract_error(e: ExtractError) -> CliError {
    match e {
        ExtractError::Corpus(c) => CliError::Input(c.to_string()),
        ExtractError::BackendExhausted { .. } => CliError::Backend(e.to_string()),
        ExtractError::Kg(_) | ExtractError::InvalidPayload(_) => {
            CliError::Validation(e.to_string())
        }
        ExtractError::Precondition { .. } => CliError::Input(e.to_string()),
    }
}

pub fn embed_error(e: EmbedError) -> CliError {
    match e {
        EmbedError::Backend(inner) => CliError::Backend(inner.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

pub fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::Embed(inner) => embed_error(inner),
        other => CliError::Input(other.to_string()),
    }
}

pub fn stats_error(e: StatsError) -> CliError {
    match e {
        StatsError::InvalidParam(_) => CliError::Config(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

pub fn write_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Config(format!(
        "cannot write {}: {e}; check that the output directory is writable",
        path.display()
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_the_error_class() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 1);
        assert_eq!(CliError::Input("x".into()).exit_code(), 1);
        assert_eq!(CliError::Backend("x".into()).exit_code(), 2);
        assert_eq!(CliError::Validation("x".into()).exit_code(), 3);
    }

    #[test]
    fn missing_graph_reads_as_input_with_a_hint() {
        let err = KgError::Jsonl(JsonlError::Open {
            path: "/tmp/nope/nodes.jsonl".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
        let mapped = kg_load_error(err, Path::new("/tmp/nope"));
        assert_eq!(mapped.exit_code(), 1);
        assert!(mapped.to_string().contains("run build-kg first"));
    }

    #[test]
    fn damaged_graph_reads_as_validation() {
        let err = KgError::VersionMismatch {
            path: "/tmp/kg/nodes.jsonl".into(),
            found: 99,
            expected: 1,
        };
        let mapped = kg_load_error(err, Path::new("/tmp/kg"));
        assert_eq!(mapped.exit_code(), 3);
    }
}
