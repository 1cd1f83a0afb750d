//! Line-oriented JSON reading with positional error reporting.
//!
//! Every persistent artifact in this workspace is JSON Lines. Readers here
//! attach the 1-based line number to parse failures so a corrupted artifact
//! is reported by location instead of as a bare serde error.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("cannot open {path}: {source}")]
    Open {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("read error in {path} at line {line}: {source}")]
    Read {
        path: PathBuf,
        line: usize,
        source: std::io::Error,
    },
    #[error("malformed record in {path} at line {line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// One parsed line: the payload plus where it came from.
#[derive(Debug)]
pub struct Located<T> {
    pub line: usize,
    pub value: T,
}

/// Iterate records of type `T`, skipping blank lines, yielding one result
/// per non-blank line.
pub fn read_records<T: DeserializeOwned>(
    path: &Path,
) -> Result<impl Iterator<Item = Result<Located<T>, JsonlError>>, JsonlError> {
    let file = File::open(path).map_err(|source| JsonlError::Open {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let path = path.to_path_buf();
    Ok(reader
        .lines()
        .enumerate()
        .filter_map(move |(idx, line)| {
            let lineno = idx + 1;
            match line {
                Err(source) => Some(Err(JsonlError::Read {
                    path: path.clone(),
                    line: lineno,
                    source,
                })),
                Ok(text) => {
                    if text.trim().is_empty() {
                        return None;
                    }
                    Some(
                        serde_json::from_str::<T>(&text)
                            .map(|value| Located { line: lineno, value })
                            .map_err(|e| JsonlError::Malformed {
                                path: path.clone(),
                                line: lineno,
                                message: e.to_string(),
                            }),
                    )
                }
            }
        }))
}

/// Read every record, failing on the first malformed line.
pub fn read_all<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for rec in read_records(path)? {
        out.push(rec?.value);
    }
    Ok(out)
}

/// Serialize records one per line. Returns the serialized byte buffer so
/// callers can prepend a header record and control the final write.
pub fn to_lines<T: serde::Serialize>(records: &[T]) -> serde_json::Result<String> {
    let mut out = String::new();
    for rec in records {
        out.push_str(&serde_json::to_string(rec)?);
        out.push('\n');
    }
    Ok(out)
}
