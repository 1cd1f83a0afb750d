//! Pipeline configuration: TOML on disk, flags on top.
//!
//! Paths to corpora are resolved relative to the config file's directory so
//! a project can be checked out anywhere. `output_dir` is resolved against
//! the current directory (or overridden with `--output-dir`) because it is a
//! runtime destination, not part of the project.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use pairforge::backend::RetryPolicy;
use pairforge::corpus::ChunkingConfig;
use pairforge::pairgen::PairGenConfig;
use pairforge::util;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Where every artifact lands. Subdirectories are created as needed.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Maximum concurrent extraction calls.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default)]
    pub corpora: Vec<CorpusEntry>,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub pairgen: PairGenConfig,
    #[serde(default)]
    pub backends: BackendsConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub stats: StatsSection,
    #[serde(default)]
    pub retry: RetrySection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_jobs() -> usize {
    1
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: default_output_dir(),
            jobs: default_jobs(),
            corpora: Vec::new(),
            chunking: ChunkingConfig::default(),
            pairgen: PairGenConfig::default(),
            backends: BackendsConfig::default(),
            eval: EvalSection::default(),
            stats: StatsSection::default(),
            retry: RetrySection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusEntry {
    /// JSONL document file, relative to the config file.
    pub path: PathBuf,
    /// Label stamped on every document from this corpus.
    pub source: String,
    /// Expected document language (`el` or `en`); mismatches only warn.
    pub language: String,
    /// Documents carry their own retrieval queries.
    #[serde(default)]
    pub query_bearing: bool,
    /// English anchors from this corpus also get Greek translations.
    #[serde(default)]
    pub augment_to_greek: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendsConfig {
    #[serde(default)]
    pub extractor: BackendChoice,
    #[serde(default)]
    pub translator: BackendChoice,
    #[serde(default)]
    pub embedder: BackendChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Mock,
    Remote,
    File,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Mock => write!(f, "mock"),
            BackendKind::Remote => write!(f, "remote"),
            BackendKind::File => write!(f, "file"),
        }
    }
}

/// One backend slot. Which optional fields matter depends on `kind`:
/// `remote` needs `endpoint` and `model`, `file` needs `path`, `mock`
/// ignores everything except `dim` (embedder only).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendChoice {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Environment variable naming the bearer token; never the token itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_secs: Option<u64>,
    /// Embedding dimensionality (embedder slots).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_input_chars: Option<usize>,
    /// Precomputed vector file (file kind), relative to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl Default for BackendChoice {
    fn default() -> Self {
        BackendChoice {
            kind: BackendKind::Mock,
            endpoint: None,
            model: None,
            auth_env: None,
            timeout_secs: None,
            dim: None,
            query_prefix: None,
            passage_prefix: None,
            max_tokens: None,
            max_input_chars: None,
            path: None,
        }
    }
}

impl BackendChoice {
    fn check(&self, slot: &str, allowed: &[BackendKind], problems: &mut Vec<String>) {
        if !allowed.contains(&self.kind) {
            let names: Vec<String> = allowed.iter().map(|k| k.to_string()).collect();
            problems.push(format!(
                "backends.{slot}: kind {:?} is not supported here (use {})",
                self.kind.to_string(),
                names.join(" or ")
            ));
            return;
        }
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint.as_deref().unwrap_or("").is_empty() {
                    problems.push(format!("backends.{slot}: remote backend needs an endpoint"));
                }
                if self.model.as_deref().unwrap_or("").is_empty() {
                    problems.push(format!("backends.{slot}: remote backend needs a model"));
                }
                if slot == "embedder" && self.dim.is_none() {
                    problems.push(format!(
                        "backends.{slot}: remote embedder needs dim (the vector size it returns)"
                    ));
                }
            }
            BackendKind::File => {
                if self.path.is_none() {
                    problems.push(format!("backends.{slot}: file backend needs a path"));
                }
            }
            BackendKind::Mock => {}
        }
        if let Some(dim) = self.dim {
            if dim == 0 {
                problems.push(format!("backends.{slot}: dim must be positive"));
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    /// Retrieval cut-offs, strictly ascending.
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_ks() -> Vec<usize> {
    vec![3, 10]
}

fn default_batch_size() -> usize {
    32
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            ks: default_ks(),
            batch_size: default_batch_size(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSection {
    /// Significance level for the ranking tests.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for StatsSection {
    fn default() -> Self {
        StatsSection {
            alpha: default_alpha(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrySection {
    #[serde(default = "default_attempts")]
    pub attempts: u32,
    #[serde(default)]
    pub initial_backoff_ms: u64,
    #[serde(default = "default_multiplier")]
    pub multiplier: f64,
}

fn default_attempts() -> u32 {
    3
}

fn default_multiplier() -> f64 {
    2.0
}

impl Default for RetrySection {
    fn default() -> Self {
        RetrySection {
            attempts: default_attempts(),
            initial_backoff_ms: 0,
            multiplier: default_multiplier(),
        }
    }
}

impl RetrySection {
    pub fn policy(&self) -> RetryPolicy {
        RetryPolicy {
            attempts: self.attempts,
            initial_backoff: std::time::Duration::from_millis(self.initial_backoff_ms),
            multiplier: self.multiplier,
        }
    }
}

impl PipelineConfig {
    /// Read a config file, resolving relative corpus and vector-file paths
    /// against the file's directory. A missing file is only an error when
    /// `explicit` is set; otherwise built-in defaults apply.
    pub fn load(path: &Path, explicit: bool) -> Result<Self, CliError> {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound && !explicit => {
                return Ok(PipelineConfig::default());
            }
            Err(e) => {
                return Err(CliError::Config(format!(
                    "cannot read config {}: {e}",
                    path.display()
                )));
            }
        };
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for entry in &mut config.corpora {
            entry.path = resolve(base, &entry.path);
        }
        if let Some(p) = config.backends.embedder.path.take() {
            config.backends.embedder.path = Some(resolve(base, &p));
        }
        Ok(config)
    }

    /// Complain about everything wrong at once.
    pub fn validate(&self) -> Result<(), CliError> {
        let mut problems = Vec::new();
        if self.jobs == 0 {
            problems.push("jobs must be at least 1".to_string());
        }
        let mut sources = BTreeSet::new();
        for (i, entry) in self.corpora.iter().enumerate() {
            if entry.source.is_empty() {
                problems.push(format!("corpora[{i}]: source label is empty"));
            }
            if !sources.insert(entry.source.clone()) {
                problems.push(format!(
                    "corpora[{i}]: duplicate source label {:?}",
                    entry.source
                ));
            }
            if entry.language != "el" && entry.language != "en" {
                problems.push(format!(
                    "corpora[{i}]: language {:?} is not supported (el or en)",
                    entry.language
                ));
            }
        }
        self.backends.extractor.check(
            "extractor",
            &[BackendKind::Mock, BackendKind::Remote],
            &mut problems,
        );
        self.backends.translator.check(
            "translator",
            &[BackendKind::Mock, BackendKind::Remote],
            &mut problems,
        );
        self.backends.embedder.check(
            "embedder",
            &[BackendKind::Mock, BackendKind::Remote, BackendKind::File],
            &mut problems,
        );
        if self.eval.ks.is_empty() {
            problems.push("eval.ks must list at least one cut-off".to_string());
        }
        if !self.eval.ks.windows(2).all(|w| w[0] < w[1]) {
            problems.push(format!(
                "eval.ks must be strictly ascending, got {:?}",
                self.eval.ks
            ));
        }
        if self.eval.ks.iter().any(|&k| k == 0) {
            problems.push("eval.ks entries must be positive".to_string());
        }
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            problems.push(format!(
                "stats.alpha must lie strictly between 0 and 1, got {}",
                self.stats.alpha
            ));
        }
        if self.retry.attempts == 0 {
            problems.push("retry.attempts must be at least 1".to_string());
        }
        if !(self.retry.multiplier >= 1.0) {
            problems.push(format!(
                "retry.multiplier must be at least 1, got {}",
                self.retry.multiplier
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(problems.join("\n")))
        }
    }

    /// Hash of the effective config (after flag overrides). Stamped into
    /// every artifact manifest so outputs can be traced to their settings.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        util::short_hash(&[json.as_bytes()])
    }
}

fn resolve(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Content fingerprint of an input file, recorded in artifact manifests.
pub fn fingerprint_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Ok(util::short_hash(&[&bytes]))
}

/// Fingerprint of a corpus location: the file itself, or for a directory the
/// names and contents of its `.jsonl` files in name order.
pub fn fingerprint_input(path: &Path) -> Result<String, CliError> {
    let meta = std::fs::metadata(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    if meta.is_file() {
        return fingerprint_file(path);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "jsonl"))
        .collect();
    files.sort();
    let mut parts: Vec<Vec<u8>> = Vec::new();
    for file in &files {
        let name = file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        parts.push(name.into_bytes());
        parts.push(
            std::fs::read(file)
                .map_err(|e| CliError::Input(format!("cannot read {}: {e}", file.display())))?,
        );
    }
    let slices: Vec<&[u8]> = parts.iter().map(|v| v.as_slice()).collect();
    Ok(util::short_hash(&slices))
}
