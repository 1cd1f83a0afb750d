//! HTTP-backed implementations of the extractor, translator, and embedder
//! traits, for wiring real services into the pipeline.
//!
//! Wire formats, all JSON over POST:
//! - embedder:   `{"input": [..texts], "model": ..}` →
//!   `{"data": [{"embedding": [..f64]}, ..]}`, one vector per input text in
//!   order;
//! - extractor:  `{"model": .., "prompt": .., "temperature": 0, "max_tokens": ..}`
//!   → `{"text": ..}` where `text` is the extraction JSON;
//! - translator: `{"text": .., "source": .., "target": ..}` →
//!   `{"translation": ..}`.
//!
//! Authentication is optional: when `auth_env` names an environment
//! variable, its value is sent as a `Bearer` token; the variable being
//! unset is a construction error so misconfiguration fails fast, before
//! any request is issued.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::BackendError;
use crate::embed::{EmbedRole, EmbeddingBackend};
use crate::extract::{ExtractionResult, ExtractorBackend};
use crate::pairgen::TranslatorBackend;

#[derive(Debug, Error)]
pub enum RemoteError {
    #[error("auth_env names {env:?} but that environment variable is not set")]
    MissingAuth { env: String },
    #[error("cannot build HTTP client: {0}")]
    Client(String),
}

/// Connection settings shared by every remote backend.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token, if the
    /// service needs one.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        RemoteConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            auth_env: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

struct HttpClient {
    client: reqwest::blocking::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpClient {
    fn new(config: &RemoteConfig) -> Result<Self, RemoteError> {
        let token = match &config.auth_env {
            Some(env) => Some(
                std::env::var(env).map_err(|_| RemoteError::MissingAuth { env: env.clone() })?,
            ),
            None => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| RemoteError::Client(e.to_string()))?;
        Ok(HttpClient {
            client,
            endpoint: config.endpoint.clone(),
            token,
        })
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        body: &Req,
    ) -> Result<Resp, BackendError> {
        let mut request = self.client.post(&self.endpoint).json(body);
        if let Some(token) = &self.token {
            request = request.bearer_auth(token);
        }
        let response = request
            .send()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status();
        let text = response
            .text()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            let snippet: String = text.chars().take(200).collect();
            return Err(BackendError::Rejected(format!(
                "{} from {}: {snippet}",
                status, self.endpoint
            )));
        }
        serde_json::from_str(&text).map_err(|e| {
            let snippet: String = text.chars().take(200).collect();
            BackendError::Malformed(format!("bad response body ({e}): {snippet}"))
        })
    }
}

// ---------------------------------------------------------------------------
// Embedder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    #[serde(flatten)]
    pub remote: RemoteConfig,
    /// Dimensionality the service is expected to return.
    pub dim: usize,
    /// Prepended to query-role texts (e.g. `"query: "`); empty disables.
    #[serde(default)]
    pub query_prefix: String,
    /// Prepended to passage-role texts.
    #[serde(default)]
    pub passage_prefix: String,
}

pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    http: HttpClient,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    input: &'a [String],
    model: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    data: Vec<EmbedVector>,
}

#[derive(Deserialize)]
struct EmbedVector {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig) -> Result<Self, RemoteError> {
        let http = HttpClient::new(&config.remote)?;
        Ok(RemoteEmbedder { config, http })
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn id(&self) -> &str {
        &self.config.remote.model
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_batch(&self, texts: &[String], role: EmbedRole) -> Result<Vec<Vec<f64>>, BackendError> {
        let prefix = match role {
            EmbedRole::Query => &self.config.query_prefix,
            EmbedRole::Passage => &self.config.passage_prefix,
        };
        let inputs: Vec<String> = texts.iter().map(|t| format!("{prefix}{t}")).collect();
        let response: EmbedResponse = self.http.post(&EmbedRequest {
            input: &inputs,
            model: &self.config.remote.model,
        })?;
        if response.data.len() != texts.len() {
            return Err(BackendError::Malformed(format!(
                "sent {} texts, got {} embeddings",
                texts.len(),
                response.data.len()
            )));
        }
        let mut vectors = Vec::with_capacity(response.data.len());
        for (i, item) in response.data.into_iter().enumerate() {
            if item.embedding.len() != self.config.dim {
                return Err(BackendError::Malformed(format!(
                    "embedding {i} has {} dimensions, expected {}",
                    item.embedding.len(),
                    self.config.dim
                )));
            }
            vectors.push(item.embedding);
        }
        Ok(vectors)
    }
}

// ---------------------------------------------------------------------------
// Extractor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteExtractorConfig {
    #[serde(flatten)]
    pub remote: RemoteConfig,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    /// Longest chunk (in characters) the service accepts, if bounded.
    #[serde(default)]
    pub max_input_chars: Option<usize>,
}

fn default_max_tokens() -> u32 {
    2048
}

pub struct RemoteExtractor {
    config: RemoteExtractorConfig,
    http: HttpClient,
}

#[derive(Serialize)]
struct ExtractRequest<'a> {
    model: &'a str,
    prompt: String,
    temperature: u32,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct ExtractResponse {
    text: String,
}

impl RemoteExtractor {
    pub fn new(config: RemoteExtractorConfig) -> Result<Self, RemoteError> {
        let http = HttpClient::new(&config.remote)?;
        Ok(RemoteExtractor { config, http })
    }

    fn prompt_for(text: &str, language: &str) -> String {
        format!(
            "Read the {language} passage below. Return only a JSON object with \
             keys \"entities\" (objects with \"name\" and \"entity_type\"), \
             \"relations\" (objects with \"subject\", \"label\", \"object\"), \
             \"atomic_facts\" (strings), and \"questions\" (strings).\n\n{text}"
        )
    }
}

impl ExtractorBackend for RemoteExtractor {
    fn id(&self) -> &str {
        &self.config.remote.model
    }

    fn max_input_chars(&self) -> Option<usize> {
        self.config.max_input_chars
    }

    fn extract(&self, text: &str, language: &str) -> Result<ExtractionResult, BackendError> {
        let response: ExtractResponse = self.http.post(&ExtractRequest {
            model: &self.config.remote.model,
            prompt: Self::prompt_for(text, language),
            temperature: 0,
            max_tokens: self.config.max_tokens,
        })?;
        serde_json::from_str(&response.text).map_err(|e| {
            let snippet: String = response.text.chars().take(200).collect();
            BackendError::Malformed(format!("extraction is not valid JSON ({e}): {snippet}"))
        })
    }
}

// ---------------------------------------------------------------------------
// Translator
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemoteTranslatorConfig {
    #[serde(flatten)]
    pub remote: RemoteConfig,
}

pub struct RemoteTranslator {
    config: RemoteTranslatorConfig,
    http: HttpClient,
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    text: &'a str,
    source: &'a str,
    target: &'a str,
}

#[derive(Deserialize)]
struct TranslateResponse {
    translation: String,
}

impl RemoteTranslator {
    pub fn new(config: RemoteTranslatorConfig) -> Result<Self, RemoteError> {
        let http = HttpClient::new(&config.remote)?;
        Ok(RemoteTranslator { config, http })
    }
}

impl TranslatorBackend for RemoteTranslator {
    fn id(&self) -> &str {
        &self.config.remote.model
    }

    fn translate(
        &self,
        text: &str,
        source_lang: &str,
        target_lang: &str,
    ) -> Result<String, BackendError> {
        let response: TranslateResponse = self.http.post(&TranslateRequest {
            text,
            source: source_lang,
            target: target_lang,
        })?;
        Ok(response.translation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::thread::JoinHandle;

    /// One-shot HTTP server: answers a single request with `body` and hands
    /// back the raw request it saw.
    fn serve_once(status: u16, body: &'static str) -> (String, JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut raw = Vec::new();
            let mut buf = [0u8; 4096];
            let header_end = loop {
                let n = stream.read(&mut buf).unwrap();
                raw.extend_from_slice(&buf[..n]);
                if let Some(pos) = raw.windows(4).position(|w| w == b"\r\n\r\n") {
                    break pos + 4;
                }
                assert!(n > 0, "connection closed before headers finished");
            };
            let headers = String::from_utf8_lossy(&raw[..header_end]).to_string();
            let content_length: usize = headers
                .lines()
                .find_map(|l| {
                    let (name, value) = l.split_once(':')?;
                    name.eq_ignore_ascii_case("content-length")
                        .then(|| value.trim().parse().ok())?
                })
                .unwrap_or(0);
            while raw.len() < header_end + content_length {
                let n = stream.read(&mut buf).unwrap();
                assert!(n > 0, "connection closed mid-body");
                raw.extend_from_slice(&buf[..n]);
            }
            let reason = if status == 200 { "OK" } else { "Error" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).unwrap();
            String::from_utf8_lossy(&raw).to_string()
        });
        (format!("http://{addr}/v1"), handle)
    }

    fn embedder_config(endpoint: String) -> RemoteEmbedderConfig {
        RemoteEmbedderConfig {
            remote: RemoteConfig::new(endpoint, "embed-small"),
            dim: 2,
            query_prefix: "query: ".into(),
            passage_prefix: "passage: ".into(),
        }
    }

    #[test]
    fn embedder_applies_prefixes_and_keeps_order() {
        let (endpoint, server) = serve_once(
            200,
            r#"{"data":[{"embedding":[1.0,0.0]},{"embedding":[0.0,1.0]}]}"#,
        );
        let embedder = RemoteEmbedder::new(embedder_config(endpoint)).unwrap();
        let vectors = embedder
            .embed_batch(&["πρώτο".to_string(), "second".to_string()], EmbedRole::Query)
            .unwrap();
        assert_eq!(vectors, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let request = server.join().unwrap();
        assert!(request.contains("query: πρώτο"), "{request}");
        assert!(request.contains("query: second"), "{request}");
        assert!(request.contains("\"model\":\"embed-small\""), "{request}");
    }

    #[test]
    fn embedder_sends_bearer_token_from_env() {
        let (endpoint, server) = serve_once(200, r#"{"data":[{"embedding":[1.0,0.0]}]}"#);
        std::env::set_var("REMOTE_TEST_TOKEN_A", "sesame");
        let mut config = embedder_config(endpoint);
        config.remote.auth_env = Some("REMOTE_TEST_TOKEN_A".into());
        let embedder = RemoteEmbedder::new(config).unwrap();
        embedder
            .embed_batch(&["x".to_string()], EmbedRole::Passage)
            .unwrap();
        let request = server.join().unwrap();
        assert!(request.contains("authorization: Bearer sesame") ||
                request.contains("Authorization: Bearer sesame"), "{request}");
        assert!(request.contains("passage: x"), "{request}");
    }

    #[test]
    fn missing_auth_variable_fails_at_construction() {
        let mut config = embedder_config("http://127.0.0.1:9/v1".into());
        config.remote.auth_env = Some("REMOTE_TEST_TOKEN_UNSET".into());
        let Err(err) = RemoteEmbedder::new(config) else {
            panic!("construction should fail");
        };
        match err {
            RemoteError::MissingAuth { env } => assert_eq!(env, "REMOTE_TEST_TOKEN_UNSET"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn embedder_rejects_miscounted_or_misshapen_responses() {
        let (endpoint, _server) = serve_once(200, r#"{"data":[]}"#);
        let embedder = RemoteEmbedder::new(embedder_config(endpoint)).unwrap();
        let err = embedder
            .embed_batch(&["x".to_string()], EmbedRole::Query)
            .unwrap_err();
        assert!(matches!(err, BackendError::Malformed(_)), "{err}");

        let (endpoint, _server) = serve_once(200, r#"{"data":[{"embedding":[1.0,2.0,3.0]}]}"#);
        let embedder = RemoteEmbedder::new(embedder_config(endpoint)).unwrap();
        let err = embedder
            .embed_batch(&["x".to_string()], EmbedRole::Query)
            .unwrap_err();
        assert!(err.to_string().contains("3 dimensions"), "{err}");
    }

    #[test]
    fn http_error_statuses_surface_as_rejections() {
        let (endpoint, _server) = serve_once(503, r#"{"error":"overloaded"}"#);
        let embedder = RemoteEmbedder::new(embedder_config(endpoint)).unwrap();
        let err = embedder
            .embed_batch(&["x".to_string()], EmbedRole::Query)
            .unwrap_err();
        match &err {
            BackendError::Rejected(msg) => assert!(msg.contains("503"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        // reserved port with nothing listening
        let config = embedder_config("http://127.0.0.1:1/v1".into());
        let embedder = RemoteEmbedder::new(config).unwrap();
        let err = embedder
            .embed_batch(&["x".to_string()], EmbedRole::Query)
            .unwrap_err();
        assert!(matches!(err, BackendError::Transport(_)), "{err}");
    }

    #[test]
    fn extractor_speaks_the_wire_format() {
        let (endpoint, server) = serve_once(
            200,
            r#"{"text":"{\"entities\":[{\"name\":\"αθήνα\",\"entity_type\":\"named\"}],\"atomic_facts\":[\"f\"],\"questions\":[],\"relations\":[]}"}"#,
        );
        let extractor = RemoteExtractor::new(RemoteExtractorConfig {
            remote: RemoteConfig::new(endpoint, "extract-large"),
            max_tokens: 512,
            max_input_chars: Some(4000),
        })
        .unwrap();
        assert_eq!(extractor.max_input_chars(), Some(4000));
        assert!(!extractor.deterministic());
        let result = extractor.extract("κείμενο", "el").unwrap();
        assert_eq!(result.entities.len(), 1);
        assert_eq!(result.entities[0].name, "αθήνα");
        assert_eq!(result.atomic_facts, vec!["f"]);
        let request = server.join().unwrap();
        assert!(request.contains("\"temperature\":0"), "{request}");
        assert!(request.contains("\"max_tokens\":512"), "{request}");
        assert!(request.contains("κείμενο"), "{request}");
    }

    #[test]
    fn extractor_flags_non_json_payloads() {
        let (endpoint, _server) = serve_once(200, r#"{"text":"sorry, no json here"}"#);
        let extractor = RemoteExtractor::new(RemoteExtractorConfig {
            remote: RemoteConfig::new(endpoint, "extract-large"),
            max_tokens: 512,
            max_input_chars: None,
        })
        .unwrap();
        let err = extractor.extract("x", "en").unwrap_err();
        assert!(matches!(err, BackendError::Malformed(_)), "{err}");
    }

    #[test]
    fn translator_round_trip() {
        let (endpoint, server) = serve_once(200, r#"{"translation":"the capital"}"#);
        let translator = RemoteTranslator::new(RemoteTranslatorConfig {
            remote: RemoteConfig::new(endpoint, "mt-el-en"),
        })
        .unwrap();
        let out = translator.translate("η πρωτεύουσα", "el", "en").unwrap();
        assert_eq!(out, "the capital");
        let request = server.join().unwrap();
        assert!(request.contains("\"source\":\"el\""), "{request}");
        assert!(request.contains("\"target\":\"en\""), "{request}");
    }
}
