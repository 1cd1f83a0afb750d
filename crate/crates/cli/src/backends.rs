//! Turn config backend slots into live backend objects.

use pairforge::embed::{EmbeddingBackend, FileVectorBackend, MockEmbedder};
use pairforge::extract::{ExtractorBackend, MockExtractor};
use pairforge::pairgen::{MockTranslator, TranslatorBackend};
use pairforge::remote::{
    RemoteConfig, RemoteEmbedder, RemoteEmbedderConfig, RemoteExtractor, RemoteExtractorConfig,
    RemoteTranslator, RemoteTranslatorConfig,
};

use crate::config::{BackendChoice, BackendKind};
use crate::error::CliError;

const MOCK_EMBED_DIM: usize = 64;

fn remote_config(choice: &BackendChoice) -> RemoteConfig {
    let mut remote = RemoteConfig::new(
        choice.endpoint.clone().unwrap_or_default(),
        choice.model.clone().unwrap_or_default(),
    );
    remote.auth_env = choice.auth_env.clone();
    if let Some(secs) = choice.timeout_secs {
        remote.timeout_secs = secs;
    }
    remote
}

fn remote_error(slot: &str, e: pairforge::remote::RemoteError) -> CliError {
    CliError::Config(format!("backends.{slot}: {e}"))
}

pub fn build_extractor(choice: &BackendChoice) -> Result<Box<dyn ExtractorBackend>, CliError> {
    match choice.kind {
        BackendKind::Mock => {
            let mut mock = MockExtractor::new();
            mock.max_chars = choice.max_input_chars;
            Ok(Box::new(mock))
        }
        BackendKind::Remote => {
            let config = RemoteExtractorConfig {
                remote: remote_config(choice),
                max_tokens: choice.max_tokens.unwrap_or(2048),
                max_input_chars: choice.max_input_chars,
            };
            Ok(Box::new(
                RemoteExtractor::new(config).map_err(|e| remote_error("extractor", e))?,
            ))
        }
        BackendKind::File => Err(CliError::Config(
            "backends.extractor: kind \"file\" is not supported here".into(),
        )),
    }
}

pub fn build_translator(choice: &BackendChoice) -> Result<Box<dyn TranslatorBackend>, CliError> {
    match choice.kind {
        BackendKind::Mock => Ok(Box::new(MockTranslator)),
        BackendKind::Remote => {
            let config = RemoteTranslatorConfig {
                remote: remote_config(choice),
            };
            Ok(Box::new(
                RemoteTranslator::new(config).map_err(|e| remote_error("translator", e))?,
            ))
        }
        BackendKind::File => Err(CliError::Config(
            "backends.translator: kind \"file\" is not supported here".into(),
        )),
    }
}

pub fn build_embedder(choice: &BackendChoice) -> Result<Box<dyn EmbeddingBackend>, CliError> {
    match choice.kind {
        BackendKind::Mock => Ok(Box::new(MockEmbedder::new(
            choice.dim.unwrap_or(MOCK_EMBED_DIM),
        ))),
        BackendKind::Remote => {
            let dim = choice.dim.ok_or_else(|| {
                CliError::Config("backends.embedder: remote embedder needs dim".into())
            })?;
            let config = RemoteEmbedderConfig {
                remote: remote_config(choice),
                dim,
                query_prefix: choice.query_prefix.clone().unwrap_or_default(),
                passage_prefix: choice.passage_prefix.clone().unwrap_or_default(),
            };
            Ok(Box::new(
                RemoteEmbedder::new(config).map_err(|e| remote_error("embedder", e))?,
            ))
        }
        BackendKind::File => {
            let path = choice.path.as_deref().ok_or_else(|| {
                CliError::Config("backends.embedder: file backend needs a path".into())
            })?;
            let backend = FileVectorBackend::load(path).map_err(crate::error::embed_error)?;
            Ok(Box::new(backend))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BackendChoice;

    #[test]
    fn mock_slots_build_without_extra_fields() {
        let choice = BackendChoice::default();
        assert_eq!(build_extractor(&choice).unwrap().id(), "mock");
        assert_eq!(build_translator(&choice).unwrap().id(), "mock");
        let embedder = build_embedder(&choice).unwrap();
        assert_eq!(embedder.dim(), MOCK_EMBED_DIM);
    }

    #[test]
    fn mock_embedder_honors_configured_dim() {
        let mut choice = BackendChoice::default();
        choice.dim = Some(16);
        assert_eq!(build_embedder(&choice).unwrap().dim(), 16);
    }

    #[test]
    fn file_embedder_without_path_is_a_config_error() {
        let mut choice = BackendChoice::default();
        choice.kind = BackendKind::File;
        let Err(err) = build_embedder(&choice) else {
            panic!("expected a config error");
        };
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn remote_with_unset_auth_env_is_a_config_error() {
        let mut choice = BackendChoice::default();
        choice.kind = BackendKind::Remote;
        choice.endpoint = Some("http://127.0.0.1:1/v1".into());
        choice.model = Some("m".into());
        choice.dim = Some(8);
        choice.auth_env = Some("PAIRFORGE_CLI_TEST_TOKEN_UNSET".into());
        let Err(err) = build_embedder(&choice) else {
            panic!("expected a config error");
        };
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("PAIRFORGE_CLI_TEST_TOKEN_UNSET"));
    }
}
