//! TOML run configuration with environment overrides for the LLM endpoint.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::eval::AblationConfig;
use crate::htc::TrainConfig;
use crate::llm::{self, Backend, Budgeted, GoldOracleBackend, MockBackend, OpenAiBackend, OpenAiConfig, OracleConfig};
use crate::promptgen::TemplateKind;
use crate::retrieval::{self, Embedder, HashingEmbedder, RemoteEmbedder};
use crate::corpus::Session;
use crate::taxonomy::Taxonomy;

pub const ENV_ENDPOINT: &str = "CLARA_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CLARA_LLM_API_KEY";
pub const ENV_MODEL: &str = "CLARA_LLM_MODEL";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LlmProvider {
    /// OpenAI-compatible HTTP endpoint.
    Openai,
    /// Scripted rules read from `mock_script`.
    Mock,
    /// Gold-label oracle over sessions that carry gold intents.
    #[default]
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSection {
    pub provider: LlmProvider,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
    pub max_tokens: u32,
    /// Request cap; unlimited when absent.
    pub budget: Option<usize>,
    pub mock_script: Option<PathBuf>,
}

impl Default for LlmSection {
    fn default() -> Self {
        LlmSection {
            provider: LlmProvider::default(),
            endpoint: None,
            api_key: None,
            model: None,
            timeout_secs: llm::DEFAULT_TIMEOUT.as_secs(),
            retries: llm::DEFAULT_RETRIES,
            max_tokens: llm::DEFAULT_MAX_TOKENS,
            budget: None,
            mock_script: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSection {
    pub noise_rate: f64,
    pub ordering_sensitivity: f64,
    pub typo_rate: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            noise_rate: 0.0,
            ordering_sensitivity: 0.12,
            typo_rate: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingSection {
    /// `hashing` or `remote`.
    pub provider: String,
    pub dim: usize,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
}

impl Default for EmbeddingSection {
    fn default() -> Self {
        EmbeddingSection {
            provider: "hashing".into(),
            dim: retrieval::DEFAULT_DIM,
            endpoint: None,
            api_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub seed: u64,
    pub workers: usize,
    pub k: usize,
    pub template: TemplateKind,
    pub llm: LlmSection,
    pub oracle: OracleSection,
    pub embedding: EmbeddingSection,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            workers: 4,
            k: retrieval::DEFAULT_K,
            template: TemplateKind::Base,
            llm: LlmSection::default(),
            oracle: OracleSection::default(),
            embedding: EmbeddingSection::default(),
            train: TrainConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text).map_err(|message| ConfigError::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.apply_env();
        Ok(cfg)
    }

    /// Defaults plus environment overrides.
    pub fn from_env() -> Self {
        let mut cfg = Config::default();
        cfg.apply_env();
        cfg
    }

    /// Endpoint, key and model from the environment win over the file.
    pub fn apply_env(&mut self) {
        self.apply_vars(|k| std::env::var(k).ok());
    }

    pub fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) {
        let nonempty = |k| get(k).filter(|v: &String| !v.is_empty());
        if let Some(v) = nonempty(ENV_ENDPOINT) {
            self.llm.endpoint = Some(v);
        }
        if let Some(v) = nonempty(ENV_API_KEY) {
            self.llm.api_key = Some(v);
        }
        if let Some(v) = nonempty(ENV_MODEL) {
            self.llm.model = Some(v);
        }
    }

    /// Copies the global seed and worker count into the nested sections.
    pub fn sync_globals(&mut self) {
        self.train.seed = self.seed;
        self.train.workers = self.workers;
        self.ablation.seed = self.seed;
        self.ablation.workers = self.workers;
        self.ablation.k = self.k;
    }

    pub fn embedder(&self) -> Result<Box<dyn Embedder>, ConfigError> {
        let e = &self.embedding;
        if e.dim == 0 {
            return Err(ConfigError::Invalid("embedding.dim must be positive".into()));
        }
        match e.provider.as_str() {
            "hashing" => Ok(Box::new(HashingEmbedder::new(e.dim))),
            "remote" => {
                let endpoint = e
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("embedding.endpoint is required for the remote provider".into()))?;
                RemoteEmbedder::new(endpoint, e.api_key.clone(), e.dim)
                    .map(|r| Box::new(r) as Box<dyn Embedder>)
                    .map_err(|err| ConfigError::Invalid(err.to_string()))
            }
            other => Err(ConfigError::Invalid(format!("unknown embedding provider {other:?}"))),
        }
    }

    pub fn oracle_config(&self) -> OracleConfig {
        OracleConfig::new(self.oracle.noise_rate, self.oracle.ordering_sensitivity, self.seed).with_typos(self.oracle.typo_rate)
    }

    /// The configured LLM backend. `sessions` feed the oracle provider.
    pub fn backend(&self, taxonomy: &Taxonomy, sessions: &[Session]) -> Result<Box<dyn Backend>, ConfigError> {
        let o = &self.oracle;
        for (name, v) in [
            ("noise_rate", o.noise_rate),
            ("ordering_sensitivity", o.ordering_sensitivity),
            ("typo_rate", o.typo_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ConfigError::Invalid(format!("oracle.{name} must be in [0, 1]")));
            }
        }
        let inner: Box<dyn Backend> = match self.llm.provider {
            LlmProvider::Oracle => Box::new(GoldOracleBackend::new(taxonomy, sessions, self.oracle_config())),
            LlmProvider::Mock => {
                let path = self
                    .llm
                    .mock_script
                    .as_ref()
                    .ok_or_else(|| ConfigError::Invalid("llm.mock_script is required for the mock provider".into()))?;
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                Box::new(MockBackend::from_json(&text).map_err(|e| ConfigError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?)
            }
            LlmProvider::Openai => {
                let endpoint = self
                    .llm
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid(format!("llm.endpoint or {ENV_ENDPOINT} is required")))?;
                let model = self
                    .llm
                    .model
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid(format!("llm.model or {ENV_MODEL} is required")))?;
                let mut c = OpenAiConfig::new(endpoint, model);
                c.api_key = self.llm.api_key.clone();
                c.timeout = Duration::from_secs(self.llm.timeout_secs);
                c.retries = self.llm.retries;
                Box::new(OpenAiBackend::new(c).map_err(|e| ConfigError::Invalid(e.to_string()))?)
            }
        };
        Ok(match self.llm.budget {
            Some(cap) => Box::new(Budgeted::new(inner, cap)),
            None => inner,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.train.lr, 1e-3);
        assert_eq!(c.llm.max_tokens, 16);
        assert_eq!(c.embedding.dim, 64);
    }

    #[test]
    fn nested_sections_parse() {
        let c = Config::from_toml(
            r#"
seed = 7
template = "symbolic"
[llm]
provider = "openai"
endpoint = "http://file"
model = "m"
[oracle]
ordering_sensitivity = 0.3
[train]
epochs = 5
[ablation]
templates = ["base", "formatted"]
compression = [{ mode = "n_word", n = 2 }, { mode = "symbols_only" }]
"#,
        )
        .unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.template, TemplateKind::Symbolic);
        assert_eq!(c.llm.provider, LlmProvider::Openai);
        assert_eq!(c.oracle.ordering_sensitivity, 0.3);
        assert_eq!(c.train.epochs, 5);
        assert_eq!(c.train.patience, 5);
        assert_eq!(c.ablation.templates.len(), 2);
        assert!(Config::from_toml("seed = \"x\"").is_err());
    }

    #[test]
    fn environment_overrides_file() {
        let mut c = Config::from_toml("[llm]\nendpoint = \"http://file\"\nmodel = \"m\"").unwrap();
        c.apply_vars(|k| match k {
            ENV_ENDPOINT => Some("http://env".into()),
            ENV_API_KEY => Some("secret".into()),
            ENV_MODEL => Some(String::new()),
            _ => None,
        });
        assert_eq!(c.llm.endpoint.as_deref(), Some("http://env"));
        assert_eq!(c.llm.api_key.as_deref(), Some("secret"));
        assert_eq!(c.llm.model.as_deref(), Some("m"));
    }

    #[test]
    fn invalid_sections_are_reported() {
        let mut c = Config::default();
        c.embedding.provider = "nope".into();
        assert!(c.embedder().is_err());
        c.oracle.noise_rate = 2.0;
        assert!(matches!(
            c.backend(&Taxonomy::empty(), &[]),
            Err(ConfigError::Invalid(_))
        ));
        let mut c = Config::default();
        c.llm.provider = LlmProvider::Openai;
        assert!(c.backend(&Taxonomy::empty(), &[]).is_err());
    }
}
