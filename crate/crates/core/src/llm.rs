//! Chat-completion backends.
//!
//! [`Backend`] is the one trait the pipeline talks to. Three implementations
//! ship here: an OpenAI-compatible HTTP client, a scripted mock, and the
//! [`GoldOracleBackend`], which answers from known gold labels with
//! controllable noise and ordering sensitivity so the filtering pipeline can
//! be exercised offline.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Session;
use crate::promptgen::{self, ANSWER_PREFIX};
use crate::seed;
use crate::taxonomy::Taxonomy;

pub const DEFAULT_MAX_TOKENS: u32 = 16;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum LlmError {
    #[error("backend unavailable (status {status:?}): {message}")]
    BackendUnavailable { status: Option<u16>, message: String },
    #[error("request budget of {cap} exceeded")]
    BudgetExceeded { cap: usize },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("no scripted response for prompt")]
    NoScriptedResponse,
    #[error("prompt does not belong to any known session")]
    UnknownSession,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_upper(self) -> &'static str {
        match self {
            Role::System => "SYSTEM",
            Role::User => "USER",
            Role::Assistant => "ASSISTANT",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    pub max_tokens: u32,
    /// 0 means greedy decoding.
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn greedy(messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            messages,
            max_tokens: DEFAULT_MAX_TOKENS,
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.max_tokens == 0 {
            return Err(LlmError::InvalidRequest("max_tokens must be positive".into()));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }

    /// All message contents, newline-joined.
    pub fn prompt_text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait Backend: Send + Sync {
    /// Returns the generated continuation only.
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (**self).complete(request)
    }
}

/// Validates the request, then forwards to `backend`.
pub fn complete(request: &CompletionRequest, backend: &dyn Backend) -> Result<String, LlmError> {
    request.validate()?;
    backend.complete(request)
}

/// Wraps any closure as a backend.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(&CompletionRequest) -> Result<String, LlmError> + Send + Sync,
{
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        (self.0)(request)
    }
}

/// Caps the number of requests forwarded to the inner backend.
pub struct Budgeted<B> {
    inner: B,
    cap: usize,
    used: AtomicUsize,
}

impl<B> Budgeted<B> {
    pub fn new(inner: B, cap: usize) -> Self {
        Budgeted {
            inner,
            cap,
            used: AtomicUsize::new(0),
        }
    }

    pub fn used(&self) -> usize {
        self.used.load(AtomicOrdering::Relaxed).min(self.cap)
    }
}

impl<B: Backend> Backend for Budgeted<B> {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        if self.used.fetch_add(1, AtomicOrdering::Relaxed) >= self.cap {
            return Err(LlmError::BudgetExceeded { cap: self.cap });
        }
        self.inner.complete(request)
    }
}

/// A scripted rule: every given condition must hold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    /// Substring of the full prompt text.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Substring of the last user message.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_user_contains: Option<String>,
    pub response: String,
}

impl MockRule {
    fn matches(&self, req: &CompletionRequest, text: &str) -> bool {
        let last_user = req
            .messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map_or("", |m| m.content.as_str());
        self.contains.as_deref().is_none_or(|c| text.contains(c))
            && self.last_user_contains.as_deref().is_none_or(|c| last_user.contains(c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MockDefault {
    Response(String),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockScript {
    pub rules: Vec<MockRule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<MockDefault>,
}

/// First matching rule wins; a pure function of the prompt.
#[derive(Debug, Clone)]
pub struct MockBackend {
    script: MockScript,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Self {
        MockBackend { script }
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        Ok(Self::new(serde_json::from_str(json)?))
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let text = request.prompt_text();
        if let Some(rule) = self.script.rules.iter().find(|r| r.matches(request, &text)) {
            return Ok(rule.response.clone());
        }
        match &self.script.default {
            Some(MockDefault::Response(r)) => Ok(r.clone()),
            Some(MockDefault::Error(e)) => Err(LlmError::BackendUnavailable {
                status: None,
                message: e.clone(),
            }),
            None => Err(LlmError::NoScriptedResponse),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenAiConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub timeout: Duration,
    pub retries: u32,
}

impl OpenAiConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        OpenAiConfig {
            endpoint: endpoint.into(),
            api_key: None,
            model: model.into(),
            timeout: DEFAULT_TIMEOUT,
            retries: DEFAULT_RETRIES,
        }
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

/// Client for `POST {endpoint}/chat/completions`.
#[derive(Debug, Clone)]
pub struct OpenAiBackend {
    config: OpenAiConfig,
    client: reqwest::blocking::Client,
    backoff: Duration,
}

impl OpenAiBackend {
    pub fn new(config: OpenAiConfig) -> Result<Self, LlmError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable {
                status: None,
                message: e.to_string(),
            })?;
        Ok(OpenAiBackend {
            config,
            client,
            backoff: Duration::from_millis(500),
        })
    }

    /// Base delay of the exponential retry backoff.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.backoff = backoff;
        self
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'))
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<String, (LlmError, bool)> {
        let body = WireRequest {
            model: &self.config.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut req = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            (
                LlmError::BackendUnavailable {
                    status: e.status().map(|s| s.as_u16()),
                    message: e.to_string(),
                },
                true,
            )
        })?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            let message = resp.text().unwrap_or_default();
            return Err((
                LlmError::BackendUnavailable {
                    status: Some(status.as_u16()),
                    message,
                },
                retry,
            ));
        }
        let wire: WireResponse = resp
            .json()
            .map_err(|e| (LlmError::MalformedResponse(e.to_string()), false))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| (LlmError::MalformedResponse("no choices".into()), false))?;
        Ok(strip_echo(&content).to_string())
    }
}

/// Drops a leading echo of the answer prefix.
fn strip_echo(content: &str) -> &str {
    content.strip_prefix(ANSWER_PREFIX).unwrap_or(content)
}

impl Backend for OpenAiBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        request.validate()?;
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(s) => return Ok(s),
                Err((e, retry)) if !retry || attempt >= self.config.retries => return Err(e),
                Err(_) => {
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}

/// Settings for [`GoldOracleBackend`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// Chance that a session gets one wrong label, identical across orderings.
    pub noise_rate: f64,
    /// Chance that a session's answer also depends on demonstration order.
    pub ordering_sensitivity: f64,
    /// Chance that a session's answer has one character dropped.
    pub typo_rate: f64,
    pub seed: u64,
}

impl OracleConfig {
    pub fn new(noise_rate: f64, ordering_sensitivity: f64, seed: u64) -> Self {
        OracleConfig {
            noise_rate,
            ordering_sensitivity,
            typo_rate: 0.0,
            seed,
        }
    }

    pub fn with_typos(mut self, typo_rate: f64) -> Self {
        self.typo_rate = typo_rate;
        self
    }
}

/// Per-session behaviour drawn once from `(seed, session id)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OraclePlan {
    pub noisy: bool,
    pub ordering_sensitive: bool,
    pub typo: bool,
    wrong: usize,
    alt: usize,
    typo_pos: usize,
}

struct OracleEntry {
    session_id: String,
    gold: usize,
}

/// Answers each prompt with the gold label of the session it contains.
///
/// For an ordering-sensitive session the answer is the base label when the
/// first demonstration query sorts before the last one and a different
/// label otherwise. Reversing the demonstrations (ascending vs descending
/// with distinct scores) therefore always flips the answer.
pub struct GoldOracleBackend {
    labels: Vec<String>,
    sessions: HashMap<String, OracleEntry>,
    config: OracleConfig,
}

impl GoldOracleBackend {
    /// Sessions without a gold intent, or whose gold is not in `taxonomy`,
    /// are skipped.
    pub fn new(taxonomy: &Taxonomy, sessions: &[Session], config: OracleConfig) -> Self {
        assert!((0.0..=1.0).contains(&config.noise_rate), "noise_rate must be in [0, 1]");
        assert!(
            (0.0..=1.0).contains(&config.ordering_sensitivity),
            "ordering_sensitivity must be in [0, 1]"
        );
        assert!((0.0..=1.0).contains(&config.typo_rate), "typo_rate must be in [0, 1]");
        let labels: Vec<String> = taxonomy.intents().iter().map(|i| i.surface_label().to_string()).collect();
        let position: HashMap<&str, usize> = taxonomy
            .intents()
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.as_str(), i))
            .collect();
        let mut map = HashMap::new();
        for s in sessions {
            let Some(gold) = s.gold_intent.as_deref().and_then(|g| position.get(g)) else {
                continue;
            };
            map.entry(s.turns.join("\n")).or_insert(OracleEntry {
                session_id: s.id.clone(),
                gold: *gold,
            });
        }
        GoldOracleBackend {
            labels,
            sessions: map,
            config,
        }
    }

    pub fn plan(&self, session_id: &str) -> OraclePlan {
        let mut rng = seed::rng_for(self.config.seed, session_id);
        let noisy = rng.gen::<f64>() < self.config.noise_rate;
        let ordering_sensitive = rng.gen::<f64>() < self.config.ordering_sensitivity;
        let typo = rng.gen::<f64>() < self.config.typo_rate;
        let m = self.labels.len().max(2);
        OraclePlan {
            noisy,
            ordering_sensitive,
            typo,
            wrong: rng.gen_range(0..m - 1),
            alt: rng.gen_range(0..m - 1),
            typo_pos: rng.gen_range(0..usize::MAX),
        }
    }

    /// Index of the `k`-th label other than `skip`.
    fn other(&self, skip: usize, k: usize) -> usize {
        if self.labels.len() < 2 {
            return skip;
        }
        if k >= skip {
            k + 1
        } else {
            k
        }
    }

    fn answer(&self, entry: &OracleEntry, messages: &[ChatMessage]) -> String {
        let plan = self.plan(&entry.session_id);
        let base = if plan.noisy {
            self.other(entry.gold, plan.wrong)
        } else {
            entry.gold
        };
        let mut label = base;
        if plan.ordering_sensitive {
            let demos = promptgen::demo_queries(messages);
            if let (Some(first), Some(last)) = (demos.first(), demos.last()) {
                if first > last {
                    label = self.other(base, plan.alt);
                }
            }
        }
        let text = &self.labels[label];
        if plan.typo && text.chars().count() > 1 {
            let drop = plan.typo_pos % text.chars().count();
            text.chars()
                .enumerate()
                .filter(|&(i, _)| i != drop)
                .map(|(_, c)| c)
                .collect()
        } else {
            text.clone()
        }
    }
}

impl Backend for GoldOracleBackend {
    fn complete(&self, request: &CompletionRequest) -> Result<String, LlmError> {
        let key = promptgen::session_turns(&request.messages).join("\n");
        let entry = self.sessions.get(&key).ok_or(LlmError::UnknownSession)?;
        Ok(self.answer(entry, &request.messages))
    }
}
