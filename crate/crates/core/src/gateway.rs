//! Chat-completion gateway.
//!
//! Two backends sit behind [`ChatBackend`]: an OpenAI-compatible HTTP
//! endpoint and a deterministic scripted stub. Retries happen here only for
//! transport failures; whatever text a backend returns is handed back as-is.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;
use tracing::{debug, warn};

use crate::domain::{AgentRole, GenerationParams};

/// Environment variable holding an optional bearer token for remote endpoints.
pub const BEARER_TOKEN_ENV: &str = "COGSCREEN_LLM_TOKEN";

const BODY_EXCERPT_CHARS: usize = 200;

/// Routing metadata attached to a request. Never sent over the wire; the stub
/// uses it for rule matching and run records use it for transcripts.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestTag {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_text: String,
    pub user_text: String,
    pub params: GenerationParams,
    #[serde(default)]
    pub tag: RequestTag,
}

impl ChatRequest {
    pub fn new(system_text: impl Into<String>, user_text: impl Into<String>, params: GenerationParams) -> Self {
        Self { system_text: system_text.into(), user_text: user_text.into(), params, tag: RequestTag::default() }
    }

    pub fn for_prompt(mut self, prompt_id: impl Into<String>) -> Self {
        self.tag.prompt_id = Some(prompt_id.into());
        self
    }

    pub fn for_role(mut self, role: AgentRole) -> Self {
        self.tag.role = Some(role);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("transport error after {attempts} attempt(s): {cause}")]
    Transport { attempts: u32, cause: String },
    #[error("backend rejected request with status {status}: {body_excerpt}")]
    BackendRejected { status: u16, body_excerpt: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("backend response could not be interpreted: {0}")]
    MalformedResponse(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
}

impl GatewayError {
    /// Transport-level failures, as opposed to a backend that answered.
    pub fn is_transport(&self) -> bool {
        matches!(self, GatewayError::Transport { .. } | GatewayError::Timeout { .. })
    }
}

/// Anything that can turn a chat request into completion text.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for &T {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        (**self).complete(request)
    }
}

fn check_request(request: &ChatRequest) -> Result<(), GatewayError> {
    if request.user_text.is_empty() {
        return Err(GatewayError::InvalidRequest("user_text is empty".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Backend configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackendKind {
    HttpEndpoint,
    ScriptedStub,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    pub model_name: String,
    #[serde(with = "duration_ms")]
    pub timeout: Duration,
    pub max_retries_on_transport_error: u32,
    /// First backoff delay; doubled after each failed attempt.
    #[serde(with = "duration_ms")]
    pub retry_backoff: Duration,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<StubScript>,
}

impl BackendConfig {
    pub fn http(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            kind: BackendKind::HttpEndpoint,
            endpoint_url: Some(endpoint_url.into()),
            model_name: model_name.into(),
            timeout: Duration::from_secs(120),
            max_retries_on_transport_error: 2,
            retry_backoff: Duration::from_millis(500),
            script: None,
        }
    }

    pub fn stub(script: StubScript) -> Self {
        Self {
            kind: BackendKind::ScriptedStub,
            endpoint_url: None,
            model_name: "stub".into(),
            timeout: Duration::from_secs(1),
            max_retries_on_transport_error: 0,
            retry_backoff: Duration::ZERO,
            script: Some(script),
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        match self.kind {
            BackendKind::HttpEndpoint if self.endpoint_url.as_deref().is_none_or(str::is_empty) => {
                Err(GatewayError::InvalidConfig("HttpEndpoint requires endpoint_url".into()))
            }
            BackendKind::ScriptedStub if self.script.is_none() => {
                Err(GatewayError::InvalidConfig("ScriptedStub requires a script".into()))
            }
            _ => Ok(()),
        }
    }
}

mod duration_ms {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

/// A constructed backend.
pub enum Backend {
    Http(HttpBackend),
    Stub(StubBackend),
}

impl Backend {
    pub fn from_config(config: &BackendConfig) -> Result<Self, GatewayError> {
        config.validate()?;
        Ok(match config.kind {
            BackendKind::HttpEndpoint => Backend::Http(HttpBackend::new(config.clone())),
            BackendKind::ScriptedStub => {
                Backend::Stub(StubBackend::new(config.script.clone().expect("validated")))
            }
        })
    }
}

impl ChatBackend for Backend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match self {
            Backend::Http(b) => b.complete(request),
            Backend::Stub(b) => b.complete(request),
        }
    }
}

/// One-shot convenience: build the backend and issue a single request.
pub fn complete(request: &ChatRequest, backend: &BackendConfig) -> Result<String, GatewayError> {
    Backend::from_config(backend)?.complete(request)
}

// ---------------------------------------------------------------------------
// Scripted stub
// ---------------------------------------------------------------------------

/// Conjunctive predicate over a request. An empty matcher matches everything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<AgentRole>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_contains: Option<String>,
}

impl StubMatch {
    pub fn user_contains(s: impl Into<String>) -> Self {
        Self { user_contains: Some(s.into()), ..Self::default() }
    }

    pub fn role(role: AgentRole) -> Self {
        Self { role: Some(role), ..Self::default() }
    }

    pub fn prompt(prompt_id: impl Into<String>) -> Self {
        Self { prompt_id: Some(prompt_id.into()), ..Self::default() }
    }

    pub fn and_user_contains(mut self, s: impl Into<String>) -> Self {
        self.user_contains = Some(s.into());
        self
    }

    pub fn and_role(mut self, role: AgentRole) -> Self {
        self.role = Some(role);
        self
    }

    pub fn matches(&self, request: &ChatRequest) -> bool {
        self.prompt_id.as_ref().is_none_or(|p| request.tag.prompt_id.as_ref() == Some(p))
            && self.role.is_none_or(|r| request.tag.role == Some(r))
            && self.user_contains.as_ref().is_none_or(|s| request.user_text.contains(s.as_str()))
            && self.system_contains.as_ref().is_none_or(|s| request.system_text.contains(s.as_str()))
    }
}

/// Simulated failure a stub rule may produce instead of text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubFailure {
    Timeout,
    Transport,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StubResponse {
    Completion(String),
    Fail(StubFailure),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubRule {
    #[serde(rename = "match")]
    pub matcher: StubMatch,
    #[serde(flatten)]
    pub response: StubResponse,
}

impl StubRule {
    pub fn reply(matcher: StubMatch, completion: impl Into<String>) -> Self {
        Self { matcher, response: StubResponse::Completion(completion.into()) }
    }

    pub fn fail(matcher: StubMatch, failure: StubFailure) -> Self {
        Self { matcher, response: StubResponse::Fail(failure) }
    }
}

/// Ordered rule list; first match wins.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StubScript {
    pub rules: Vec<StubRule>,
    pub default_completion: String,
}

impl StubScript {
    pub fn new(default_completion: impl Into<String>) -> Self {
        Self { rules: Vec::new(), default_completion: default_completion.into() }
    }

    pub fn rule(mut self, rule: StubRule) -> Self {
        self.rules.push(rule);
        self
    }

    /// Resolves a request to completion text or a simulated failure.
    pub fn evaluate(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        match self.rules.iter().find(|r| r.matcher.matches(request)).map(|r| &r.response) {
            None => Ok(self.default_completion.clone()),
            Some(StubResponse::Completion(text)) => Ok(text.clone()),
            Some(StubResponse::Fail(StubFailure::Timeout)) => Err(GatewayError::Timeout { attempts: 1 }),
            Some(StubResponse::Fail(StubFailure::Transport)) => {
                Err(GatewayError::Transport { attempts: 1, cause: "scripted transport failure".into() })
            }
            Some(StubResponse::Fail(StubFailure::Rejected)) => {
                Err(GatewayError::BackendRejected { status: 500, body_excerpt: "scripted rejection".into() })
            }
        }
    }
}

/// Deterministic backend driven by a [`StubScript`]. Keeps a log of every
/// request it saw so tests can inspect what agents sent.
pub struct StubBackend {
    script: StubScript,
    log: Mutex<Vec<ChatRequest>>,
}

impl StubBackend {
    pub fn new(script: StubScript) -> Self {
        Self { script, log: Mutex::new(Vec::new()) }
    }

    pub fn script(&self) -> &StubScript {
        &self.script
    }

    /// Requests received so far, in arrival order.
    pub fn requests(&self) -> Vec<ChatRequest> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn request_count(&self) -> usize {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).len()
    }
}

impl ChatBackend for StubBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        check_request(request)?;
        self.log.lock().unwrap_or_else(|e| e.into_inner()).push(request.clone());
        self.script.evaluate(request)
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP endpoint
// ---------------------------------------------------------------------------

pub struct HttpBackend {
    config: BackendConfig,
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    /// Reads the bearer token from [`BEARER_TOKEN_ENV`] if set.
    pub fn new(config: BackendConfig) -> Self {
        let token = std::env::var(BEARER_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::with_token(config, token)
    }

    pub fn with_token(config: BackendConfig, token: Option<String>) -> Self {
        let base = config.endpoint_url.clone().unwrap_or_default();
        let url = format!("{}/chat/completions", base.trim_end_matches('/'));
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self { config, url, token, agent }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    /// JSON body for one chat-completion call.
    pub fn request_body(&self, request: &ChatRequest) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            "temperature": request.params.temperature,
            "max_tokens": request.params.max_output_tokens,
        });
        if let Value::Object(map) = &mut body {
            for (k, v) in &request.params.extra {
                map.entry(k.clone()).or_insert_with(|| v.clone());
            }
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<String, Attempt> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut response = req.send_json(body).map_err(Attempt::from_ureq)?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(Attempt::from_ureq)?;
        if !(200..300).contains(&status) {
            return Err(Attempt::Final(GatewayError::BackendRejected {
                status,
                body_excerpt: text.chars().take(BODY_EXCERPT_CHARS).collect(),
            }));
        }
        extract_content(&text).map_err(Attempt::Final)
    }
}

enum Attempt {
    Retryable { timeout: bool, cause: String },
    Final(GatewayError),
}

impl Attempt {
    fn from_ureq(e: ureq::Error) -> Self {
        match e {
            ureq::Error::Timeout(t) => Attempt::Retryable { timeout: true, cause: t.to_string() },
            ureq::Error::Io(ref io) if io.kind() == std::io::ErrorKind::TimedOut => {
                Attempt::Retryable { timeout: true, cause: e.to_string() }
            }
            ureq::Error::BadUri(_) | ureq::Error::Http(_) | ureq::Error::RequireHttpsOnly(_) => {
                Attempt::Final(GatewayError::InvalidConfig(e.to_string()))
            }
            ureq::Error::Json(_) => Attempt::Final(GatewayError::MalformedResponse(e.to_string())),
            other => Attempt::Retryable { timeout: false, cause: other.to_string() },
        }
    }
}

/// Pulls `choices[0].message.content` out of a chat-completion response.
pub fn extract_content(body: &str) -> Result<String, GatewayError> {
    let value: Value =
        serde_json::from_str(body).map_err(|e| GatewayError::MalformedResponse(format!("invalid JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| GatewayError::MalformedResponse("missing choices[0].message.content".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        check_request(request)?;
        let body = self.request_body(request);
        let max_attempts = self.config.max_retries_on_transport_error + 1;
        let mut delay = self.config.retry_backoff;
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Ok(text) => return Ok(text),
                Err(Attempt::Final(e)) => return Err(e),
                Err(Attempt::Retryable { timeout, cause }) => {
                    if attempts >= max_attempts {
                        warn!(attempts, %cause, "chat completion failed");
                        return Err(if timeout {
                            GatewayError::Timeout { attempts }
                        } else {
                            GatewayError::Transport { attempts, cause }
                        });
                    }
                    debug!(attempts, %cause, ?delay, "retrying chat completion");
                    thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                }
            }
        }
    }
}
