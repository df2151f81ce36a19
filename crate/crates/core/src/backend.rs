//! Pluggable model access: a deterministic scripted mock for tests and
//! ablations, and an OpenAI-compatible chat-completions HTTP client for
//! real runs.
//!
//! All size accounting is in characters (see [`estimate_size`]), which keeps
//! budgets backend-independent and deterministic. The mock enforces a
//! configurable context-window limit so the compressed-context ablation can
//! reproduce overflow behavior without a real model.

use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::BackendError;
use crate::util::drop_head_chars;

/// Character count of a text. The single size estimator used for every
/// budget in the runtime; swap point for token-based estimators.
pub fn estimate_size(text: &str) -> usize {
    text.chars().count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn as_str(&self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Which conversation a request belongs to. Isolated-reader and
/// consolidation sessions never share history with the main loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionTag {
    Main,
    IsolatedReader,
    Consolidation,
}

#[derive(Debug, Clone)]
pub struct LlmRequest {
    pub messages: Vec<Message>,
    pub max_response: usize,
    pub session_tag: SessionTag,
}

impl LlmRequest {
    pub fn new(messages: Vec<Message>, max_response: usize, session_tag: SessionTag) -> Self {
        Self { messages, max_response, session_tag }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        Ok(())
    }

    /// Total characters across all message contents.
    pub fn total_chars(&self) -> usize {
        self.messages.iter().map(|m| estimate_size(&m.content)).sum()
    }

    /// Content of the most recent user message, if any.
    pub fn latest_user_content(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct UsageEstimate {
    pub prompt_chars: usize,
    pub completion_chars: usize,
}

/// A completed (or failed) backend call. `finish_reason == Error` holds
/// exactly when `content` is empty; the failure detail travels separately.
#[derive(Debug, Clone)]
pub struct LlmResponse {
    pub content: String,
    pub finish_reason: FinishReason,
    pub usage_estimate: UsageEstimate,
    pub error_detail: Option<String>,
}

impl LlmResponse {
    pub fn ok(content: String, prompt_chars: usize) -> Self {
        let completion_chars = estimate_size(&content);
        Self {
            content,
            finish_reason: FinishReason::Stop,
            usage_estimate: UsageEstimate { prompt_chars, completion_chars },
            error_detail: None,
        }
    }

    pub fn error(detail: impl Into<String>, prompt_chars: usize) -> Self {
        Self {
            content: String::new(),
            finish_reason: FinishReason::Error,
            usage_estimate: UsageEstimate { prompt_chars, completion_chars: 0 },
            error_detail: Some(detail.into()),
        }
    }

    pub fn is_error(&self) -> bool {
        self.finish_reason == FinishReason::Error
    }
}

/// Blocking model access. Handles are sharable; the serial engine issues
/// one call at a time per task.
pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> LlmResponse;

    /// Short identifier recorded in run metadata.
    fn describe(&self) -> String;
}

// ---------------------------------------------------------------------------
// Scripted mock
// ---------------------------------------------------------------------------

/// What the mock does when a request exceeds its context limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverflowBehavior {
    /// Fail the call with `context_overflow`.
    Error,
    /// Drop the head of the latest user message until the request fits,
    /// then match rules against the truncated text.
    TruncateHead,
}

/// One scripted rule: if `pattern` occurs in the (possibly truncated)
/// latest user message, reply with `reply`. `repeat_limit` 0 means
/// unlimited; otherwise the rule goes inert after that many hits.
/// An empty `reply` scripts a backend failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockRule {
    pub pattern: String,
    pub reply: String,
    #[serde(default)]
    pub repeat_limit: u32,
}

/// Deterministic script for the mock backend. Rules are matched first-hit
/// in order; a catch-all rule (empty pattern, unlimited) must exist.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockPolicy {
    pub context_limit: usize,
    pub on_overflow: OverflowBehavior,
    pub rules: Vec<MockRule>,
}

impl MockPolicy {
    pub fn new(context_limit: usize, on_overflow: OverflowBehavior) -> Self {
        Self { context_limit, on_overflow, rules: Vec::new() }
    }

    pub fn rule(mut self, pattern: impl Into<String>, reply: impl Into<String>, repeat_limit: u32) -> Self {
        self.rules.push(MockRule {
            pattern: pattern.into(),
            reply: reply.into(),
            repeat_limit,
        });
        self
    }

    /// Append the required catch-all rule.
    pub fn default_reply(self, reply: impl Into<String>) -> Self {
        self.rule("", reply, 0)
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let has_default = self
            .rules
            .iter()
            .any(|r| r.pattern.is_empty() && r.repeat_limit == 0);
        if !has_default {
            return Err(BackendError::BadPolicy(
                "no default rule (empty pattern, repeat_limit 0)".into(),
            ));
        }
        Ok(())
    }

    pub fn from_json(raw: &str) -> Result<Self, BackendError> {
        let policy: MockPolicy =
            serde_json::from_str(raw).map_err(|e| BackendError::BadPolicy(e.to_string()))?;
        policy.validate()?;
        Ok(policy)
    }
}

/// Scripted backend. Identical request sequences yield identical response
/// sequences; the only mutable state is per-rule hit counts.
pub struct MockBackend {
    policy: MockPolicy,
    hits: Mutex<Vec<u32>>,
}

impl MockBackend {
    pub fn new(policy: MockPolicy) -> Result<Self, BackendError> {
        policy.validate()?;
        let hits = Mutex::new(vec![0; policy.rules.len()]);
        Ok(Self { policy, hits })
    }

    pub fn policy(&self) -> &MockPolicy {
        &self.policy
    }
}

impl LlmBackend for MockBackend {
    fn complete(&self, req: &LlmRequest) -> LlmResponse {
        if let Err(e) = req.validate() {
            return LlmResponse::error(e.to_string(), 0);
        }
        let prompt_chars = req.total_chars();
        let user = req.latest_user_content().unwrap_or("");

        let matched_text: String = if prompt_chars > self.policy.context_limit {
            match self.policy.on_overflow {
                OverflowBehavior::Error => {
                    return LlmResponse::error("context_overflow", prompt_chars);
                }
                OverflowBehavior::TruncateHead => {
                    let excess = prompt_chars - self.policy.context_limit;
                    drop_head_chars(user, excess).to_string()
                }
            }
        } else {
            user.to_string()
        };

        let mut hits = self.hits.lock().expect("mock hit counter poisoned");
        for (i, rule) in self.policy.rules.iter().enumerate() {
            if rule.repeat_limit != 0 && hits[i] >= rule.repeat_limit {
                continue;
            }
            if rule.pattern.is_empty() || matched_text.contains(&rule.pattern) {
                hits[i] += 1;
                if rule.reply.is_empty() {
                    return LlmResponse::error("scripted_error", prompt_chars);
                }
                let mut resp = LlmResponse::ok(rule.reply.clone(), prompt_chars);
                if estimate_size(&resp.content) > req.max_response {
                    resp.content = crate::util::truncate_chars(&resp.content, req.max_response)
                        .to_string();
                    resp.finish_reason = FinishReason::Length;
                    resp.usage_estimate.completion_chars = estimate_size(&resp.content);
                }
                return resp;
            }
        }
        // Unreachable when the policy validated (catch-all rule).
        LlmResponse::error("no matching rule", prompt_chars)
    }

    fn describe(&self) -> String {
        format!(
            "mock(limit={}, rules={})",
            self.policy.context_limit,
            self.policy.rules.len()
        )
    }
}

// ---------------------------------------------------------------------------
// OpenAI-compatible HTTP backend
// ---------------------------------------------------------------------------

/// Connection settings for an OpenAI-compatible chat-completions endpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions endpoint.
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the API key (optional).
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub retries: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_retries() -> u32 {
    3
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct ChatRequestBody<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    max_tokens: usize,
    temperature: f32,
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponseBody {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: usize,
    #[serde(default)]
    completion_tokens: usize,
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, BackendError> {
        if config.endpoint.is_empty() {
            return Err(BackendError::BadConfig("empty endpoint".into()));
        }
        let api_key = match &config.api_key_env {
            Some(var) if !var.is_empty() => std::env::var(var).ok(),
            _ => None,
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError::BadConfig(e.to_string()))?;
        Ok(Self { config, api_key, client })
    }

    fn attempt(&self, req: &LlmRequest) -> Result<LlmResponse, String> {
        let body = ChatRequestBody {
            model: &self.config.model,
            messages: req
                .messages
                .iter()
                .map(|m| WireMessage { role: m.role.as_str(), content: &m.content })
                .collect(),
            // Character budgets overestimate tokens, which is safe here.
            max_tokens: req.max_response.max(1),
            temperature: 0.0,
        };
        let mut http = self.client.post(&self.config.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            http = http.bearer_auth(key);
        }
        let resp = http.send().map_err(|e| format!("transport: {e}"))?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(format!("server error: {status}"));
        }
        if !status.is_success() {
            // Client errors will not improve on retry; surface them once.
            let text = resp.text().unwrap_or_default();
            return Ok(LlmResponse::error(
                format!("http {status}: {}", crate::util::truncate_chars(&text, 200)),
                req.total_chars(),
            ));
        }
        let parsed: ChatResponseBody =
            resp.json().map_err(|e| format!("bad response body: {e}"))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| "no choices in response".to_string())?;
        let content = choice.message.content.unwrap_or_default();
        if content.is_empty() {
            return Ok(LlmResponse::error("empty completion", req.total_chars()));
        }
        let mut out = LlmResponse::ok(content, req.total_chars());
        if choice.finish_reason.as_deref() == Some("length") {
            out.finish_reason = FinishReason::Length;
        }
        if let Some(u) = parsed.usage {
            out.usage_estimate = UsageEstimate {
                prompt_chars: u.prompt_tokens,
                completion_chars: u.completion_tokens,
            };
        }
        Ok(out)
    }
}

impl LlmBackend for HttpBackend {
    fn complete(&self, req: &LlmRequest) -> LlmResponse {
        if let Err(e) = req.validate() {
            return LlmResponse::error(e.to_string(), 0);
        }
        let mut last_err = String::new();
        for attempt in 0..self.config.retries.max(1) {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(100 * (1 << (attempt - 1))));
            }
            match self.attempt(req) {
                Ok(resp) => return resp,
                Err(e) => last_err = e,
            }
        }
        LlmResponse::error(format!("retries exhausted: {last_err}"), req.total_chars())
    }

    fn describe(&self) -> String {
        format!("http({}, model={})", self.config.endpoint, self.config.model)
    }
}
