//! Chat-completion backends: wire types, transports, retries, per-endpoint
//! rate limiting, audit mirroring and an opt-in response cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::ops::{Add, AddAssign};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use parking_lot::{Condvar, Mutex};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{AgentError, Backends, ChatModelConfig, Reply, SviView, TurnView};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(skip)]
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
        }
    }
}

impl AddAssign for TokenUsage {
    fn add_assign(&mut self, rhs: TokenUsage) {
        *self = *self + rhs;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub content: String,
    pub usage: TokenUsage,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TransportError {
    /// Worth retrying: timeouts, connection resets, 429 and 5xx.
    #[error("{0}")]
    Retryable(String),
    #[error("{0}")]
    Fatal(String),
}

pub trait ChatTransport: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError>;
}

/// Placeholder for runs without chat-model agents; every call fails.
#[derive(Debug, Default, Clone, Copy)]
pub struct UnconfiguredTransport;

impl ChatTransport for UnconfiguredTransport {
    fn send(&self, _request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        Err(TransportError::Fatal("no chat transport configured".into()))
    }
}

/// OpenAI-compatible chat-completions over HTTPS.
pub struct HttpTransport {
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl HttpTransport {
    pub fn new(api_key: Option<String>, timeout: Duration) -> Self {
        HttpTransport {
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            api_key,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, TransportError> {
        let mut call = self.agent.post(&request.endpoint);
        if let Some(key) = &self.api_key {
            call = call.set("Authorization", &format!("Bearer {key}"));
        }
        let body = serde_json::to_value(request).map_err(|e| TransportError::Fatal(e.to_string()))?;
        let response = match call.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let detail = r.into_string().unwrap_or_default();
                let message = format!("HTTP {code}: {}", detail.chars().take(500).collect::<String>());
                return Err(if code == 429 || code >= 500 {
                    TransportError::Retryable(message)
                } else {
                    TransportError::Fatal(message)
                });
            }
            Err(e) => return Err(TransportError::Retryable(e.to_string())),
        };
        let json: serde_json::Value = response
            .into_json()
            .map_err(|e| TransportError::Retryable(format!("unreadable response body: {e}")))?;
        parse_completion(&json)
    }
}

/// Extracts the first choice and usage from a chat-completions body.
pub fn parse_completion(json: &serde_json::Value) -> Result<ChatResponse, TransportError> {
    let content = json
        .pointer("/choices/0/message/content")
        .and_then(|c| c.as_str())
        .ok_or_else(|| TransportError::Retryable("response has no choices[0].message.content".into()))?;
    let usage = TokenUsage {
        prompt_tokens: json.pointer("/usage/prompt_tokens").and_then(|v| v.as_u64()).unwrap_or(0),
        completion_tokens: json
            .pointer("/usage/completion_tokens")
            .and_then(|v| v.as_u64())
            .unwrap_or(0),
    };
    Ok(ChatResponse {
        content: content.to_string(),
        usage,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub multiplier: f64,
    /// Relative jitter in [0, 1]: each delay is scaled by 1 ± jitter.
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 4,
            initial_delay_ms: 500,
            max_delay_ms: 30_000,
            multiplier: 2.0,
            jitter: 0.25,
        }
    }
}

impl RetryPolicy {
    pub fn immediate(max_retries: usize) -> Self {
        RetryPolicy {
            max_retries,
            initial_delay_ms: 0,
            max_delay_ms: 0,
            multiplier: 1.0,
            jitter: 0.0,
        }
    }

    /// Base delay before retry number `retry` (1-based), without jitter.
    pub fn base_delay(&self, retry: usize) -> Duration {
        let exp = self.multiplier.powi(retry.saturating_sub(1) as i32);
        let ms = (self.initial_delay_ms as f64 * exp).min(self.max_delay_ms as f64);
        Duration::from_secs_f64(ms.max(0.0) / 1000.0)
    }

    fn jittered_delay(&self, retry: usize) -> Duration {
        let base = self.base_delay(retry);
        if self.jitter <= 0.0 || base.is_zero() {
            return base;
        }
        let j = self.jitter.min(1.0);
        let factor = rand::rng().random_range(1.0 - j..=1.0 + j);
        base.mul_f64(factor)
    }
}

struct Semaphore {
    available: Mutex<usize>,
    freed: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Semaphore {
            available: Mutex::new(permits.max(1)),
            freed: Condvar::new(),
        }
    }

    fn acquire(self: &Arc<Self>) -> Permit {
        let mut available = self.available.lock();
        while *available == 0 {
            self.freed.wait(&mut available);
        }
        *available -= 1;
        Permit(Arc::clone(self))
    }
}

pub struct Permit(Arc<Semaphore>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.available.lock() += 1;
        self.0.freed.notify_one();
    }
}

/// Bounds in-flight requests per endpoint.
#[derive(Clone)]
pub struct RateLimiters {
    per_endpoint: usize,
    overrides: Arc<HashMap<String, usize>>,
    semaphores: Arc<Mutex<HashMap<String, Arc<Semaphore>>>>,
}

impl RateLimiters {
    pub fn new(per_endpoint: usize) -> Self {
        RateLimiters {
            per_endpoint: per_endpoint.max(1),
            overrides: Arc::new(HashMap::new()),
            semaphores: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    pub fn with_overrides(per_endpoint: usize, overrides: HashMap<String, usize>) -> Self {
        RateLimiters {
            overrides: Arc::new(overrides),
            ..RateLimiters::new(per_endpoint)
        }
    }

    pub fn limit_for(&self, endpoint: &str) -> usize {
        self.overrides.get(endpoint).copied().unwrap_or(self.per_endpoint).max(1)
    }

    pub fn acquire(&self, endpoint: &str) -> Permit {
        let semaphore = {
            let mut map = self.semaphores.lock();
            Arc::clone(
                map.entry(endpoint.to_string())
                    .or_insert_with(|| Arc::new(Semaphore::new(self.limit_for(endpoint)))),
            )
        };
        semaphore.acquire()
    }
}

/// Append-only JSONL mirror of every request/response pair.
pub struct AuditLog {
    sink: Mutex<BufWriter<File>>,
}

impl AuditLog {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(AuditLog {
            sink: Mutex::new(BufWriter::new(file)),
        })
    }

    fn record(&self, request: &ChatRequest, outcome: Result<&ChatResponse, &TransportError>) {
        let ts_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0);
        let entry = match outcome {
            Ok(response) => serde_json::json!({
                "ts_ms": ts_ms,
                "endpoint": request.endpoint,
                "request": request,
                "response": response,
            }),
            Err(error) => serde_json::json!({
                "ts_ms": ts_ms,
                "endpoint": request.endpoint,
                "request": request,
                "error": error.to_string(),
            }),
        };
        let mut sink = self.sink.lock();
        if let Err(e) = writeln!(sink, "{entry}").and_then(|_| sink.flush()) {
            log::warn!("audit log write failed: {e}");
        }
    }
}

/// In-memory cache keyed by a digest of the endpoint and full request.
#[derive(Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, ChatResponse>>,
}

impl ResponseCache {
    pub fn new() -> Self {
        ResponseCache::default()
    }

    pub fn key(request: &ChatRequest) -> String {
        let mut hasher = Sha256::new();
        hasher.update(request.endpoint.as_bytes());
        hasher.update([0]);
        hasher.update(serde_json::to_vec(request).expect("request serializes"));
        hex::encode(hasher.finalize())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, request: &ChatRequest) -> Option<ChatResponse> {
        self.entries.lock().get(&Self::key(request)).cloned()
    }

    fn put(&self, request: &ChatRequest, response: &ChatResponse) {
        self.entries.lock().insert(Self::key(request), response.clone());
    }
}

/// Kick-off line sent as the first user turn when the agent opens.
pub const OPENING_CUE: &str = "The negotiation is starting. Please send your first message.";

fn dialogue(view: &TurnView<'_>) -> Vec<ChatMessage> {
    let me = view.role_name();
    let mut messages = vec![ChatMessage::new(ChatRole::System, view.assembly.system_text.clone())];
    if view.utterances.first().is_none_or(|u| u.role_name == me) {
        messages.push(ChatMessage::new(ChatRole::User, OPENING_CUE));
    }
    for u in view.utterances {
        let role = if u.role_name == me {
            ChatRole::Assistant
        } else {
            ChatRole::User
        };
        messages.push(ChatMessage::new(role, u.text.clone()));
    }
    messages
}

pub(super) fn turn_request(cfg: &ChatModelConfig, view: &TurnView<'_>) -> ChatRequest {
    ChatRequest {
        endpoint: cfg.endpoint.clone(),
        model: cfg.model_name.clone(),
        temperature: cfg.temperature,
        max_tokens: cfg.max_reply_tokens,
        messages: dialogue(view),
    }
}

pub(super) fn svi_request(cfg: &ChatModelConfig, view: &SviView<'_>) -> ChatRequest {
    let mut messages = dialogue(&view.turn);
    messages.push(ChatMessage::new(
        ChatRole::User,
        view.instrument.render_prompt(view.termination),
    ));
    ChatRequest {
        endpoint: cfg.endpoint.clone(),
        model: cfg.model_name.clone(),
        temperature: cfg.temperature,
        max_tokens: cfg.max_reply_tokens,
        messages,
    }
}

pub(super) fn complete(backends: &Backends, request: &ChatRequest) -> Result<Reply, AgentError> {
    if let Some(hit) = backends.cache.as_ref().and_then(|c| c.get(request)) {
        return Ok(Reply {
            text: hit.content,
            truncated: false,
            usage: TokenUsage::default(),
        });
    }
    let mut attempts = 0;
    loop {
        attempts += 1;
        let outcome = {
            let _permit = backends.limiters.acquire(&request.endpoint);
            backends.transport.send(request)
        };
        if let Some(audit) = &backends.audit {
            audit.record(request, outcome.as_ref());
        }
        match outcome {
            Ok(response) => {
                if let Some(cache) = &backends.cache {
                    cache.put(request, &response);
                }
                return Ok(Reply {
                    text: response.content,
                    truncated: false,
                    usage: response.usage,
                });
            }
            Err(TransportError::Retryable(cause)) if attempts <= backends.retry.max_retries => {
                log::debug!("retrying after attempt {attempts}: {cause}");
                std::thread::sleep(backends.retry.jittered_delay(attempts));
            }
            Err(e) => {
                return Err(AgentError::Transport {
                    attempts,
                    cause: e.to_string(),
                })
            }
        }
    }
}

/// Caps a reply at `max_words` whitespace-separated tokens.
pub(super) fn enforce_reply_limit(mut reply: Reply, max_words: usize) -> Reply {
    if reply.text.split_whitespace().nth(max_words).is_some() {
        reply.text = reply
            .text
            .split_whitespace()
            .take(max_words)
            .collect::<Vec<_>>()
            .join(" ");
        reply.truncated = true;
    }
    reply
}
