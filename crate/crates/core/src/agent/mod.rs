//! Agents: prompt assembly, scripted test doubles and chat-model backends.

mod chat;
mod prompt;
mod roster;
mod scripted;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chat::{
    AuditLog, ChatMessage, ChatRequest, ChatResponse, ChatRole, ChatTransport, HttpTransport,
    parse_completion, Permit, RateLimiters, ResponseCache, RetryPolicy, TokenUsage, TransportError,
    UnconfiguredTransport, OPENING_CUE,
};
pub use prompt::{assemble_system_prompt, role_block, PromptAssembly, CLEAN_SLATE_PREFACE, PART_SEPARATOR};
pub use roster::{load_roster, parse_roster, RosterError};
pub use scripted::{PolicyName, PolicyParams, ScriptedConfig, TermsSpec, Tone};

use crate::scenario::ScenarioSpec;
use crate::session::{SviInstrument, Termination, Utterance};

pub const DEFAULT_TEMPERATURE: f64 = 0.20;
pub const DEFAULT_MAX_REPLY_TOKENS: usize = 1024;
pub const DEFAULT_MODEL: &str = "gpt-4o-mini";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("configuration error for agent `{agent}`: {message}")]
    Config { agent: String, message: String },
    #[error("unknown scripted policy `{0}` (known: immediate_acceptor, fixed_concession, stonewaller, mirror, silent)")]
    UnknownPolicy(String),
    #[error("backend failed after {attempts} attempt(s): {cause}")]
    Transport { attempts: usize, cause: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatModelConfig {
    pub model_name: String,
    pub temperature: f64,
    pub max_reply_tokens: usize,
    pub endpoint: String,
}

impl Default for ChatModelConfig {
    fn default() -> Self {
        ChatModelConfig {
            model_name: DEFAULT_MODEL.into(),
            temperature: DEFAULT_TEMPERATURE,
            max_reply_tokens: DEFAULT_MAX_REPLY_TOKENS,
            endpoint: DEFAULT_ENDPOINT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendBinding {
    ChatModel(ChatModelConfig),
    Scripted(ScriptedConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub nickname: String,
    pub prompt_text: String,
    pub backend: BackendBinding,
}

impl AgentSpec {
    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.agent_id = id.into();
        if self.nickname.is_empty() {
            self.nickname = self.agent_id.clone();
        }
        self
    }

    pub fn with_nickname(mut self, nickname: impl Into<String>) -> Self {
        self.nickname = nickname.into();
        self
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let fail = |message: String| AgentError::Config {
            agent: self.agent_id.clone(),
            message,
        };
        if self.agent_id.trim().is_empty() {
            return Err(fail("agent id is empty".into()));
        }
        if let BackendBinding::ChatModel(cfg) = &self.backend {
            if self.prompt_text.trim().is_empty() {
                return Err(fail("chat-model agents need a non-empty prompt".into()));
            }
            if !(0.0..=2.0).contains(&cfg.temperature) {
                return Err(fail(format!("temperature {} outside [0, 2]", cfg.temperature)));
            }
            if cfg.max_reply_tokens == 0 {
                return Err(fail("max_reply_tokens must be positive".into()));
            }
            if cfg.model_name.trim().is_empty() {
                return Err(fail("model name is empty".into()));
            }
        }
        Ok(())
    }
}

/// Builds a deterministic scripted agent; the id defaults to the policy name.
pub fn make_scripted_agent(policy_name: &str, params: PolicyParams) -> Result<AgentSpec, AgentError> {
    let policy: PolicyName = policy_name
        .parse()
        .map_err(|_| AgentError::UnknownPolicy(policy_name.to_string()))?;
    let config = ScriptedConfig { policy, params };
    Ok(AgentSpec {
        agent_id: policy_name.to_string(),
        nickname: policy_name.to_string(),
        prompt_text: config.describe(),
        backend: BackendBinding::Scripted(config),
    })
}

/// What an agent sees when asked for its next utterance.
#[derive(Debug, Clone, Copy)]
pub struct TurnView<'a> {
    pub scenario: &'a ScenarioSpec,
    /// Index into `scenario.roles` of the agent whose turn it is.
    pub role: usize,
    pub assembly: &'a PromptAssembly,
    pub utterances: &'a [Utterance],
    pub seed: u64,
}

impl TurnView<'_> {
    pub fn own_turns(&self) -> usize {
        self.utterances.iter().filter(|u| u.role_name == self.role_name()).count()
    }

    pub fn role_name(&self) -> &str {
        &self.scenario.roles[self.role].name
    }

    pub fn last_counterpart(&self) -> Option<&Utterance> {
        self.utterances
            .iter()
            .rev()
            .find(|u| u.role_name != self.role_name())
    }
}

/// Post-negotiation questionnaire request.
#[derive(Debug, Clone, Copy)]
pub struct SviView<'a> {
    pub turn: TurnView<'a>,
    pub termination: Termination,
    pub instrument: &'a SviInstrument,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reply {
    pub text: String,
    pub truncated: bool,
    pub usage: TokenUsage,
}

/// Shared backend plumbing: one transport, per-endpoint limits, retries,
/// optional audit mirror and (off by default) response cache.
#[derive(Clone)]
pub struct Backends {
    pub transport: Arc<dyn ChatTransport>,
    pub limiters: RateLimiters,
    pub retry: RetryPolicy,
    pub audit: Option<Arc<AuditLog>>,
    pub cache: Option<Arc<ResponseCache>>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("retry", &self.retry)
            .field("audit", &self.audit.is_some())
            .field("cache", &self.cache.is_some())
            .finish()
    }
}

impl Backends {
    pub fn new(transport: Arc<dyn ChatTransport>) -> Self {
        Backends {
            transport,
            limiters: RateLimiters::new(16),
            retry: RetryPolicy::default(),
            audit: None,
            cache: None,
        }
    }

    /// Backends for rosters that only contain scripted agents.
    pub fn scripted_only() -> Self {
        Backends::new(Arc::new(UnconfiguredTransport))
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiters(mut self, limiters: RateLimiters) -> Self {
        self.limiters = limiters;
        self
    }

    pub fn with_audit(mut self, audit: Arc<AuditLog>) -> Self {
        self.audit = Some(audit);
        self
    }

    pub fn with_cache(mut self, cache: Arc<ResponseCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn next_message(&self, agent: &AgentSpec, view: &TurnView<'_>) -> Result<Reply, AgentError> {
        match &agent.backend {
            BackendBinding::Scripted(cfg) => Ok(scripted::respond(cfg, view)),
            BackendBinding::ChatModel(cfg) => {
                let request = chat::turn_request(cfg, view);
                let reply = chat::complete(self, &request)?;
                Ok(chat::enforce_reply_limit(reply, cfg.max_reply_tokens))
            }
        }
    }

    pub fn answer_svi(&self, agent: &AgentSpec, view: &SviView<'_>) -> Result<Reply, AgentError> {
        match &agent.backend {
            BackendBinding::Scripted(cfg) => Ok(scripted::answer_svi(cfg, view)),
            BackendBinding::ChatModel(cfg) => {
                let request = chat::svi_request(cfg, view);
                chat::complete(self, &request)
            }
        }
    }

    /// One-off completion outside a negotiation (style rating, extraction).
    pub fn complete(&self, request: &ChatRequest) -> Result<Reply, AgentError> {
        chat::complete(self, request)
    }
}
