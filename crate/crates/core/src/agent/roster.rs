//! Roster files: one `[[agent]]` table per participant.
//!
//! ```toml
//! [[agent]]
//! id = "a017"
//! nickname = "Warm Closer"
//! prompt = "Open generously and thank your counterpart often."
//!
//! [[agent]]
//! id = "acceptor"
//! prompt_file = "prompts/acceptor.txt"
//! backend = { kind = "scripted", policy = "immediate_acceptor", tone = "warm" }
//!
//! [[agent]]
//! id = "a018"
//! prompt = "..."
//! backend = { model = "gpt-4o", temperature = 0.0 }
//! ```
//!
//! Chat-model settings not overridden per agent come from the run defaults.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use super::{AgentSpec, BackendBinding, ChatModelConfig, PolicyName, PolicyParams, ScriptedConfig, TermsSpec, Tone};

#[derive(Debug, Error)]
pub enum RosterError {
    #[error("cannot read roster {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("roster {origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("roster agent `{agent}`: {message}")]
    Invalid { agent: String, message: String },
    #[error("duplicate agent id `{0}` in roster")]
    Duplicate(String),
    #[error("roster is empty")]
    Empty,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRoster {
    #[serde(default)]
    agent: Vec<RawAgent>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAgent {
    id: String,
    nickname: Option<String>,
    prompt: Option<String>,
    prompt_file: Option<PathBuf>,
    #[serde(default)]
    backend: RawBackend,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    kind: Option<String>,
    model: Option<String>,
    temperature: Option<f64>,
    max_reply_tokens: Option<usize>,
    endpoint: Option<String>,
    policy: Option<String>,
    ladder: Option<Vec<TermsSpec>>,
    demand: Option<TermsSpec>,
    patience: Option<usize>,
    tone: Option<Tone>,
}

pub fn load_roster(path: &Path, defaults: &ChatModelConfig) -> Result<Vec<AgentSpec>, RosterError> {
    let text = std::fs::read_to_string(path).map_err(|source| RosterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_roster(&text, &path.display().to_string(), base, defaults)
}

/// Parses roster text; `prompt_file` paths resolve against `base_dir`.
pub fn parse_roster(
    text: &str,
    origin: &str,
    base_dir: &Path,
    defaults: &ChatModelConfig,
) -> Result<Vec<AgentSpec>, RosterError> {
    let raw: RawRoster = toml::from_str(text).map_err(|e| RosterError::Parse {
        origin: origin.to_string(),
        message: e.to_string(),
    })?;
    if raw.agent.is_empty() {
        return Err(RosterError::Empty);
    }
    let mut seen = HashSet::new();
    let mut agents = Vec::with_capacity(raw.agent.len());
    for entry in raw.agent {
        if !seen.insert(entry.id.clone()) {
            return Err(RosterError::Duplicate(entry.id));
        }
        let agent = build_agent(entry, base_dir, defaults)?;
        agent.validate().map_err(|e| RosterError::Invalid {
            agent: agent.agent_id.clone(),
            message: e.to_string(),
        })?;
        agents.push(agent);
    }
    Ok(agents)
}

fn build_agent(entry: RawAgent, base_dir: &Path, defaults: &ChatModelConfig) -> Result<AgentSpec, RosterError> {
    let invalid = |message: String| RosterError::Invalid {
        agent: entry.id.clone(),
        message,
    };
    let prompt = match (&entry.prompt, &entry.prompt_file) {
        (Some(_), Some(_)) => return Err(invalid("give either `prompt` or `prompt_file`, not both".into())),
        (Some(p), None) => p.clone(),
        (None, Some(file)) => {
            let path = base_dir.join(file);
            std::fs::read_to_string(&path).map_err(|e| invalid(format!("prompt_file {}: {e}", path.display())))?
        }
        (None, None) => String::new(),
    };
    let b = entry.backend;
    let kind = b.kind.as_deref().unwrap_or(if b.policy.is_some() { "scripted" } else { "chat_model" });
    let backend = match kind {
        "chat_model" => {
            if b.policy.is_some() || b.ladder.is_some() || b.demand.is_some() || b.patience.is_some() || b.tone.is_some() {
                return Err(invalid("scripted-policy fields given for a chat_model backend".into()));
            }
            BackendBinding::ChatModel(ChatModelConfig {
                model_name: b.model.unwrap_or_else(|| defaults.model_name.clone()),
                temperature: b.temperature.unwrap_or(defaults.temperature),
                max_reply_tokens: b.max_reply_tokens.unwrap_or(defaults.max_reply_tokens),
                endpoint: b.endpoint.unwrap_or_else(|| defaults.endpoint.clone()),
            })
        }
        "scripted" => {
            let name = b.policy.ok_or_else(|| invalid("scripted backend needs `policy`".into()))?;
            let policy: PolicyName = name
                .parse()
                .map_err(|_| invalid(super::AgentError::UnknownPolicy(name.clone()).to_string()))?;
            BackendBinding::Scripted(ScriptedConfig {
                policy,
                params: PolicyParams {
                    ladder: b.ladder.unwrap_or_default(),
                    demand: b.demand,
                    patience: b.patience,
                    tone: b.tone.unwrap_or_default(),
                },
            })
        }
        other => return Err(invalid(format!("unknown backend kind `{other}` (chat_model, scripted)"))),
    };
    let prompt_text = match (&backend, prompt.is_empty()) {
        (BackendBinding::Scripted(cfg), true) => cfg.describe(),
        _ => prompt,
    };
    Ok(AgentSpec {
        nickname: entry.nickname.unwrap_or_else(|| entry.id.clone()),
        agent_id: entry.id,
        prompt_text,
        backend,
    })
}
