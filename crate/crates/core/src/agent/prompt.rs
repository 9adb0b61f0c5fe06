use serde::{Deserialize, Serialize};

use super::{AgentError, AgentSpec, BackendBinding};
use crate::protocol::moderator_suffix;
use crate::scenario::ScenarioSpec;

/// Standard statement placed ahead of every participant prompt.
pub const CLEAN_SLATE_PREFACE: &str = "Pretend that you have never learned anything about negotiation—you are a clean slate. Instead, determine ALL of your behaviors, strategies, and personas based on the following advice:";

/// Separator between the three parts of the system prompt.
pub const PART_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptAssembly {
    pub system_text: String,
    pub preface: String,
    pub role_instructions: String,
    pub participant_prompt: String,
}

impl PromptAssembly {
    fn new(preface: &str, role_instructions: String, participant_prompt: &str) -> Self {
        let system_text = [preface, role_instructions.as_str(), participant_prompt].join(PART_SEPARATOR);
        PromptAssembly {
            system_text,
            preface: preface.to_string(),
            role_instructions,
            participant_prompt: participant_prompt.to_string(),
        }
    }
}

/// Role block: the assigned role, the scenario's confidential instructions
/// with points tables rendered, then the closing-protocol suffix.
pub fn role_block(scenario: &ScenarioSpec, role: usize) -> String {
    format!(
        "Your role: {}.\n\n{}\n\n{}",
        scenario.roles[role].name,
        scenario.role_instructions(role),
        moderator_suffix(scenario)
    )
}

pub fn assemble_system_prompt(
    agent: &AgentSpec,
    scenario: &ScenarioSpec,
    role: usize,
) -> Result<PromptAssembly, AgentError> {
    if matches!(agent.backend, BackendBinding::ChatModel(_)) && agent.prompt_text.trim().is_empty() {
        return Err(AgentError::Config {
            agent: agent.agent_id.clone(),
            message: "chat-model agents need a non-empty prompt".into(),
        });
    }
    Ok(PromptAssembly::new(
        CLEAN_SLATE_PREFACE,
        role_block(scenario, role),
        &agent.prompt_text,
    ))
}
