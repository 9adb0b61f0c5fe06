//! One negotiation as a turn-alternating state machine, followed by the
//! subjective-value questionnaire.

mod store;
mod svi;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use store::{read_transcripts, StoreError, TranscriptStore, TRANSCRIPT_SCHEMA_VERSION};
pub use svi::{
    Facet, InstrumentError, SviInstrument, SviItem, SviParseError, SviRecord, SviResponse, RATING_MAX,
    RATING_MIN,
};

use crate::agent::{assemble_system_prompt, AgentSpec, Backends, PromptAssembly, SviView, TokenUsage, TurnView};
use crate::protocol::{accepted_terms, has_walkaway, Terms};
use crate::scenario::{Assignment, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker_agent_id: String,
    pub role_name: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Accepted,
    Walkaway,
    CapReached,
    Aborted,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Accepted => "accepted",
            Termination::Walkaway => "walkaway",
            Termination::CapReached => "cap_reached",
            Termination::Aborted => "aborted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub schema_version: u32,
    pub negotiation_id: String,
    pub scenario_id: String,
    /// Role name → agent id.
    pub role_map: BTreeMap<String, String>,
    /// Role name of the opening speaker.
    pub first_mover: String,
    pub seed: u64,
    pub utterances: Vec<Utterance>,
    pub termination: Termination,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abort_cause: Option<String>,
    /// Keyed by role name; self-play fills both seats with one agent id.
    pub svi: BTreeMap<String, SviRecord>,
    #[serde(default)]
    pub usage: TokenUsage,
}

impl Transcript {
    pub fn agent_for(&self, role: &str) -> Option<&str> {
        self.role_map.get(role).map(String::as_str)
    }

    pub fn utterances_by<'a>(&'a self, role: &'a str) -> impl Iterator<Item = &'a Utterance> + 'a {
        self.utterances.iter().filter(move |u| u.role_name == role)
    }
}

/// Stable identifier over scenario, seats, agents and seed.
pub fn negotiation_id(scenario_id: &str, role_map: &BTreeMap<String, String>, seed: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(scenario_id.as_bytes());
    for (role, agent) in role_map {
        hasher.update([0x1f]);
        hasher.update(role.as_bytes());
        hasher.update([0x1e]);
        hasher.update(agent.as_bytes());
    }
    hasher.update([0x1f]);
    hasher.update(seed.to_le_bytes());
    hex::encode(&hasher.finalize()[..16])
}

#[derive(Debug, Clone, PartialEq)]
pub enum Status {
    Continue,
    Accepted(Assignment),
    Walkaway,
}

/// Inspects the newest utterance. Acceptance needs a marker whose restated
/// terms cover every issue without contradiction; anything less continues.
pub fn detect_termination(utterances: &[Utterance], scenario: &ScenarioSpec) -> Status {
    let Some(last) = utterances.last() else {
        return Status::Continue;
    };
    if let Some(Terms::Complete(terms)) = accepted_terms(&last.text, scenario) {
        return Status::Accepted(terms);
    }
    if has_walkaway(&last.text) {
        return Status::Walkaway;
    }
    Status::Continue
}

/// Everything needed to run one negotiation.
#[derive(Debug, Clone, Copy)]
pub struct SessionSetup<'a> {
    pub scenario: &'a ScenarioSpec,
    /// Indexed like `scenario.roles`.
    pub agents: [&'a AgentSpec; 2],
    /// Role index of the opening speaker.
    pub first_mover: usize,
    pub seed: u64,
    pub instrument: &'a SviInstrument,
}

impl SessionSetup<'_> {
    pub fn role_map(&self) -> BTreeMap<String, String> {
        self.scenario
            .roles
            .iter()
            .zip(self.agents)
            .map(|(r, a)| (r.name.clone(), a.agent_id.clone()))
            .collect()
    }
}

pub fn run_session(setup: &SessionSetup<'_>, backends: &Backends) -> Transcript {
    let scenario = setup.scenario;
    let role_map = setup.role_map();
    let mut transcript = Transcript {
        schema_version: TRANSCRIPT_SCHEMA_VERSION,
        negotiation_id: negotiation_id(&scenario.id, &role_map, setup.seed),
        scenario_id: scenario.id.clone(),
        role_map,
        first_mover: scenario.roles[setup.first_mover].name.clone(),
        seed: setup.seed,
        utterances: Vec::new(),
        termination: Termination::Aborted,
        abort_cause: None,
        svi: BTreeMap::new(),
        usage: TokenUsage::default(),
    };

    let assemblies: Result<Vec<PromptAssembly>, _> = (0..2)
        .map(|role| assemble_system_prompt(setup.agents[role], scenario, role))
        .collect();
    let assemblies = match assemblies {
        Ok(a) => a,
        Err(e) => {
            transcript.abort_cause = Some(e.to_string());
            return transcript;
        }
    };

    let cap = 2 * scenario.max_exchanges;
    let mut ended = None;
    while transcript.utterances.len() < cap {
        let role = (setup.first_mover + transcript.utterances.len()) % 2;
        let agent = setup.agents[role];
        let view = TurnView {
            scenario,
            role,
            assembly: &assemblies[role],
            utterances: &transcript.utterances,
            seed: setup.seed,
        };
        let reply = match backends.next_message(agent, &view) {
            Ok(r) => r,
            Err(e) => {
                transcript.abort_cause = Some(e.to_string());
                return transcript;
            }
        };
        transcript.usage += reply.usage;
        transcript.utterances.push(Utterance {
            index: transcript.utterances.len(),
            speaker_agent_id: agent.agent_id.clone(),
            role_name: scenario.roles[role].name.clone(),
            text: reply.text,
            truncated: reply.truncated,
        });
        match detect_termination(&transcript.utterances, scenario) {
            Status::Continue => {}
            Status::Accepted(_) => {
                ended = Some(Termination::Accepted);
                break;
            }
            Status::Walkaway => {
                ended = Some(Termination::Walkaway);
                break;
            }
        }
    }
    transcript.termination = ended.unwrap_or(Termination::CapReached);

    for role in 0..2 {
        let view = SviView {
            turn: TurnView {
                scenario,
                role,
                assembly: &assemblies[role],
                utterances: &transcript.utterances,
                seed: setup.seed,
            },
            termination: transcript.termination,
            instrument: setup.instrument,
        };
        let record = administer_svi(setup.agents[role], &view, backends, &mut transcript.usage);
        transcript.svi.insert(scenario.roles[role].name.clone(), record);
    }
    transcript
}

/// Asks one agent the questionnaire; failures and unparseable answers are
/// recorded as missing.
pub fn administer_svi(
    agent: &AgentSpec,
    view: &SviView<'_>,
    backends: &Backends,
    usage: &mut TokenUsage,
) -> SviRecord {
    match backends.answer_svi(agent, view) {
        Ok(reply) => {
            *usage += reply.usage;
            SviRecord::from_raw(view.instrument, &agent.agent_id, reply.text)
        }
        Err(e) => SviRecord::failed(&agent.agent_id, e.to_string()),
    }
}
