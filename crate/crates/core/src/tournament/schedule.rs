use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::TournamentError;
use crate::agent::AgentSpec;
use crate::scenario::ScenarioSpec;
use crate::session::negotiation_id;

/// One scheduled negotiation. `first_role_agent` takes the scenario's first
/// role, `second_role_agent` the second.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pairing {
    pub exercise: String,
    pub first_role_agent: String,
    pub second_role_agent: String,
    pub seed: u64,
    /// Role index (0 or 1) of the opening speaker.
    pub first_mover: usize,
}

impl Pairing {
    pub fn role_map(&self, scenario: &ScenarioSpec) -> BTreeMap<String, String> {
        BTreeMap::from([
            (scenario.roles[0].name.clone(), self.first_role_agent.clone()),
            (scenario.roles[1].name.clone(), self.second_role_agent.clone()),
        ])
    }

    pub fn negotiation_id(&self, scenario: &ScenarioSpec) -> String {
        negotiation_id(&scenario.id, &self.role_map(scenario), self.seed)
    }

    pub fn is_self_play(&self) -> bool {
        self.first_role_agent == self.second_role_agent
    }
}

/// Seed from the base seed, exercise and the two agent ids, so it does not
/// depend on roster order or execution order.
pub fn pairing_seed(base_seed: u64, exercise: &str, first: &str, second: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base_seed.to_le_bytes());
    for part in [exercise, first, second] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part.as_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Every ordered pair (including self-play) for every exercise, exercise
/// by exercise in roster order. The first role opens when the two roster
/// positions sum to an even number, so each agent opens half its seats.
pub fn build_schedule(
    roster: &[AgentSpec],
    exercises: &[String],
    base_seed: u64,
) -> Result<Vec<Pairing>, TournamentError> {
    if roster.is_empty() {
        return Err(TournamentError::Config("roster is empty".into()));
    }
    let mut seen = HashSet::new();
    for agent in roster {
        if !seen.insert(agent.agent_id.as_str()) {
            return Err(TournamentError::Config(format!(
                "duplicate agent id `{}`",
                agent.agent_id
            )));
        }
    }
    let ids: Vec<&str> = roster.iter().map(|a| a.agent_id.as_str()).collect();
    Ok(schedule_for_ids(&ids, exercises, base_seed))
}

pub(super) fn schedule_for_ids(ids: &[&str], exercises: &[String], base_seed: u64) -> Vec<Pairing> {
    let n = ids.len();
    let mut schedule = Vec::with_capacity(n * n * exercises.len());
    for exercise in exercises {
        for (i, a) in ids.iter().enumerate() {
            for (j, b) in ids.iter().enumerate() {
                schedule.push(Pairing {
                    exercise: exercise.clone(),
                    first_role_agent: a.to_string(),
                    second_role_agent: b.to_string(),
                    seed: pairing_seed(base_seed, exercise, a, b),
                    first_mover: (i + j) % 2,
                });
            }
        }
    }
    schedule
}

/// Pairing count without materializing the schedule.
pub fn schedule_size(roster_size: usize, exercises: usize) -> usize {
    roster_size * roster_size * exercises
}
