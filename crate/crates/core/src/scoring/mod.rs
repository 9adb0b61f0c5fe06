//! Agreement extraction and outcome metrics.

mod extract;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{extract_agreement, extraction_request, parse_extraction_reply, ExtractionError, Extractor};

use crate::scenario::{evaluate_assignment, Assignment, ScenarioError, ScenarioKind, ScenarioSpec};
use crate::session::{Termination, Transcript};

#[derive(Debug, Error)]
pub enum ScoringError {
    #[error("transcript {negotiation_id} is for scenario `{found}`, not `{expected}`")]
    ScenarioMismatch {
        negotiation_id: String,
        found: String,
        expected: String,
    },
    #[error("transcript {0} has an incomplete role map")]
    RoleMap(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("negotiation {0}: deal with zero value created")]
    ZeroPie(String),
    #[error("negotiation {0}: proportion of pie applies to integrative exercises only")]
    NotIntegrative(String),
}

/// One seat's metrics; seats are indexed like the scenario's roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatOutcome {
    pub role: String,
    pub agent_id: String,
    pub counterpart_id: String,
    /// Surplus over BATNA (distributive) or points (integrative).
    pub value_claimed: f64,
    pub points: Option<i64>,
    pub proportion_of_pie: Option<f64>,
    /// Composite subjective value reported by the counterpart.
    pub counterpart_sv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub negotiation_id: String,
    pub scenario_id: String,
    pub kind: ScenarioKind,
    pub termination: Termination,
    pub deal: bool,
    pub terms: Assignment,
    pub seats: [SeatOutcome; 2],
    pub value_created: f64,
    /// Number of utterances.
    pub efficiency: usize,
}

pub fn score_outcome(
    transcript: &Transcript,
    scenario: &ScenarioSpec,
    terms: &Assignment,
) -> Result<Outcome, ScoringError> {
    if transcript.scenario_id != scenario.id {
        return Err(ScoringError::ScenarioMismatch {
            negotiation_id: transcript.negotiation_id.clone(),
            found: transcript.scenario_id.clone(),
            expected: scenario.id.clone(),
        });
    }
    let agent = |r: usize| {
        transcript
            .agent_for(&scenario.roles[r].name)
            .map(str::to_string)
            .ok_or_else(|| ScoringError::RoleMap(transcript.negotiation_id.clone()))
    };
    let agents = [agent(0)?, agent(1)?];
    let valuation = evaluate_assignment(scenario, terms)?;
    let deal = !terms.is_impasse();
    let integrative = scenario.kind == ScenarioKind::Integrative;
    let value_created = valuation.joint;

    let seats = [0usize, 1].map(|r| {
        let other = 1 - r;
        let counterpart_sv = transcript
            .svi
            .get(&scenario.roles[other].name)
            .and_then(|rec| rec.response.as_ref())
            .map(|resp| resp.composite);
        SeatOutcome {
            role: scenario.roles[r].name.clone(),
            agent_id: agents[r].clone(),
            counterpart_id: agents[other].clone(),
            value_claimed: valuation.per_role[r],
            points: integrative.then(|| valuation.per_role[r].round() as i64),
            proportion_of_pie: None,
            counterpart_sv,
        }
    });
    let mut outcome = Outcome {
        negotiation_id: transcript.negotiation_id.clone(),
        scenario_id: scenario.id.clone(),
        kind: scenario.kind,
        termination: transcript.termination,
        deal,
        terms: terms.clone(),
        seats,
        value_created,
        efficiency: transcript.utterances.len(),
    };
    if integrative {
        let shares = proportion_of_pie(&outcome)?;
        for (seat, share) in outcome.seats.iter_mut().zip(shares) {
            seat.proportion_of_pie = Some(share);
        }
    }
    Ok(outcome)
}

/// Each seat's share of value created; impasses count as 0 for both.
pub fn proportion_of_pie(outcome: &Outcome) -> Result<[f64; 2], ScoringError> {
    if outcome.kind != ScenarioKind::Integrative {
        return Err(ScoringError::NotIntegrative(outcome.negotiation_id.clone()));
    }
    if !outcome.deal {
        return Ok([0.0, 0.0]);
    }
    if outcome.value_created == 0.0 {
        return Err(ScoringError::ZeroPie(outcome.negotiation_id.clone()));
    }
    Ok([0, 1].map(|r| outcome.seats[r].value_claimed / outcome.value_created))
}

/// One row per agent-observation, the unit of every regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRow {
    pub negotiation_id: String,
    pub exercise: String,
    pub kind: ScenarioKind,
    pub role: String,
    pub agent_id: String,
    pub counterpart_id: String,
    pub termination: Termination,
    pub deal: bool,
    pub value_claimed: f64,
    pub points: Option<i64>,
    pub proportion_of_pie: Option<f64>,
    pub value_created: f64,
    pub efficiency: usize,
    pub counterpart_sv: Option<f64>,
    pub cluster_agent: String,
    pub cluster_dyad: String,
    pub cluster_negotiation: String,
}

/// Exercise plus the unordered agent pair.
pub fn dyad_id(exercise: &str, a: &str, b: &str) -> String {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    format!("{exercise}:{lo}|{hi}")
}

impl Outcome {
    pub fn rows(&self) -> [OutcomeRow; 2] {
        [0usize, 1].map(|r| {
            let seat = &self.seats[r];
            OutcomeRow {
                negotiation_id: self.negotiation_id.clone(),
                exercise: self.scenario_id.clone(),
                kind: self.kind,
                role: seat.role.clone(),
                agent_id: seat.agent_id.clone(),
                counterpart_id: seat.counterpart_id.clone(),
                termination: self.termination,
                deal: self.deal,
                value_claimed: seat.value_claimed,
                points: seat.points,
                proportion_of_pie: seat.proportion_of_pie,
                value_created: self.value_created,
                efficiency: self.efficiency,
                counterpart_sv: seat.counterpart_sv,
                cluster_agent: seat.agent_id.clone(),
                cluster_dyad: dyad_id(&self.scenario_id, &seat.agent_id, &seat.counterpart_id),
                cluster_negotiation: self.negotiation_id.clone(),
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Deal,
    ValueClaimed,
    ProportionOfPie,
    ValueCreated,
    CounterpartSv,
    Efficiency,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Deal,
        Metric::ValueClaimed,
        Metric::ProportionOfPie,
        Metric::ValueCreated,
        Metric::CounterpartSv,
        Metric::Efficiency,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Deal => "deal",
            Metric::ValueClaimed => "value_claimed",
            Metric::ProportionOfPie => "proportion_of_pie",
            Metric::ValueCreated => "value_created",
            Metric::CounterpartSv => "counterpart_sv",
            Metric::Efficiency => "efficiency",
        }
    }

    pub fn value(self, row: &OutcomeRow) -> Option<f64> {
        match self {
            Metric::Deal => Some(if row.deal { 1.0 } else { 0.0 }),
            Metric::ValueClaimed => Some(row.value_claimed),
            Metric::ProportionOfPie => row.proportion_of_pie,
            Metric::ValueCreated => Some(row.value_created),
            Metric::CounterpartSv => row.counterpart_sv,
            Metric::Efficiency => Some(row.efficiency as f64),
        }
    }

    /// Shorter conversations rank higher; everything else ranks by size.
    pub fn higher_is_better(self) -> bool {
        self != Metric::Efficiency
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown metric `{given}` (valid: {})", Metric::ALL.map(|m| m.as_str()).join(", "))]
pub struct UnknownMetric {
    pub given: String,
}

impl FromStr for Metric {
    type Err = UnknownMetric;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| UnknownMetric { given: s.to_string() })
    }
}

/// Per-agent, per-exercise means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub agent_id: String,
    pub exercise: String,
    pub n: usize,
    pub deals: usize,
    pub deal_rate: f64,
    pub mean_value_claimed: f64,
    pub mean_proportion_of_pie: Option<f64>,
    pub mean_value_created: f64,
    pub mean_efficiency: f64,
    pub mean_counterpart_sv: Option<f64>,
    pub sv_n: usize,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Summaries ordered by (exercise, agent).
pub fn aggregate_outcomes(rows: &[OutcomeRow]) -> Vec<AgentSummary> {
    let mut groups: BTreeMap<(&str, &str), Vec<&OutcomeRow>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.exercise.as_str(), row.agent_id.as_str()))
            .or_default()
            .push(row);
    }
    groups
        .into_iter()
        .map(|((exercise, agent), group)| {
            let n = group.len();
            let deals = group.iter().filter(|r| r.deal).count();
            let sv: Vec<f64> = group.iter().filter_map(|r| r.counterpart_sv).collect();
            AgentSummary {
                agent_id: agent.to_string(),
                exercise: exercise.to_string(),
                n,
                deals,
                deal_rate: deals as f64 / n as f64,
                mean_value_claimed: mean(group.iter().map(|r| r.value_claimed)).unwrap_or(0.0),
                mean_proportion_of_pie: mean(group.iter().filter_map(|r| r.proportion_of_pie)),
                mean_value_created: mean(group.iter().map(|r| r.value_created)).unwrap_or(0.0),
                mean_efficiency: mean(group.iter().map(|r| r.efficiency as f64)).unwrap_or(0.0),
                mean_counterpart_sv: mean(sv.iter().copied()),
                sv_n: sv.len(),
            }
        })
        .collect()
}
