//! Deterministic scripted policies. Every reply is a pure function of the
//! turn view and seed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{Reply, SviView, TurnView};
use crate::protocol::{accept_marker, offer_marker, offered_terms, resolve_terms, Terms, WALKAWAY_MARKER};
use crate::scenario::{evaluate_assignment, format_price, Assignment, ScenarioKind, ScenarioSpec};
use crate::session::{Facet, Termination};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    ImmediateAcceptor,
    FixedConcession,
    Stonewaller,
    Mirror,
    Silent,
}

impl PolicyName {
    pub const ALL: [PolicyName; 5] = [
        PolicyName::ImmediateAcceptor,
        PolicyName::FixedConcession,
        PolicyName::Stonewaller,
        PolicyName::Mirror,
        PolicyName::Silent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyName::ImmediateAcceptor => "immediate_acceptor",
            PolicyName::FixedConcession => "fixed_concession",
            PolicyName::Stonewaller => "stonewaller",
            PolicyName::Mirror => "mirror",
            PolicyName::Silent => "silent",
        }
    }
}

impl fmt::Display for PolicyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyName {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyName::ALL
            .into_iter()
            .find(|p| p.as_str() == s.trim())
            .ok_or(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tone {
    Warm,
    #[default]
    Neutral,
    Curt,
}

/// A price (`150`) or marker-style terms (`"rent=C; deposit=E; ..."`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TermsSpec {
    Price(f64),
    Terms(String),
}

impl TermsSpec {
    pub fn resolve(&self, spec: &ScenarioSpec) -> Option<Assignment> {
        let pairs: Vec<(String, String)> = match self {
            TermsSpec::Price(p) => vec![("price".into(), format_price(*p))],
            TermsSpec::Terms(text) => text
                .split(';')
                .filter_map(|chunk| {
                    let (k, v) = chunk.split_once('=')?;
                    Some((k.trim().to_string(), v.trim().to_string()))
                })
                .collect(),
        };
        match resolve_terms(&pairs, spec) {
            Terms::Complete(a) => Some(a),
            _ => None,
        }
    }
}

impl fmt::Display for TermsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TermsSpec::Price(p) => f.write_str(&format_price(*p)),
            TermsSpec::Terms(t) => write!(f, "\"{t}\""),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    /// Concession steps for `fixed_concession`; entries that do not resolve
    /// against the scenario are skipped.
    pub ladder: Vec<TermsSpec>,
    /// Opening demand for `stonewaller`.
    pub demand: Option<TermsSpec>,
    /// `stonewaller` walks away after this many own utterances.
    pub patience: Option<usize>,
    pub tone: Tone,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedConfig {
    pub policy: PolicyName,
    #[serde(flatten)]
    pub params: PolicyParams,
}

impl ScriptedConfig {
    /// Human-readable description, stored as the agent's prompt text.
    pub fn describe(&self) -> String {
        let mut out = format!("scripted {} policy", self.policy);
        if !self.params.ladder.is_empty() {
            let steps: Vec<String> = self.params.ladder.iter().map(|s| s.to_string()).collect();
            out.push_str(&format!(", ladder [{}]", steps.join(", ")));
        }
        if let Some(d) = &self.params.demand {
            out.push_str(&format!(", demand {d}"));
        }
        if let Some(p) = self.params.patience {
            out.push_str(&format!(", patience {p}"));
        }
        out.push_str(&format!(", {:?} tone", self.params.tone).to_lowercase());
        out
    }
}

fn own_value(spec: &ScenarioSpec, role: usize, terms: &Assignment) -> f64 {
    evaluate_assignment(spec, terms)
        .map(|v| v.per_role[role])
        .unwrap_or(f64::NEG_INFINITY)
}

/// Most favorable option for `role` on every issue.
fn own_best(spec: &ScenarioSpec, role: usize) -> Assignment {
    let name = &spec.roles[role].name;
    let chosen: BTreeMap<String, String> = spec
        .issues
        .iter()
        .map(|issue| {
            let best = issue
                .options
                .iter()
                .max_by_key(|o| o.points.get(name).copied().unwrap_or_default())
                .expect("issues have options");
            (issue.name.clone(), best.label.clone())
        })
        .collect();
    Assignment::Options(chosen)
}

/// A joint-value maximizer, breaking ties toward `role`. Joint value is
/// additive over issues, so the per-issue argmax is global.
fn joint_best(spec: &ScenarioSpec, role: usize) -> Assignment {
    let me = &spec.roles[role].name;
    let chosen: BTreeMap<String, String> = spec
        .issues
        .iter()
        .map(|issue| {
            let best = issue
                .options
                .iter()
                .max_by_key(|o| {
                    let joint: i64 = o.points.values().sum();
                    (joint, o.points.get(me).copied().unwrap_or_default())
                })
                .expect("issues have options");
            (issue.name.clone(), best.label.clone())
        })
        .collect();
    Assignment::Options(chosen)
}

fn default_ladder(spec: &ScenarioSpec, role: usize) -> Vec<Assignment> {
    match spec.kind {
        ScenarioKind::Distributive => {
            let batna = spec.roles[role].batna_price.unwrap_or(0.0);
            let is_buyer = spec.buyer_index() == Some(role);
            if is_buyer {
                [0.5, 0.65, 0.8]
                    .iter()
                    .map(|f| Assignment::Price((batna * f).round()))
                    .collect()
            } else {
                let top = spec.price_frame.as_ref().map_or(batna * 2.0, |p| p.new_price);
                [1.0, 0.75, 0.5]
                    .iter()
                    .map(|f| Assignment::Price((batna + (top - batna) * f).round()))
                    .collect()
            }
        }
        ScenarioKind::Integrative => {
            let first = own_best(spec, role);
            let last = joint_best(spec, role);
            if first == last {
                vec![first]
            } else {
                vec![first, last]
            }
        }
    }
}

fn default_demand(spec: &ScenarioSpec, role: usize) -> Assignment {
    default_ladder(spec, role).remove(0)
}

fn resolved_ladder(params: &PolicyParams, spec: &ScenarioSpec, role: usize) -> Vec<Assignment> {
    let ladder: Vec<Assignment> = params.ladder.iter().filter_map(|s| s.resolve(spec)).collect();
    if ladder.is_empty() {
        default_ladder(spec, role)
    } else {
        ladder
    }
}

fn pick<'a>(options: &[&'a str], seed: u64, turn: usize) -> &'a str {
    options[(seed.wrapping_add(turn as u64) % options.len() as u64) as usize]
}

fn offer_text(tone: Tone, marker: &str, seed: u64, turn: usize) -> String {
    let template = match tone {
        Tone::Warm => pick(
            &[
                "Thank you for meeting with me. I think we could maybe find something that works for both of us. {m} What do you think?",
                "I appreciate your patience, and I'm glad we're talking. Perhaps we can settle on this: {m} Does that work for you?",
                "Thanks for the great conversation. We could agree here: {m} Would that be fair for us both?",
            ],
            seed,
            turn,
        ),
        Tone::Neutral => pick(&["My proposal is {m}.", "I can offer {m}."], seed, turn),
        Tone::Curt => pick(
            &[
                "That is unreasonable. My position is {m}. Take it or leave it.",
                "I will not go further. {m}",
            ],
            seed,
            turn,
        ),
    };
    template.replace("{m}", marker)
}

fn accept_text(tone: Tone, marker: &str) -> String {
    match tone {
        Tone::Warm => format!("Wonderful, thank you so much! We have a deal. {marker}"),
        Tone::Neutral => format!("Agreed. {marker}"),
        Tone::Curt => format!("Fine. {marker}"),
    }
}

fn ask_text(tone: Tone) -> String {
    match tone {
        Tone::Warm => "Thank you for your time. What terms would work for you?",
        Tone::Neutral => "What do you propose?",
        Tone::Curt => "Make me an offer.",
    }
    .to_string()
}

fn walkaway_text(tone: Tone) -> String {
    match tone {
        Tone::Warm => format!("I'm sorry, but I think we should stop here. {WALKAWAY_MARKER}"),
        Tone::Neutral => format!("I am walking away. {WALKAWAY_MARKER}"),
        Tone::Curt => format!("This is a waste of time. {WALKAWAY_MARKER}"),
    }
}

fn counterpart_offer(view: &TurnView<'_>) -> Option<Assignment> {
    view.last_counterpart()
        .and_then(|u| offered_terms(&u.text, view.scenario))
}

pub(super) fn respond(cfg: &ScriptedConfig, view: &TurnView<'_>) -> Reply {
    let spec = view.scenario;
    let role = view.role;
    let tone = cfg.params.tone;
    let turn = view.own_turns();
    let text = match cfg.policy {
        PolicyName::Silent => String::new(),
        PolicyName::Mirror => match view.last_counterpart() {
            Some(u) => u.text.clone(),
            None => ask_text(tone),
        },
        PolicyName::ImmediateAcceptor => match counterpart_offer(view) {
            Some(terms) => accept_text(tone, &accept_marker(&terms)),
            None => ask_text(tone),
        },
        PolicyName::FixedConcession => {
            let ladder = resolved_ladder(&cfg.params, spec, role);
            let current = &ladder[turn.min(ladder.len() - 1)];
            match counterpart_offer(view) {
                Some(offer) if own_value(spec, role, &offer) >= own_value(spec, role, current) => {
                    accept_text(tone, &accept_marker(&offer))
                }
                _ => offer_text(tone, &offer_marker(current), view.seed, turn),
            }
        }
        PolicyName::Stonewaller => {
            if cfg.params.patience.is_some_and(|p| turn >= p) {
                walkaway_text(tone)
            } else {
                let demand = cfg
                    .params
                    .demand
                    .as_ref()
                    .and_then(|d| d.resolve(spec))
                    .unwrap_or_else(|| default_demand(spec, role));
                offer_text(tone, &offer_marker(&demand), view.seed, turn)
            }
        }
    };
    Reply {
        text,
        ..Reply::default()
    }
}

/// Ratings derive from how the session ended and the counterpart's tone.
pub(super) fn answer_svi(cfg: &ScriptedConfig, view: &SviView<'_>) -> Reply {
    if cfg.policy == PolicyName::Silent {
        return Reply::default();
    }
    let base: i64 = match view.termination {
        Termination::Accepted => 6,
        Termination::Walkaway => 3,
        Termination::CapReached | Termination::Aborted => 4,
    };
    let me = view.turn.role_name();
    let heard: String = view
        .turn
        .utterances
        .iter()
        .filter(|u| u.role_name != me)
        .map(|u| u.text.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ");
    let mut warmth = 0;
    if heard.contains("thank") {
        warmth += 1;
    }
    if heard.contains("unreasonable") || heard.contains("waste of time") {
        warmth -= 1;
    }
    let lines: Vec<String> = view
        .instrument
        .items
        .iter()
        .map(|item| {
            let rating = match item.facet {
                Facet::Instrumental | Facet::SelfRegard => base,
                Facet::Process | Facet::Relationship => base + warmth,
            };
            format!("{}: {}", item.id, rating.clamp(1, 7))
        })
        .collect();
    Reply {
        text: lines.join("\n"),
        ..Reply::default()
    }
}
