//! Bracketed closing-protocol markers.
//!
//! Agents propose with `[[OFFER ...]]`, close with `[[ACCEPT ...]]` restating
//! every agreed term, and leave with `[[WALKAWAY]]`. Terms are `key=value`
//! pairs separated by `;`, e.g. `[[ACCEPT price=100]]` or
//! `[[ACCEPT rent=C; deposit=E; start_date=E; contract_length=A]]`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::scenario::{format_price, normalize_key, Assignment, ScenarioKind, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkerKind {
    Offer,
    Accept,
    Walkaway,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marker {
    pub kind: MarkerKind,
    pub pairs: Vec<(String, String)>,
}

fn marker_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\[\[\s*(OFFER|ACCEPT|WALKAWAY)\b([^\]]*)\]\]").expect("valid regex")
    })
}

pub fn find_markers(text: &str) -> Vec<Marker> {
    marker_regex()
        .captures_iter(text)
        .map(|cap| {
            let kind = match cap[1].to_ascii_uppercase().as_str() {
                "OFFER" => MarkerKind::Offer,
                "ACCEPT" => MarkerKind::Accept,
                _ => MarkerKind::Walkaway,
            };
            let pairs = cap[2]
                .split(';')
                .filter_map(|chunk| {
                    let (k, v) = chunk.split_once('=')?;
                    let (k, v) = (k.trim(), v.trim());
                    (!k.is_empty()).then(|| (k.to_string(), v.to_string()))
                })
                .collect();
            Marker { kind, pairs }
        })
        .collect()
}

/// Result of resolving marker terms against a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum Terms {
    Complete(Assignment),
    Incomplete { missing: Vec<String> },
    Conflict(String),
    Invalid(String),
}

pub fn resolve_terms(pairs: &[(String, String)], spec: &ScenarioSpec) -> Terms {
    match spec.kind {
        ScenarioKind::Distributive => {
            let mut price: Option<f64> = None;
            for (k, v) in pairs {
                if normalize_key(k) != "price" {
                    return Terms::Invalid(format!("unknown term `{k}`"));
                }
                let Some(p) = parse_price(v) else {
                    return Terms::Invalid(format!("unparseable price `{v}`"));
                };
                match price {
                    Some(prev) if prev != p => {
                        return Terms::Conflict(format!(
                            "price restated as {} and {}",
                            format_price(prev),
                            format_price(p)
                        ))
                    }
                    _ => price = Some(p),
                }
            }
            match price {
                Some(p) => Terms::Complete(Assignment::Price(p)),
                None => Terms::Incomplete {
                    missing: vec!["price".into()],
                },
            }
        }
        ScenarioKind::Integrative => {
            let mut chosen: BTreeMap<String, String> = BTreeMap::new();
            for (k, v) in pairs {
                let Some(issue) = spec.issue(k).or_else(|| {
                    spec.issues
                        .iter()
                        .find(|i| normalize_key(&i.title) == normalize_key(k))
                }) else {
                    return Terms::Invalid(format!("unknown issue `{k}`"));
                };
                let label = v
                    .trim()
                    .trim_start_matches("option")
                    .trim_start_matches("Option")
                    .trim()
                    .to_ascii_uppercase();
                let Some(option) = issue.option(&label) else {
                    return Terms::Invalid(format!("unknown option `{v}` for `{}`", issue.name));
                };
                match chosen.get(&issue.name) {
                    Some(prev) if prev != &option.label => {
                        return Terms::Conflict(format!(
                            "`{}` restated as {} and {}",
                            issue.name, prev, option.label
                        ))
                    }
                    _ => {
                        chosen.insert(issue.name.clone(), option.label.clone());
                    }
                }
            }
            let missing: Vec<String> = spec
                .issues
                .iter()
                .filter(|i| !chosen.contains_key(&i.name))
                .map(|i| i.name.clone())
                .collect();
            if missing.is_empty() {
                Terms::Complete(Assignment::Options(chosen))
            } else {
                Terms::Incomplete { missing }
            }
        }
    }
}

fn parse_price(raw: &str) -> Option<f64> {
    let cleaned: String = raw
        .chars()
        .filter(|c| !matches!(c, '$' | ',' | ' '))
        .collect();
    let p: f64 = cleaned.parse().ok()?;
    (p.is_finite() && p >= 0.0).then_some(p)
}

/// All `ACCEPT` terms in one utterance, merged (so a restatement that
/// contradicts itself surfaces as a conflict).
pub fn accepted_terms(text: &str, spec: &ScenarioSpec) -> Option<Terms> {
    let pairs: Vec<(String, String)> = find_markers(text)
        .into_iter()
        .filter(|m| m.kind == MarkerKind::Accept)
        .flat_map(|m| m.pairs)
        .collect();
    let has_accept = find_markers(text)
        .iter()
        .any(|m| m.kind == MarkerKind::Accept);
    has_accept.then(|| resolve_terms(&pairs, spec))
}

/// The most recent complete `OFFER` in an utterance.
pub fn offered_terms(text: &str, spec: &ScenarioSpec) -> Option<Assignment> {
    find_markers(text)
        .into_iter()
        .rev()
        .filter(|m| m.kind == MarkerKind::Offer)
        .find_map(|m| match resolve_terms(&m.pairs, spec) {
            Terms::Complete(a) => Some(a),
            _ => None,
        })
}

pub fn has_walkaway(text: &str) -> bool {
    find_markers(text)
        .iter()
        .any(|m| m.kind == MarkerKind::Walkaway)
}

pub fn offer_marker(terms: &Assignment) -> String {
    format!("[[OFFER {}]]", terms.to_marker_terms())
}

pub fn accept_marker(terms: &Assignment) -> String {
    format!("[[ACCEPT {}]]", terms.to_marker_terms())
}

pub const WALKAWAY_MARKER: &str = "[[WALKAWAY]]";

/// Fixed instructions appended to every role's confidential instructions.
pub fn moderator_suffix(spec: &ScenarioSpec) -> String {
    let mut out = String::from("Closing protocol (required):\n");
    match spec.kind {
        ScenarioKind::Distributive => {
            out.push_str(
                "- When you propose a price, include it in a marker such as [[OFFER price=100]].\n\
                 - To accept a final price, restate it in a marker such as [[ACCEPT price=100]].\n",
            );
        }
        ScenarioKind::Integrative => {
            let example: Vec<String> = spec
                .issues
                .iter()
                .map(|i| format!("{}=A", i.name))
                .collect();
            out.push_str(&format!(
                "- Refer to issues by these keys: {}.\n\
                 - When you propose terms, include every issue in a marker such as [[OFFER {}]].\n\
                 - To accept final terms, restate the option letter for EVERY issue in a marker such as [[ACCEPT {}]].\n",
                spec.issues
                    .iter()
                    .map(|i| i.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
                example.join("; "),
                example.join("; "),
            ));
        }
    }
    out.push_str(&format!(
        "- To end the negotiation without an agreement, write {WALKAWAY_MARKER}.\n\
         - A deal exists only once an [[ACCEPT ...]] marker restates all agreed terms."
    ));
    out
}
