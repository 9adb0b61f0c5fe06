//! Subjective-value questionnaire: item file, prompt rendering and parsing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Termination;

const DEFAULT_ITEMS: &str = include_str!("../../data/svi_items.tsv");

pub const RATING_MIN: u8 = 1;
pub const RATING_MAX: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Facet {
    Instrumental,
    #[serde(rename = "self")]
    SelfRegard,
    Process,
    Relationship,
}

impl Facet {
    pub const ALL: [Facet; 4] = [Facet::Instrumental, Facet::SelfRegard, Facet::Process, Facet::Relationship];

    pub fn as_str(self) -> &'static str {
        match self {
            Facet::Instrumental => "instrumental",
            Facet::SelfRegard => "self",
            Facet::Process => "process",
            Facet::Relationship => "relationship",
        }
    }

    fn parse(s: &str) -> Option<Facet> {
        Facet::ALL.into_iter().find(|f| f.as_str() == s.trim().to_ascii_lowercase())
    }
}

impl fmt::Display for Facet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SviItem {
    pub id: String,
    pub facet: Facet,
    pub text: String,
}

#[derive(Debug, Error)]
pub enum InstrumentError {
    #[error("cannot read item file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{origin} line {line}: {message}")]
    Format {
        origin: String,
        line: usize,
        message: String,
    },
    #[error("{origin}: {message}")]
    Invalid { origin: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SviInstrument {
    pub items: Vec<SviItem>,
}

impl SviInstrument {
    /// The bundled 16-item file (placeholder wording, 4 items per facet).
    pub fn bundled() -> &'static SviInstrument {
        static BUNDLED: OnceLock<SviInstrument> = OnceLock::new();
        BUNDLED.get_or_init(|| SviInstrument::parse(DEFAULT_ITEMS, "bundled items").expect("bundled items parse"))
    }

    pub fn bundled_source() -> &'static str {
        DEFAULT_ITEMS
    }

    pub fn load(path: &Path) -> Result<SviInstrument, InstrumentError> {
        let text = std::fs::read_to_string(path).map_err(|source| InstrumentError::Io {
            path: path.display().to_string(),
            source,
        })?;
        SviInstrument::parse(&text, &path.display().to_string())
    }

    /// Tab-separated `id  facet  text`, `#` comments and blank lines ignored.
    pub fn parse(text: &str, origin: &str) -> Result<SviInstrument, InstrumentError> {
        let mut items: Vec<SviItem> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let format_err = |message: String| InstrumentError::Format {
                origin: origin.to_string(),
                line: n + 1,
                message,
            };
            let mut cols = line.splitn(3, '\t');
            let (Some(id), Some(facet), Some(body)) = (cols.next(), cols.next(), cols.next()) else {
                return Err(format_err("expected `id<TAB>facet<TAB>text`".into()));
            };
            let facet = Facet::parse(facet).ok_or_else(|| {
                format_err(format!(
                    "unknown facet `{facet}` (instrumental, self, process, relationship)"
                ))
            })?;
            let id = id.trim().to_string();
            if !item_id_regex().is_match(&id) {
                return Err(format_err(format!("item id `{id}` must look like Q<number>")));
            }
            if items.iter().any(|i| i.id.eq_ignore_ascii_case(&id)) {
                return Err(format_err(format!("duplicate item id `{id}`")));
            }
            items.push(SviItem {
                id,
                facet,
                text: body.trim().to_string(),
            });
        }
        let instrument = SviInstrument { items };
        for facet in Facet::ALL {
            if instrument.items_for(facet).next().is_none() {
                return Err(InstrumentError::Invalid {
                    origin: origin.to_string(),
                    message: format!("no items for facet `{facet}`"),
                });
            }
        }
        Ok(instrument)
    }

    pub fn items_for(&self, facet: Facet) -> impl Iterator<Item = &SviItem> {
        self.items.iter().filter(move |i| i.facet == facet)
    }

    pub fn render_prompt(&self, termination: Termination) -> String {
        let status = match termination {
            Termination::Accepted => "an agreement was reached",
            Termination::Walkaway => "a party walked away without an agreement",
            Termination::CapReached => "the message limit was reached without an agreement",
            Termination::Aborted => "it was interrupted before an agreement",
        };
        let mut out = format!(
            "The negotiation has ended: {status}. Please answer the following questionnaire about your experience. \
             Rate each item from {RATING_MIN} (not at all) to {RATING_MAX} (perfectly). \
             Reply with exactly one line per item in the form `Q1: <rating>`, using whole numbers only.\n"
        );
        for item in &self.items {
            out.push_str(&format!("\n{}. {}", item.id, item.text));
        }
        out
    }

    /// Parses `Qn: rating` lines; every item must be rated exactly once
    /// (repeats must agree) with a whole number in 1..=7.
    pub fn parse_response(&self, text: &str) -> Result<SviResponse, SviParseError> {
        let mut found: BTreeMap<String, u32> = BTreeMap::new();
        for cap in rating_regex().captures_iter(text) {
            let id = cap[1].to_ascii_uppercase();
            let Some(item) = self.items.iter().find(|i| i.id.eq_ignore_ascii_case(&id)) else {
                continue;
            };
            let rating: u32 = cap[2].parse().map_err(|_| SviParseError::OutOfRange {
                item: item.id.clone(),
                value: cap[2].to_string(),
            })?;
            if !(RATING_MIN as u32..=RATING_MAX as u32).contains(&rating) {
                return Err(SviParseError::OutOfRange {
                    item: item.id.clone(),
                    value: rating.to_string(),
                });
            }
            if let Some(prev) = found.insert(item.id.clone(), rating) {
                if prev != rating {
                    return Err(SviParseError::Contradictory(item.id.clone()));
                }
            }
        }
        let missing: Vec<String> = self
            .items
            .iter()
            .filter(|i| !found.contains_key(&i.id))
            .map(|i| i.id.clone())
            .collect();
        if !missing.is_empty() {
            return Err(SviParseError::Incomplete { missing });
        }
        let items: Vec<(String, u8)> = self
            .items
            .iter()
            .map(|i| (i.id.clone(), found[&i.id] as u8))
            .collect();
        Ok(SviResponse::from_items(self, items))
    }
}

fn item_id_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?i)Q\d+$").expect("valid regex"))
}

fn rating_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(Q\d+)\s*\**\s*[:=]\s*\**\s*(\d+)").expect("valid regex"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SviParseError {
    #[error("no rating for item(s) {}", missing.join(", "))]
    Incomplete { missing: Vec<String> },
    #[error("rating `{value}` for {item} is outside 1..=7")]
    OutOfRange { item: String, value: String },
    #[error("item {0} rated twice with different values")]
    Contradictory(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviResponse {
    pub items: Vec<(String, u8)>,
    pub facets: BTreeMap<Facet, f64>,
    pub composite: f64,
}

impl SviResponse {
    pub fn from_items(instrument: &SviInstrument, items: Vec<(String, u8)>) -> SviResponse {
        let rating = |id: &str| items.iter().find(|(i, _)| i == id).map(|(_, r)| *r as f64);
        let facets = Facet::ALL
            .into_iter()
            .filter_map(|facet| {
                let values: Vec<f64> = instrument.items_for(facet).filter_map(|i| rating(&i.id)).collect();
                (!values.is_empty()).then(|| (facet, values.iter().sum::<f64>() / values.len() as f64))
            })
            .collect();
        let composite = items.iter().map(|(_, r)| *r as f64).sum::<f64>() / items.len().max(1) as f64;
        SviResponse {
            items,
            facets,
            composite,
        }
    }
}

/// One agent's questionnaire outcome inside a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SviRecord {
    pub agent_id: String,
    pub raw: String,
    pub response: Option<SviResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SviRecord {
    pub fn from_raw(instrument: &SviInstrument, agent_id: &str, raw: String) -> SviRecord {
        match instrument.parse_response(&raw) {
            Ok(response) => SviRecord {
                agent_id: agent_id.to_string(),
                raw,
                response: Some(response),
                error: None,
            },
            Err(e) => SviRecord {
                agent_id: agent_id.to_string(),
                raw,
                response: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn failed(agent_id: &str, error: String) -> SviRecord {
        SviRecord {
            agent_id: agent_id.to_string(),
            raw: String::new(),
            response: None,
            error: Some(error),
        }
    }
}
