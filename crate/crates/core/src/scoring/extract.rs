use std::collections::BTreeMap;

use thiserror::Error;

use crate::agent::{AgentError, Backends, ChatMessage, ChatModelConfig, ChatRequest, ChatRole};
use crate::protocol::{accepted_terms, resolve_terms, Terms};
use crate::scenario::{format_price, Assignment, ScenarioKind, ScenarioSpec};
use crate::session::{Termination, Transcript};

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("negotiation {negotiation_id}: contradictory agreement terms ({detail})")]
    Conflict {
        negotiation_id: String,
        detail: String,
    },
    #[error("negotiation {negotiation_id}: unusable extractor reply: {raw}")]
    Unparseable { negotiation_id: String, raw: String },
    #[error("negotiation {negotiation_id}: extractor backend failed: {source}")]
    Backend {
        negotiation_id: String,
        source: AgentError,
    },
}

#[derive(Clone, Copy)]
pub enum Extractor<'a> {
    /// Parses the closing `[[ACCEPT ...]]` marker.
    MarkerProtocol,
    /// Asks a chat model for the terms as JSON.
    ModelAssisted {
        backends: &'a Backends,
        model: &'a ChatModelConfig,
    },
}

/// Complete agreed terms, or `Assignment::Impasse`. Closes that omit any
/// issue are impasses.
pub fn extract_agreement(
    transcript: &Transcript,
    scenario: &ScenarioSpec,
    extractor: Extractor<'_>,
) -> Result<Assignment, ExtractionError> {
    match extractor {
        Extractor::MarkerProtocol => marker_terms(transcript, scenario),
        Extractor::ModelAssisted { backends, model } => {
            let request = extraction_request(transcript, scenario, model);
            let mut last_raw = String::new();
            for _ in 0..2 {
                let reply = backends
                    .complete(&request)
                    .map_err(|source| ExtractionError::Backend {
                        negotiation_id: transcript.negotiation_id.clone(),
                        source,
                    })?;
                match parse_extraction_reply(&reply.text, scenario) {
                    Ok(Terms::Complete(a)) => return Ok(a),
                    Ok(Terms::Incomplete { .. }) => return Ok(Assignment::Impasse),
                    Ok(Terms::Conflict(detail)) => {
                        return Err(ExtractionError::Conflict {
                            negotiation_id: transcript.negotiation_id.clone(),
                            detail,
                        })
                    }
                    Ok(Terms::Invalid(_)) | Err(_) => last_raw = reply.text,
                }
            }
            Err(ExtractionError::Unparseable {
                negotiation_id: transcript.negotiation_id.clone(),
                raw: last_raw,
            })
        }
    }
}

fn marker_terms(transcript: &Transcript, scenario: &ScenarioSpec) -> Result<Assignment, ExtractionError> {
    let Some(last) = transcript.utterances.last() else {
        return Ok(Assignment::Impasse);
    };
    match accepted_terms(&last.text, scenario) {
        Some(Terms::Conflict(detail)) => Err(ExtractionError::Conflict {
            negotiation_id: transcript.negotiation_id.clone(),
            detail,
        }),
        Some(Terms::Complete(terms)) if transcript.termination == Termination::Accepted => Ok(terms),
        _ => Ok(Assignment::Impasse),
    }
}

const EXTRACTION_INSTRUCTIONS: &str = "You review negotiation transcripts and report the final agreed terms. \
An agreement exists only if both parties explicitly agreed to the same terms and, when there are several issues, \
to a specific option on EVERY issue. Reply with a single JSON object and nothing else.";

pub fn extraction_request(transcript: &Transcript, scenario: &ScenarioSpec, model: &ChatModelConfig) -> ChatRequest {
    let schema = match scenario.kind {
        ScenarioKind::Distributive => {
            "Schema: {\"agreement\": true or false, \"price\": number or null}".to_string()
        }
        ScenarioKind::Integrative => {
            let issues: Vec<String> = scenario
                .issues
                .iter()
                .map(|i| {
                    let labels: Vec<&str> = i.options.iter().map(|o| o.label.as_str()).collect();
                    format!("\"{}\": one of {}", i.name, labels.join("/"))
                })
                .collect();
            format!(
                "Schema: {{\"agreement\": true or false, \"terms\": {{{}}}}}. Omit issues that were not agreed.",
                issues.join(", ")
            )
        }
    };
    let mut body = format!("Exercise: {} ({})\n{schema}\n\nTranscript:\n", scenario.id, scenario.kind);
    for u in &transcript.utterances {
        body.push_str(&format!("[{}] {}: {}\n", u.index, u.role_name, u.text));
    }
    ChatRequest {
        endpoint: model.endpoint.clone(),
        model: model.model_name.clone(),
        temperature: 0.0,
        max_tokens: 256,
        messages: vec![
            ChatMessage::new(ChatRole::System, EXTRACTION_INSTRUCTIONS),
            ChatMessage::new(ChatRole::User, body),
        ],
    }
}

/// Interprets an extractor reply; `Err` when no JSON object is present.
pub fn parse_extraction_reply(reply: &str, scenario: &ScenarioSpec) -> Result<Terms, String> {
    let start = reply.find('{').ok_or("no JSON object")?;
    let end = reply.rfind('}').ok_or("no JSON object")?;
    if end < start {
        return Err("no JSON object".into());
    }
    let json: serde_json::Value = serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())?;
    let agreement = json.get("agreement").and_then(|v| v.as_bool()).ok_or("missing `agreement`")?;
    if !agreement {
        return Ok(Terms::Incomplete {
            missing: scenario.issues.iter().map(|i| i.name.clone()).collect(),
        });
    }
    let pairs: Vec<(String, String)> = match scenario.kind {
        ScenarioKind::Distributive => match json.get("price").and_then(|p| p.as_f64()) {
            Some(p) => vec![("price".into(), format_price(p))],
            None => vec![],
        },
        ScenarioKind::Integrative => {
            let terms: BTreeMap<String, serde_json::Value> = json
                .get("terms")
                .and_then(|t| serde_json::from_value(t.clone()).ok())
                .unwrap_or_default();
            terms
                .into_iter()
                .filter_map(|(k, v)| v.as_str().map(|s| (k, s.to_string())))
                .collect()
        }
    };
    Ok(resolve_terms(&pairs, scenario))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::TokenUsage;
    use crate::scenario::built_in;
    use crate::session::{Utterance, TRANSCRIPT_SCHEMA_VERSION};

    fn transcript(texts: &[&str], termination: Termination) -> Transcript {
        Transcript {
            schema_version: TRANSCRIPT_SCHEMA_VERSION,
            negotiation_id: "x".into(),
            scenario_id: "rental".into(),
            role_map: Default::default(),
            first_mover: "landlord".into(),
            seed: 0,
            utterances: texts
                .iter()
                .enumerate()
                .map(|(i, t)| Utterance {
                    index: i,
                    speaker_agent_id: "a".into(),
                    role_name: if i % 2 == 0 { "landlord" } else { "tenant" }.into(),
                    text: t.to_string(),
                    truncated: false,
                })
                .collect(),
            termination,
            abort_cause: None,
            svi: Default::default(),
            usage: TokenUsage::default(),
        }
    }

    #[test]
    fn full_close_is_complete() {
        let rental = built_in("rental").unwrap();
        let t = transcript(
            &["[[OFFER rent=C; deposit=E; start_date=E; contract_length=A]]", "[[ACCEPT rent=C; deposit=E; start_date=E; contract_length=A]]"],
            Termination::Accepted,
        );
        let a = extract_agreement(&t, &rental, Extractor::MarkerProtocol).unwrap();
        assert!(matches!(a, Assignment::Options(ref m) if m.len() == 4));
    }

    #[test]
    fn partial_close_then_cap_is_impasse() {
        let rental = built_in("rental").unwrap();
        let t = transcript(&["hi", "[[ACCEPT rent=C; deposit=E; start_date=E]]"], Termination::CapReached);
        assert_eq!(extract_agreement(&t, &rental, Extractor::MarkerProtocol).unwrap(), Assignment::Impasse);
    }

    #[test]
    fn contradictory_close_is_flagged() {
        let rental = built_in("rental").unwrap();
        let t = transcript(
            &["[[ACCEPT rent=C; deposit=E; start_date=E; contract_length=A]] [[ACCEPT rent=B]]"],
            Termination::CapReached,
        );
        assert!(matches!(
            extract_agreement(&t, &rental, Extractor::MarkerProtocol),
            Err(ExtractionError::Conflict { .. })
        ));
    }

    #[test]
    fn reply_parsing() {
        let rental = built_in("rental").unwrap();
        let chair = built_in("chair").unwrap();
        assert_eq!(
            parse_extraction_reply("```json\n{\"agreement\": true, \"price\": 95}\n```", &chair).unwrap(),
            Terms::Complete(Assignment::Price(95.0))
        );
        assert!(matches!(
            parse_extraction_reply("{\"agreement\": true, \"terms\": {\"rent\": \"C\"}}", &rental).unwrap(),
            Terms::Incomplete { .. }
        ));
        assert!(parse_extraction_reply("no idea", &rental).is_err());
    }
}
