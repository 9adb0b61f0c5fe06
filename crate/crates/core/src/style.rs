//! Warmth and dominance ratings of agent prompts, and rater-agreement
//! statistics.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentError, AgentSpec, Backends, ChatMessage, ChatModelConfig, ChatRequest, ChatRole};
use crate::exec::Execution;

const RATER_TEMPLATE: &str = include_str!("../data/style_rater_instruction.txt");
const PROMPT_SLOT: &str = "{prompt_text}";

pub const SCORE_MIN: i64 = 0;
pub const SCORE_MAX: i64 = 100;

/// The rater instruction with `prompt_text` interpolated byte-for-byte.
pub fn rater_message(prompt_text: &str) -> String {
    RATER_TEMPLATE.trim_end().replacen(PROMPT_SLOT, prompt_text, 1)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleScores {
    pub agent_id: String,
    pub warmth: u8,
    pub dominance: u8,
    #[serde(default)]
    pub rater: String,
}

#[derive(Debug, Error)]
pub enum StyleError {
    #[error("agent `{0}` has an empty prompt")]
    EmptyPrompt(String),
    #[error("agent `{agent}`: rater reply unusable after re-query: {raw}")]
    Unparseable { agent: String, raw: String },
    #[error("agent `{agent}`: rater backend failed: {source}")]
    Backend { agent: String, source: AgentError },
}

pub fn rater_request(prompt_text: &str, rater: &ChatModelConfig) -> ChatRequest {
    ChatRequest {
        endpoint: rater.endpoint.clone(),
        model: rater.model_name.clone(),
        temperature: rater.temperature,
        max_tokens: rater.max_reply_tokens,
        messages: vec![ChatMessage::new(ChatRole::User, rater_message(prompt_text))],
    }
}

/// `(warmth, dominance)` from the rater's JSON reply.
pub fn parse_style_reply(reply: &str) -> Result<(u8, u8), String> {
    let start = reply.find('{').ok_or("no JSON object")?;
    let end = reply.rfind('}').ok_or("no JSON object")?;
    if end < start {
        return Err("no JSON object".into());
    }
    let json: serde_json::Value = serde_json::from_str(&reply[start..=end]).map_err(|e| e.to_string())?;
    let field = |name: &str| -> Result<u8, String> {
        let v = json.get(name).ok_or(format!("missing `{name}`"))?;
        let x = match v {
            serde_json::Value::Number(n) => n.as_f64(),
            serde_json::Value::String(s) => s.trim().parse::<f64>().ok(),
            _ => None,
        }
        .ok_or(format!("`{name}` is not a number"))?;
        let rounded = x.round();
        if !(SCORE_MIN as f64..=SCORE_MAX as f64).contains(&rounded) || !x.is_finite() {
            return Err(format!("`{name}` = {x} outside 0..=100"));
        }
        Ok(rounded as u8)
    };
    Ok((field("warmth_score")?, field("dominance_score")?))
}

/// One query, plus one re-query when the reply is unusable.
pub fn score_prompt_style(
    agent_id: &str,
    prompt_text: &str,
    backends: &Backends,
    rater: &ChatModelConfig,
) -> Result<StyleScores, StyleError> {
    if prompt_text.trim().is_empty() {
        return Err(StyleError::EmptyPrompt(agent_id.to_string()));
    }
    let request = rater_request(prompt_text, rater);
    let mut raw = String::new();
    for _ in 0..2 {
        let reply = backends.complete(&request).map_err(|source| StyleError::Backend {
            agent: agent_id.to_string(),
            source,
        })?;
        match parse_style_reply(&reply.text) {
            Ok((warmth, dominance)) => {
                return Ok(StyleScores {
                    agent_id: agent_id.to_string(),
                    warmth,
                    dominance,
                    rater: rater.model_name.clone(),
                })
            }
            Err(e) => {
                log::debug!("agent {agent_id}: unusable rater reply ({e})");
                raw = reply.text;
            }
        }
    }
    Err(StyleError::Unparseable {
        agent: agent_id.to_string(),
        raw,
    })
}

pub fn score_roster_styles(
    roster: &[AgentSpec],
    backends: &Backends,
    rater: &ChatModelConfig,
    exec: Execution,
) -> Vec<Result<StyleScores, StyleError>> {
    exec.map(roster, |a| score_prompt_style(&a.agent_id, &a.prompt_text, backends, rater))
}

/// Seeded uniform scores for pipelines without a rater.
pub fn synthetic_style_table(roster: &[AgentSpec], seed: u64) -> Vec<StyleScores> {
    roster
        .iter()
        .map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(crate::tournament::pairing_seed(seed, "style", &a.agent_id, ""));
            StyleScores {
                agent_id: a.agent_id.clone(),
                warmth: rng.random_range(0..=100),
                dominance: rng.random_range(0..=100),
                rater: "synthetic".into(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgreementError {
    #[error("need at least {needed} {what}, got {got}")]
    TooSmall { what: &'static str, needed: usize, got: usize },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} has zero variance; the coefficient is undefined")]
    ZeroVariance(&'static str),
    #[error("ratings grid row {row} has {found} cells, expected {expected}")]
    Ragged { row: usize, found: usize, expected: usize },
    #[error("ratings grid: {0}")]
    Format(String),
}

/// Targets × raters grid with no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    pub targets: Vec<String>,
    pub raters: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl RatingsMatrix {
    pub fn new(targets: Vec<String>, raters: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self, AgreementError> {
        for (row, cells) in values.iter().enumerate() {
            if cells.len() != raters.len() {
                return Err(AgreementError::Ragged {
                    row,
                    found: cells.len(),
                    expected: raters.len(),
                });
            }
            if cells.iter().any(|v| !v.is_finite()) {
                return Err(AgreementError::Format(format!("row {row} has a non-numeric cell")));
            }
        }
        if targets.len() != values.len() {
            return Err(AgreementError::LengthMismatch(targets.len(), values.len()));
        }
        Ok(RatingsMatrix { targets, raters, values })
    }

    /// Unnamed grid, for tests and synthetic data.
    pub fn from_rows(values: Vec<Vec<f64>>) -> Result<Self, AgreementError> {
        let k = values.first().map_or(0, Vec::len);
        let targets = (0..values.len()).map(|i| format!("t{i}")).collect();
        let raters = (0..k).map(|j| format!("r{j}")).collect();
        RatingsMatrix::new(targets, raters, values)
    }

    /// Delimited grid: a header `target,<rater>,...` then one row per target.
    /// Empty cells are rejected.
    pub fn read(path: &Path) -> Result<Self, AgreementError> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| AgreementError::Format(e.to_string()))?;
        let header = reader.headers().map_err(|e| AgreementError::Format(e.to_string()))?.clone();
        let raters: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut targets = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(|e| AgreementError::Format(e.to_string()))?;
            targets.push(record.get(0).unwrap_or_default().to_string());
            let row = record
                .iter()
                .skip(1)
                .map(|cell| {
                    cell.parse::<f64>()
                        .map_err(|_| AgreementError::Format(format!("row {} has a missing or non-numeric cell `{cell}`", i + 1)))
                })
                .collect::<Result<Vec<f64>, _>>()?;
            values.push(row);
        }
        RatingsMatrix::new(targets, raters, values)
    }
}

/// Two-way mixed, single-measure, consistency ICC(3,1).
pub fn icc_3_1(matrix: &RatingsMatrix) -> Result<f64, AgreementError> {
    let n = matrix.values.len();
    let k = matrix.raters.len();
    if n < 2 {
        return Err(AgreementError::TooSmall { what: "targets", needed: 2, got: n });
    }
    if k < 2 {
        return Err(AgreementError::TooSmall { what: "raters", needed: 2, got: k });
    }
    let (nf, kf) = (n as f64, k as f64);
    let grand = matrix.values.iter().flatten().sum::<f64>() / (nf * kf);
    let row_means: Vec<f64> = matrix.values.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let col_means: Vec<f64> = (0..k)
        .map(|j| matrix.values.iter().map(|r| r[j]).sum::<f64>() / nf)
        .collect();
    let ss_rows = kf * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_cols = nf * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_total: f64 = matrix.values.iter().flatten().map(|x| (x - grand).powi(2)).sum();
    let ss_error = (ss_total - ss_rows - ss_cols).max(0.0);
    let bms = ss_rows / (nf - 1.0);
    let ems = ss_error / ((nf - 1.0) * (kf - 1.0));
    if bms <= f64::EPSILON * ss_total.max(1.0) {
        return Err(AgreementError::ZeroVariance("between-target mean square"));
    }
    Ok((bms - ems) / (bms + (kf - 1.0) * ems))
}

/// Sample Pearson correlation.
pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<f64, AgreementError> {
    if x.len() != y.len() {
        return Err(AgreementError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AgreementError::TooSmall { what: "observations", needed: 3, got: x.len() });
    }
    correlation(x, y)
}

pub(crate) fn correlation(x: &[f64], y: &[f64]) -> Result<f64, AgreementError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 {
        return Err(AgreementError::ZeroVariance("x"));
    }
    if syy == 0.0 {
        return Err(AgreementError::ZeroVariance("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}
