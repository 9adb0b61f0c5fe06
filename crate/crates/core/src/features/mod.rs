//! Per-seat communication features: mimicry, lexicon rates, message
//! length, questions and positivity.
//!
//! Every feature is an average over the seat's own utterances and is
//! missing when the seat never spoke. Seats are keyed by role, so both
//! sides of a self-play negotiation are measured separately.

mod lexicon;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use lexicon::{Lexicon, LexiconEntry, LexiconError, LexiconSet, MatchMode};

use crate::exec::Execution;
use crate::scoring::dyad_id;
use crate::session::Transcript;

/// Lowercased, punctuation stripped, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub type SparseVector = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct TfIdf {
    pub vectors: Vec<SparseVector>,
    /// No utterance contained a token; every vector is zero.
    pub all_empty: bool,
}

/// Raw term counts weighted by `ln((1+N)/(1+df)) + 1`, each utterance one
/// document of the conversation.
pub fn build_tfidf<S: AsRef<str>>(utterances: &[S]) -> TfIdf {
    let docs: Vec<Vec<String>> = utterances.iter().map(|u| tokenize(u.as_ref())).collect();
    let n = docs.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for doc in &docs {
        let mut terms: Vec<&str> = doc.iter().map(String::as_str).collect();
        terms.sort_unstable();
        terms.dedup();
        for t in terms {
            *df.entry(t).or_default() += 1;
        }
    }
    let vectors: Vec<SparseVector> = docs
        .iter()
        .map(|doc| {
            let mut tf: SparseVector = BTreeMap::new();
            for t in doc {
                *tf.entry(t.clone()).or_default() += 1.0;
            }
            for (t, w) in tf.iter_mut() {
                *w *= ((1.0 + n) / (1.0 + df[t.as_str()] as f64)).ln() + 1.0;
            }
            tf
        })
        .collect();
    TfIdf {
        all_empty: vectors.iter().all(BTreeMap::is_empty),
        vectors,
    }
}

/// Cosine similarity; zero when either vector is zero.
pub fn cosine(a: &SparseVector, b: &SparseVector) -> f64 {
    let dot: f64 = a.iter().filter_map(|(t, x)| b.get(t).map(|y| x * y)).sum();
    let na: f64 = a.values().map(|x| x * x).sum();
    let nb: f64 = b.values().map(|x| x * x).sum();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb).sqrt()).clamp(0.0, 1.0)
    }
}

/// Mean cosine between each of `role`'s utterances and the counterpart
/// utterance immediately before it; missing when no such pair exists.
pub fn score_mimicry(transcript: &Transcript, role: &str) -> Option<f64> {
    let texts: Vec<&str> = transcript.utterances.iter().map(|u| u.text.as_str()).collect();
    let tfidf = build_tfidf(&texts);
    let sims: Vec<f64> = transcript
        .utterances
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(i, u)| u.role_name == role && transcript.utterances[i - 1].role_name != role)
        .map(|(i, _)| cosine(&tfidf.vectors[i], &tfidf.vectors[i - 1]))
        .collect();
    mean(&sims)
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn per_utterance(transcript: &Transcript, role: &str, f: impl Fn(&str) -> f64) -> Option<f64> {
    let values: Vec<f64> = transcript.utterances_by(role).map(|u| f(&u.text)).collect();
    mean(&values)
}

/// Lexicon matches per utterance of `role`.
pub fn count_lexicon(transcript: &Transcript, role: &str, lexicon: &Lexicon) -> Option<f64> {
    per_utterance(transcript, role, |t| lexicon.count(t) as f64)
}

/// Mean polarity of matched terms in one utterance, 0 when none match.
pub fn utterance_polarity(text: &str, lexicon: &Lexicon) -> f64 {
    let scores: Vec<f64> = lexicon
        .matches(text)
        .into_iter()
        .map(|(_, _, k)| lexicon.entries[k].score.unwrap_or(0.0))
        .collect();
    mean(&scores).unwrap_or(0.0)
}

/// Utterance polarity averaged over `role`'s utterances.
pub fn score_positivity(transcript: &Transcript, role: &str, lexicon: &Lexicon) -> Option<f64> {
    per_utterance(transcript, role, |t| utterance_polarity(t, lexicon))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feature {
    Mimicry,
    Hedges,
    Apologies,
    Gratitude,
    FirstPersonPlural,
    MessageLength,
    Questions,
    Positivity,
}

impl Feature {
    pub const ALL: [Feature; 8] = [
        Feature::Mimicry,
        Feature::Hedges,
        Feature::Apologies,
        Feature::Gratitude,
        Feature::FirstPersonPlural,
        Feature::MessageLength,
        Feature::Questions,
        Feature::Positivity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Feature::Mimicry => "mimicry",
            Feature::Hedges => "hedges",
            Feature::Apologies => "apologies",
            Feature::Gratitude => "gratitude",
            Feature::FirstPersonPlural => "first_person_plural",
            Feature::MessageLength => "message_length",
            Feature::Questions => "questions",
            Feature::Positivity => "positivity",
        }
    }

    pub fn value(self, v: &FeatureVector) -> Option<f64> {
        match self {
            Feature::Mimicry => v.mimicry,
            Feature::Hedges => v.hedges,
            Feature::Apologies => v.apologies,
            Feature::Gratitude => v.gratitude,
            Feature::FirstPersonPlural => v.first_person_plural,
            Feature::MessageLength => v.message_length,
            Feature::Questions => v.questions,
            Feature::Positivity => v.positivity,
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feature {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Feature::ALL.into_iter().find(|f| f.as_str() == s.trim()).ok_or_else(|| {
            format!(
                "unknown feature `{s}` (valid: {})",
                Feature::ALL.map(|f| f.as_str()).join(", ")
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureVector {
    pub mimicry: Option<f64>,
    pub hedges: Option<f64>,
    pub apologies: Option<f64>,
    pub gratitude: Option<f64>,
    pub first_person_plural: Option<f64>,
    pub message_length: Option<f64>,
    pub questions: Option<f64>,
    pub positivity: Option<f64>,
}

pub fn feature_vector(transcript: &Transcript, role: &str, lexicons: &LexiconSet) -> FeatureVector {
    FeatureVector {
        mimicry: score_mimicry(transcript, role),
        hedges: count_lexicon(transcript, role, &lexicons.hedges),
        apologies: count_lexicon(transcript, role, &lexicons.apologies),
        gratitude: count_lexicon(transcript, role, &lexicons.gratitude),
        first_person_plural: count_lexicon(transcript, role, &lexicons.first_person_plural),
        message_length: per_utterance(transcript, role, |t| t.split_whitespace().count() as f64),
        questions: per_utterance(transcript, role, |t| t.matches('?').count() as f64),
        positivity: score_positivity(transcript, role, &lexicons.polarity),
    }
}

/// One row per seat, keyed like the outcome table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub negotiation_id: String,
    pub exercise: String,
    pub role: String,
    pub agent_id: String,
    pub counterpart_id: String,
    pub mimicry: Option<f64>,
    pub hedges: Option<f64>,
    pub apologies: Option<f64>,
    pub gratitude: Option<f64>,
    pub first_person_plural: Option<f64>,
    pub message_length: Option<f64>,
    pub questions: Option<f64>,
    pub positivity: Option<f64>,
    pub cluster_agent: String,
    pub cluster_dyad: String,
    pub cluster_negotiation: String,
}

impl FeatureRow {
    pub fn vector(&self) -> FeatureVector {
        FeatureVector {
            mimicry: self.mimicry,
            hedges: self.hedges,
            apologies: self.apologies,
            gratitude: self.gratitude,
            first_person_plural: self.first_person_plural,
            message_length: self.message_length,
            questions: self.questions,
            positivity: self.positivity,
        }
    }
}

/// Both seats, in role-name order.
pub fn extract_features(transcript: &Transcript, lexicons: &LexiconSet) -> Vec<FeatureRow> {
    transcript
        .role_map
        .iter()
        .map(|(role, agent)| {
            let counterpart = transcript
                .role_map
                .iter()
                .find(|(r, _)| *r != role)
                .map_or(agent.as_str(), |(_, a)| a.as_str());
            let v = feature_vector(transcript, role, lexicons);
            FeatureRow {
                negotiation_id: transcript.negotiation_id.clone(),
                exercise: transcript.scenario_id.clone(),
                role: role.clone(),
                agent_id: agent.clone(),
                counterpart_id: counterpart.to_string(),
                mimicry: v.mimicry,
                hedges: v.hedges,
                apologies: v.apologies,
                gratitude: v.gratitude,
                first_person_plural: v.first_person_plural,
                message_length: v.message_length,
                questions: v.questions,
                positivity: v.positivity,
                cluster_agent: agent.clone(),
                cluster_dyad: dyad_id(&transcript.scenario_id, agent, counterpart),
                cluster_negotiation: transcript.negotiation_id.clone(),
            }
        })
        .collect()
}

/// Rows for every transcript, in transcript order.
pub fn feature_table(transcripts: &[Transcript], lexicons: &LexiconSet, exec: Execution) -> Vec<FeatureRow> {
    exec.map(transcripts, |t| extract_features(t, lexicons))
        .into_iter()
        .flatten()
        .collect()
}
