use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED: [(&str, &str); 5] = [
    ("hedges", include_str!("../../data/lexicons/hedges.txt")),
    ("apologies", include_str!("../../data/lexicons/apologies.txt")),
    ("gratitude", include_str!("../../data/lexicons/gratitude.txt")),
    ("first_person_plural", include_str!("../../data/lexicons/first_person_plural.txt")),
    ("polarity", include_str!("../../data/lexicons/polarity.txt")),
];

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("lexicon `{name}` line {line}: {message}")]
    Invalid { name: String, line: usize, message: String },
    #[error("lexicon `{0}` has no entries")]
    Empty(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// The phrase must not touch letters, digits or apostrophes on either side.
    #[default]
    WordBoundary,
    /// Plain substring match.
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub phrase: String,
    /// Polarity in [-1, 1] for sentiment lexicons.
    pub score: Option<f64>,
}

/// A phrase list, read from a plain-text file:
///
/// ```text
/// # comment
/// @match word-boundary      (or `phrase`)
/// thank you
/// great<TAB>0.8             (optional score)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub name: String,
    pub entries: Vec<LexiconEntry>,
    pub match_mode: MatchMode,
}

/// Lowercase, straight apostrophes, single spaces.
pub(crate) fn normalize(text: &str) -> String {
    text.to_lowercase()
        .replace(['\u{2019}', '\u{2018}'], "'")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '\''
}

impl Lexicon {
    pub fn parse(name: &str, text: &str) -> Result<Lexicon, LexiconError> {
        let invalid = |line: usize, message: String| LexiconError::Invalid {
            name: name.to_string(),
            line,
            message,
        };
        let mut match_mode = MatchMode::default();
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(mode) = line.strip_prefix("@match") {
                match_mode = match mode.trim() {
                    "word-boundary" => MatchMode::WordBoundary,
                    "phrase" => MatchMode::Phrase,
                    other => return Err(invalid(i + 1, format!("unknown match mode `{other}`"))),
                };
                continue;
            }
            let (phrase, score) = match line.split_once('\t') {
                Some((p, s)) => {
                    let score: f64 = s
                        .trim()
                        .parse()
                        .map_err(|_| invalid(i + 1, format!("score `{}` is not a number", s.trim())))?;
                    if !(-1.0..=1.0).contains(&score) {
                        return Err(invalid(i + 1, format!("score {score} outside [-1, 1]")));
                    }
                    (p, Some(score))
                }
                None => (line, None),
            };
            let phrase = normalize(phrase);
            if !seen.insert(phrase.clone()) {
                return Err(invalid(i + 1, format!("duplicate phrase `{phrase}`")));
            }
            entries.push(LexiconEntry { phrase, score });
        }
        if entries.is_empty() {
            return Err(LexiconError::Empty(name.to_string()));
        }
        Ok(Lexicon {
            name: name.to_string(),
            entries,
            match_mode,
        })
    }

    pub fn from_phrases(name: &str, phrases: &[&str], match_mode: MatchMode) -> Result<Lexicon, LexiconError> {
        let mut text = format!("@match {}\n", match match_mode {
            MatchMode::WordBoundary => "word-boundary",
            MatchMode::Phrase => "phrase",
        });
        for p in phrases {
            text.push_str(p);
            text.push('\n');
        }
        Lexicon::parse(name, &text)
    }

    pub fn load(path: &Path) -> Result<Lexicon, LexiconError> {
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("lexicon");
        Lexicon::parse(name, &text)
    }

    /// Non-overlapping matches in normalized `text`, leftmost first and
    /// longest at each position: `(start, end, entry index)`.
    pub fn matches(&self, text: &str) -> Vec<(usize, usize, usize)> {
        let text = normalize(text);
        let mut found = Vec::new();
        for (k, entry) in self.entries.iter().enumerate() {
            for (start, m) in text.match_indices(entry.phrase.as_str()) {
                let end = start + m.len();
                if self.match_mode == MatchMode::WordBoundary {
                    let before = text[..start].chars().next_back();
                    let after = text[end..].chars().next();
                    if before.is_some_and(is_word_char) || after.is_some_and(is_word_char) {
                        continue;
                    }
                }
                found.push((start, end, k));
            }
        }
        found.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)));
        let mut taken: Vec<(usize, usize, usize)> = Vec::new();
        for m in found {
            if taken.last().is_none_or(|t| m.0 >= t.1) {
                taken.push(m);
            }
        }
        taken
    }

    pub fn count(&self, text: &str) -> usize {
        self.matches(text).len()
    }
}

/// The five lexicons the feature extractor needs.
#[derive(Debug, Clone, PartialEq)]
pub struct LexiconSet {
    pub hedges: Lexicon,
    pub apologies: Lexicon,
    pub gratitude: Lexicon,
    pub first_person_plural: Lexicon,
    pub polarity: Lexicon,
}

impl LexiconSet {
    pub fn bundled() -> LexiconSet {
        let get = |name: &str| {
            let text = BUNDLED.iter().find(|(n, _)| *n == name).expect("bundled lexicon").1;
            Lexicon::parse(name, text).expect("bundled lexicons are valid")
        };
        LexiconSet {
            hedges: get("hedges"),
            apologies: get("apologies"),
            gratitude: get("gratitude"),
            first_person_plural: get("first_person_plural"),
            polarity: get("polarity"),
        }
    }

    pub fn bundled_source(name: &str) -> Option<&'static str> {
        BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    /// Reads `<name>.txt` for each lexicon from `dir`; missing files fall
    /// back to the bundled list.
    pub fn load_dir(dir: &Path) -> Result<LexiconSet, LexiconError> {
        let bundled = LexiconSet::bundled();
        let get = |name: &str, fallback: Lexicon| -> Result<Lexicon, LexiconError> {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                Lexicon::load(&path)
            } else {
                Ok(fallback)
            }
        };
        let polarity = get("polarity", bundled.polarity)?;
        if let Some(e) = polarity.entries.iter().find(|e| e.score.is_none()) {
            return Err(LexiconError::Invalid {
                name: polarity.name.clone(),
                line: 0,
                message: format!("`{}` has no score", e.phrase),
            });
        }
        Ok(LexiconSet {
            hedges: get("hedges", bundled.hedges)?,
            apologies: get("apologies", bundled.apologies)?,
            gratitude: get("gratitude", bundled.gratitude)?,
            first_person_plural: get("first_person_plural", bundled.first_person_plural)?,
            polarity,
        })
    }
}
