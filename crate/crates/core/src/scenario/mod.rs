//! Negotiation scenarios: roles, points schedules, fallback values and the
//! arithmetic that turns agreed terms into per-role value.

mod format;
mod frontier;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use format::{parse_scenario, render_scenario_file, SCENARIO_FORMAT};
pub use frontier::{enumerate_frontier, Frontier, MAX_FRONTIER_ISSUES};

/// Every issue in the built-in exercises offers exactly this many options.
pub const OPTIONS_PER_ISSUE: usize = 5;

/// Default turn cap: 50 exchanges, i.e. 100 utterances.
pub const DEFAULT_MAX_EXCHANGES: usize = 50;

const BUILT_INS: &[(&str, &str)] = &[
    ("lamp", include_str!("../../data/scenarios/lamp.toml")),
    ("table", include_str!("../../data/scenarios/table.toml")),
    ("chair", include_str!("../../data/scenarios/chair.toml")),
    ("rental", include_str!("../../data/scenarios/rental.toml")),
    ("employment", include_str!("../../data/scenarios/employment.toml")),
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario schema error in {origin}: `{field}`: {message}")]
    Schema {
        origin: String,
        field: String,
        message: String,
    },
    #[error("unknown built-in scenario `{name}` (available: {available})")]
    NotFound { name: String, available: String },
    #[error("could not read scenario file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot evaluate assignment for `{scenario}`: {message}")]
    Evaluation { scenario: String, message: String },
    #[error("`{0}` is distributive; frontier enumeration needs discrete issues")]
    UnsupportedKind(String),
    #[error("`{scenario}` has {issues} issues; brute-force enumeration is limited to {max}")]
    TooManyIssues {
        scenario: String,
        issues: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Distributive,
    Integrative,
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::Distributive => "distributive",
            ScenarioKind::Integrative => "integrative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueOption {
    pub label: String,
    pub term: String,
    /// Points for each role, keyed by role name.
    pub points: BTreeMap<String, i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IssueSchedule {
    /// Short key used in markers and assignments, e.g. `rent`.
    pub name: String,
    /// Column heading shown to negotiators, e.g. `Rent amount`.
    pub title: String,
    pub options: Vec<IssueOption>,
}

impl IssueSchedule {
    pub fn option(&self, label: &str) -> Option<&IssueOption> {
        self.options
            .iter()
            .find(|o| o.label.eq_ignore_ascii_case(label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleSpec {
    pub name: String,
    /// Confidential instructions; may contain `{{points:<issue>}}`
    /// placeholders that render to this role's points table.
    pub instructions: String,
    pub batna_price: Option<f64>,
    pub impasse_points: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceFrame {
    pub currency: String,
    /// Price of the item when new; anchors the default scripted ladders.
    pub new_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub id: String,
    pub title: String,
    pub kind: ScenarioKind,
    pub roles: [RoleSpec; 2],
    pub issues: Vec<IssueSchedule>,
    pub price_frame: Option<PriceFrame>,
    pub max_exchanges: usize,
}

/// Agreed terms, or the impasse marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    Price(f64),
    /// Issue name → option label. Complete assignments cover every issue.
    Options(BTreeMap<String, String>),
    Impasse,
}

impl Assignment {
    pub fn is_impasse(&self) -> bool {
        matches!(self, Assignment::Impasse)
    }

    /// Marker-protocol rendering, e.g. `price=100` or `rent=C; deposit=E`.
    pub fn to_marker_terms(&self) -> String {
        match self {
            Assignment::Price(p) => format!("price={}", format_price(*p)),
            Assignment::Options(map) => map
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join("; "),
            Assignment::Impasse => String::new(),
        }
    }
}

pub fn format_price(p: f64) -> String {
    if p.fract() == 0.0 && p.abs() < 1e15 {
        format!("{}", p as i64)
    } else {
        format!("{p}")
    }
}

/// Per-role value of an assignment plus the joint value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Valuation {
    /// Indexed like `ScenarioSpec::roles`.
    pub per_role: [f64; 2],
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Findings from [`validate_scenario`]; empty means the spec is sound.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.violations.push(Violation {
            field: field.into(),
            message: message.into(),
        });
    }
}

/// Where [`load_catalog`] reads scenarios from.
#[derive(Debug, Clone)]
pub enum CatalogSource {
    AllBuiltIns,
    BuiltIn(String),
    File(PathBuf),
}

impl CatalogSource {
    /// A built-in id when one matches, otherwise a file path.
    pub fn from_reference(reference: &str, base_dir: &Path) -> CatalogSource {
        if built_in_ids().contains(&reference) {
            CatalogSource::BuiltIn(reference.to_string())
        } else {
            let path = Path::new(reference);
            if path.is_absolute() {
                CatalogSource::File(path.to_path_buf())
            } else {
                CatalogSource::File(base_dir.join(path))
            }
        }
    }
}

pub fn built_in_ids() -> Vec<&'static str> {
    BUILT_INS.iter().map(|(id, _)| *id).collect()
}

/// Raw text of a built-in scenario file.
pub fn built_in_source(id: &str) -> Option<&'static str> {
    BUILT_INS.iter().find(|(k, _)| *k == id).map(|(_, v)| *v)
}

pub fn load_catalog(source: &CatalogSource) -> Result<Vec<ScenarioSpec>, ScenarioError> {
    match source {
        CatalogSource::AllBuiltIns => BUILT_INS
            .iter()
            .map(|(id, text)| load_validated(text, &format!("built-in:{id}")))
            .collect(),
        CatalogSource::BuiltIn(name) => {
            let text = built_in_source(name).ok_or_else(|| ScenarioError::NotFound {
                name: name.clone(),
                available: built_in_ids().join(", "),
            })?;
            Ok(vec![load_validated(text, &format!("built-in:{name}"))?])
        }
        CatalogSource::File(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
                path: path.clone(),
                source,
            })?;
            Ok(vec![load_validated(&text, &path.display().to_string())?])
        }
    }
}

/// Convenience for the built-ins, which are known to validate.
pub fn built_in(id: &str) -> Result<ScenarioSpec, ScenarioError> {
    load_catalog(&CatalogSource::BuiltIn(id.to_string())).map(|mut v| v.remove(0))
}

fn load_validated(text: &str, origin: &str) -> Result<ScenarioSpec, ScenarioError> {
    let spec = parse_scenario(text, origin)?;
    let report = validate_scenario(&spec);
    if let Some(first) = report.violations.first() {
        return Err(ScenarioError::Schema {
            origin: origin.to_string(),
            field: first.field.clone(),
            message: first.message.clone(),
        });
    }
    Ok(spec)
}

pub fn validate_scenario(spec: &ScenarioSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let role_names: Vec<&str> = spec.roles.iter().map(|r| r.name.as_str()).collect();

    if role_names[0] == role_names[1] {
        report.push("role", format!("roles must be distinct (both `{}`)", role_names[0]));
    }
    for role in &spec.roles {
        if role.name.trim().is_empty() {
            report.push("role.name", "role name is empty");
        }
        if role.instructions.trim().is_empty() {
            report.push(format!("role `{}`.instructions", role.name), "empty instructions");
        }
    }
    if spec.max_exchanges == 0 {
        report.push("max_exchanges", "must be at least 1");
    }

    match spec.kind {
        ScenarioKind::Distributive => {
            if !spec.issues.is_empty() {
                report.push("issue", "distributive scenarios have no issues");
            }
            if spec.price_frame.is_none() {
                report.push("price_frame", "distributive scenarios need a price frame");
            }
            for role in &spec.roles {
                let field = format!("role `{}`", role.name);
                match role.batna_price {
                    None => report.push(format!("{field}.batna_price"), "missing BATNA price"),
                    Some(p) if !p.is_finite() || p < 0.0 => {
                        report.push(format!("{field}.batna_price"), "BATNA must be ≥ 0")
                    }
                    Some(_) => {}
                }
                if role.impasse_points.is_some() {
                    report.push(
                        format!("{field}.impasse_points"),
                        "distributive roles take a BATNA price, not impasse points",
                    );
                }
            }
        }
        ScenarioKind::Integrative => {
            if spec.issues.is_empty() {
                report.push("issue", "integrative scenarios need at least one issue");
            }
            for role in &spec.roles {
                let field = format!("role `{}`", role.name);
                if role.impasse_points.is_none() {
                    report.push(format!("{field}.impasse_points"), "missing impasse points");
                }
                if role.batna_price.is_some() {
                    report.push(
                        format!("{field}.batna_price"),
                        "integrative roles take impasse points, not a BATNA price",
                    );
                }
            }
        }
    }

    let mut issue_names = BTreeSet::new();
    for issue in &spec.issues {
        let field = format!("issue `{}`", issue.name);
        if !issue_names.insert(issue.name.to_ascii_lowercase()) {
            report.push(field.clone(), "duplicate issue name");
        }
        if issue.options.len() != OPTIONS_PER_ISSUE {
            report.push(
                format!("{field}.options"),
                format!(
                    "options≠{OPTIONS_PER_ISSUE}: expected {OPTIONS_PER_ISSUE} options, found {}",
                    issue.options.len()
                ),
            );
        }
        let mut labels = BTreeSet::new();
        for option in &issue.options {
            if !labels.insert(option.label.to_ascii_uppercase()) {
                report.push(
                    format!("{field}.options"),
                    format!("duplicate option label `{}`", option.label),
                );
            }
            for role in &role_names {
                if !option.points.contains_key(*role) {
                    report.push(
                        format!("{field}.options[{}]", option.label),
                        format!("no points for role `{role}`"),
                    );
                }
            }
            for key in option.points.keys() {
                if !role_names.contains(&key.as_str()) {
                    report.push(
                        format!("{field}.options[{}]", option.label),
                        format!("points for unknown role `{key}`"),
                    );
                }
            }
        }
    }

    for role in &spec.roles {
        for name in placeholders(&role.instructions) {
            if !spec.issues.iter().any(|i| i.name == name) {
                report.push(
                    format!("role `{}`.instructions", role.name),
                    format!("placeholder references unknown issue `{name}`"),
                );
            }
        }
    }
    report
}

fn placeholders(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{points:") {
        let after = &rest[start + "{{points:".len()..];
        match after.find("}}") {
            Some(end) => {
                out.push(after[..end].trim().to_string());
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out
}

impl ScenarioSpec {
    pub fn role_index(&self, name: &str) -> Option<usize> {
        self.roles.iter().position(|r| r.name == name)
    }

    pub fn issue(&self, name: &str) -> Option<&IssueSchedule> {
        let wanted = normalize_key(name);
        self.issues.iter().find(|i| normalize_key(&i.name) == wanted)
    }

    /// Confidential instructions for one role with every points table rendered.
    pub fn role_instructions(&self, role: usize) -> String {
        let role_spec = &self.roles[role];
        let mut text = role_spec.instructions.trim_end().to_string();
        for issue in &self.issues {
            let placeholder = format!("{{{{points:{}}}}}", issue.name);
            if text.contains(&placeholder) {
                text = text.replace(&placeholder, &render_points_table(issue, &role_spec.name));
            }
        }
        text
    }

    /// Every complete assignment, in lexicographic option order.
    pub fn assignment_count(&self) -> usize {
        self.issues.iter().map(|i| i.options.len()).product()
    }

    /// The `index`-th complete assignment in mixed-radix order (first issue
    /// varies slowest).
    pub fn assignment_at(&self, mut index: usize) -> BTreeMap<String, String> {
        let mut chosen = vec![0usize; self.issues.len()];
        for (slot, issue) in chosen.iter_mut().zip(&self.issues).rev() {
            let n = issue.options.len();
            *slot = index % n;
            index /= n;
        }
        self.issues
            .iter()
            .zip(chosen)
            .map(|(issue, k)| (issue.name.clone(), issue.options[k].label.clone()))
            .collect()
    }

    /// Joint surplus available in a distributive case (buyer BATNA − seller BATNA).
    pub fn distributive_zopa(&self) -> Option<f64> {
        if self.kind != ScenarioKind::Distributive {
            return None;
        }
        let buyer = self.buyer_index()?;
        let seller = 1 - buyer;
        Some(self.roles[buyer].batna_price? - self.roles[seller].batna_price?)
    }

    /// Index of the role whose BATNA is the higher price (pays in the deal).
    pub fn buyer_index(&self) -> Option<usize> {
        if self.kind != ScenarioKind::Distributive {
            return None;
        }
        if let Some(i) = self.role_index("buyer") {
            return Some(i);
        }
        let a = self.roles[0].batna_price?;
        let b = self.roles[1].batna_price?;
        Some(if a >= b { 0 } else { 1 })
    }
}

fn render_points_table(issue: &IssueSchedule, role: &str) -> String {
    let mut out = String::from(
        "Option & Points - You can only agree to these; no in-between or other options\n\n",
    );
    out.push_str(&format!("Option | {} | Points\n", issue.title));
    for option in &issue.options {
        let pts = option.points.get(role).copied().unwrap_or_default();
        out.push_str(&format!("{} | {} | {}\n", option.label, option.term, pts));
    }
    out.trim_end().to_string()
}

/// Lowercase, with spaces and hyphens folded to underscores.
pub fn normalize_key(key: &str) -> String {
    key.trim()
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c == ' ' || c == '-' { '_' } else { c })
        .collect()
}

pub fn evaluate_assignment(
    spec: &ScenarioSpec,
    assignment: &Assignment,
) -> Result<Valuation, ScenarioError> {
    let err = |message: String| ScenarioError::Evaluation {
        scenario: spec.id.clone(),
        message,
    };
    match (spec.kind, assignment) {
        (ScenarioKind::Integrative, Assignment::Impasse) => {
            let mut per_role = [0.0; 2];
            for (slot, role) in per_role.iter_mut().zip(&spec.roles) {
                *slot = role.impasse_points.unwrap_or(0) as f64;
            }
            Ok(Valuation {
                per_role,
                joint: per_role[0] + per_role[1],
            })
        }
        (ScenarioKind::Distributive, Assignment::Impasse) => Ok(Valuation {
            per_role: [0.0, 0.0],
            joint: 0.0,
        }),
        (ScenarioKind::Integrative, Assignment::Options(chosen)) => {
            let mut per_role = [0i64; 2];
            for issue in &spec.issues {
                let label = chosen
                    .iter()
                    .find(|(k, _)| normalize_key(k) == normalize_key(&issue.name))
                    .map(|(_, v)| v)
                    .ok_or_else(|| err(format!("no option chosen for issue `{}`", issue.name)))?;
                let option = issue.option(label).ok_or_else(|| {
                    err(format!("unknown option `{label}` for issue `{}`", issue.name))
                })?;
                for (slot, role) in per_role.iter_mut().zip(&spec.roles) {
                    *slot += option.points.get(&role.name).copied().unwrap_or_default();
                }
            }
            for key in chosen.keys() {
                if spec.issue(key).is_none() {
                    return Err(err(format!("unknown issue `{key}`")));
                }
            }
            let per_role = [per_role[0] as f64, per_role[1] as f64];
            Ok(Valuation {
                per_role,
                joint: per_role[0] + per_role[1],
            })
        }
        (ScenarioKind::Distributive, Assignment::Price(price)) => {
            if !price.is_finite() || *price < 0.0 {
                return Err(err(format!("price {price} is outside [0, ∞)")));
            }
            let buyer = spec
                .buyer_index()
                .ok_or_else(|| err("scenario has no BATNA prices".into()))?;
            let mut per_role = [0.0; 2];
            for (i, role) in spec.roles.iter().enumerate() {
                let batna = role
                    .batna_price
                    .ok_or_else(|| err(format!("role `{}` has no BATNA", role.name)))?;
                per_role[i] = if i == buyer { batna - price } else { price - batna };
            }
            Ok(Valuation {
                per_role,
                joint: per_role[0] + per_role[1],
            })
        }
        (kind, other) => Err(err(format!("{other:?} does not fit a {kind} scenario"))),
    }
}
