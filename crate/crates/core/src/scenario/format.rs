//! The scenario file format.
//!
//! A TOML document whose integrative tables mirror the printed points
//! schedules one row per option:
//!
//! ```toml
//! format = "negotiation-scenario/1"
//! id = "rental"
//! kind = "integrative"
//! points_columns = ["landlord", "tenant"]
//!
//! [[issue]]
//! name = "rent"
//! title = "Rent amount"
//! options = [
//!   ["A", "$3,100 per month", 450, 1250],
//!   # ...
//! ]
//!
//! [[role]]
//! name = "landlord"
//! impasse_points = 0
//! instructions = '''... {{points:rent}} ...'''
//! ```
//!
//! Distributive files carry a `[price_frame]` table and a `batna_price`
//! per role instead of issues.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    IssueOption, IssueSchedule, PriceFrame, RoleSpec, ScenarioError, ScenarioKind, ScenarioSpec,
    DEFAULT_MAX_EXCHANGES,
};

pub const SCENARIO_FORMAT: &str = "negotiation-scenario/1";

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    format: String,
    id: String,
    kind: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    max_exchanges: Option<usize>,
    #[serde(default)]
    points_columns: Option<Vec<String>>,
    #[serde(default)]
    price_frame: Option<RawPriceFrame>,
    #[serde(default)]
    issue: Vec<RawIssue>,
    #[serde(default)]
    role: Vec<RawRole>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawPriceFrame {
    #[serde(default = "default_currency")]
    currency: String,
    new_price: f64,
}

fn default_currency() -> String {
    "USD".into()
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawIssue {
    name: String,
    #[serde(default)]
    title: Option<String>,
    options: Vec<Vec<toml::Value>>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawRole {
    name: String,
    instructions: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    batna_price: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    impasse_points: Option<i64>,
}

/// Parses one scenario document. Structural problems are schema errors;
/// semantic invariants are left to `validate_scenario`.
pub fn parse_scenario(text: &str, origin: &str) -> Result<ScenarioSpec, ScenarioError> {
    let schema = |field: &str, message: String| ScenarioError::Schema {
        origin: origin.to_string(),
        field: field.to_string(),
        message,
    };
    let raw: RawScenario = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = e
            .span()
            .map(|s| format!("byte {}", s.start))
            .unwrap_or_else(|| "document".into());
        schema(&field, message)
    })?;

    if raw.format != SCENARIO_FORMAT {
        return Err(schema(
            "format",
            format!("expected `{SCENARIO_FORMAT}`, found `{}`", raw.format),
        ));
    }
    let kind = match raw.kind.as_str() {
        "distributive" => ScenarioKind::Distributive,
        "integrative" => ScenarioKind::Integrative,
        other => {
            return Err(schema(
                "kind",
                format!("expected `distributive` or `integrative`, found `{other}`"),
            ))
        }
    };
    if raw.role.len() != 2 {
        return Err(schema(
            "role",
            format!("expected exactly 2 roles, found {}", raw.role.len()),
        ));
    }

    let columns = raw.points_columns.clone().unwrap_or_default();
    if !raw.issue.is_empty() && columns.is_empty() {
        return Err(schema("points_columns", "required when issues are present".into()));
    }

    let mut issues = Vec::with_capacity(raw.issue.len());
    for (i, issue) in raw.issue.iter().enumerate() {
        let mut options = Vec::with_capacity(issue.options.len());
        for (r, row) in issue.options.iter().enumerate() {
            let field = format!("issue[{i}] `{}`.options[{r}]", issue.name);
            if row.len() != 2 + columns.len() {
                return Err(schema(
                    &field,
                    format!(
                        "expected {} entries (label, term, {}), found {}",
                        2 + columns.len(),
                        columns.join(", "),
                        row.len()
                    ),
                ));
            }
            let label = row[0]
                .as_str()
                .ok_or_else(|| schema(&field, "option label must be a string".into()))?;
            let term = row[1]
                .as_str()
                .ok_or_else(|| schema(&field, "option term must be a string".into()))?;
            let mut points = BTreeMap::new();
            for (col, value) in columns.iter().zip(&row[2..]) {
                let pts = value.as_integer().ok_or_else(|| {
                    schema(&field, format!("points for `{col}` must be an integer"))
                })?;
                points.insert(col.clone(), pts);
            }
            options.push(IssueOption {
                label: label.to_string(),
                term: term.to_string(),
                points,
            });
        }
        issues.push(IssueSchedule {
            name: issue.name.clone(),
            title: issue.title.clone().unwrap_or_else(|| issue.name.clone()),
            options,
        });
    }

    let mut roles = raw.role.into_iter().map(|r| RoleSpec {
        name: r.name,
        instructions: r.instructions,
        batna_price: r.batna_price,
        impasse_points: r.impasse_points,
    });
    let roles = [roles.next().unwrap(), roles.next().unwrap()];

    for col in &columns {
        if !roles.iter().any(|r| &r.name == col) {
            return Err(schema(
                "points_columns",
                format!("column `{col}` does not name a role"),
            ));
        }
    }

    Ok(ScenarioSpec {
        id: raw.id,
        title: raw.title.unwrap_or_default(),
        kind,
        roles,
        issues,
        price_frame: raw.price_frame.map(|p| PriceFrame {
            currency: p.currency,
            new_price: p.new_price,
        }),
        max_exchanges: raw.max_exchanges.unwrap_or(DEFAULT_MAX_EXCHANGES),
    })
}

/// Serializes a spec back into the file format.
pub fn render_scenario_file(spec: &ScenarioSpec) -> String {
    let columns: Vec<String> = spec.roles.iter().map(|r| r.name.clone()).collect();
    let raw = RawScenario {
        format: SCENARIO_FORMAT.into(),
        id: spec.id.clone(),
        kind: spec.kind.to_string(),
        title: Some(spec.title.clone()),
        max_exchanges: Some(spec.max_exchanges),
        points_columns: (!spec.issues.is_empty()).then(|| columns.clone()),
        price_frame: spec.price_frame.as_ref().map(|p| RawPriceFrame {
            currency: p.currency.clone(),
            new_price: p.new_price,
        }),
        issue: spec
            .issues
            .iter()
            .map(|issue| RawIssue {
                name: issue.name.clone(),
                title: Some(issue.title.clone()),
                options: issue
                    .options
                    .iter()
                    .map(|o| {
                        let mut row = vec![
                            toml::Value::String(o.label.clone()),
                            toml::Value::String(o.term.clone()),
                        ];
                        row.extend(columns.iter().map(|c| {
                            toml::Value::Integer(o.points.get(c).copied().unwrap_or_default())
                        }));
                        row
                    })
                    .collect(),
            })
            .collect(),
        role: spec
            .roles
            .iter()
            .map(|r| RawRole {
                name: r.name.clone(),
                instructions: r.instructions.clone(),
                batna_price: r.batna_price,
                impasse_points: r.impasse_points,
            })
            .collect(),
    };
    toml::to_string(&raw).expect("scenario serializes")
}
