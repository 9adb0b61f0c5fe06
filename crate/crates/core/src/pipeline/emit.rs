use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::scoring::{Metric, OutcomeRow};
use crate::stats::{coefficient_rows, summarize_fit, CoefficientRow, FitResult};
use crate::style::StyleScores;
use crate::table::{to_csv_string, Stamp, TableError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableFormat {
    Text,
    Delimited,
}

/// One coefficient of one model, with the model's exercise and term set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub exercise: String,
    pub terms: String,
    pub standardized: bool,
    pub cluster: String,
    #[serde(flatten)]
    pub coefficient: CoefficientRow,
}

/// Delimited output goes through a flat record so the CSV writer never sees
/// nested structures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FlatAnalysisRow {
    exercise: String,
    outcome: String,
    family: crate::stats::Family,
    terms: String,
    standardized: bool,
    cluster: String,
    term: String,
    estimate: f64,
    std_error: f64,
    ci_low: f64,
    ci_high: f64,
    p_value: f64,
    n: usize,
    r_squared: Option<f64>,
    log_likelihood: Option<f64>,
    eigen_truncated: bool,
}

fn terms_name(r: &FitResult) -> &'static str {
    match r.spec.terms {
        crate::stats::TermSet::Main => "main",
        crate::stats::TermSet::Quadratic => "quadratic",
        crate::stats::TermSet::Interaction => "interaction",
    }
}

fn flat_rows(results: &[FitResult]) -> Vec<FlatAnalysisRow> {
    results
        .iter()
        .flat_map(|r| {
            let cluster = r.spec.cluster_dims.iter().map(|d| d.as_str()).collect::<Vec<_>>().join("+");
            coefficient_rows(r).into_iter().map(move |c| FlatAnalysisRow {
                exercise: r.exercise.clone(),
                outcome: c.outcome,
                family: c.family,
                terms: terms_name(r).into(),
                standardized: r.spec.standardize,
                cluster: cluster.clone(),
                term: c.term,
                estimate: c.estimate,
                std_error: c.std_error,
                ci_low: c.ci_low,
                ci_high: c.ci_high,
                p_value: c.p_value,
                n: c.n,
                r_squared: c.r_squared,
                log_likelihood: c.log_likelihood,
                eigen_truncated: c.eigen_truncated,
            })
        })
        .collect()
}

/// Renders fitted models in the given order, followed by `notes` (skipped
/// models, omitted columns). Same input, same bytes.
pub fn emit_table(
    results: &[FitResult],
    notes: &[String],
    format: TableFormat,
    stamp: Option<&Stamp>,
) -> Result<String, TableError> {
    match format {
        TableFormat::Delimited => {
            let mut text = to_csv_string(stamp, &flat_rows(results))?;
            for note in notes {
                text.push_str(&format!("# note: {note}\n"));
            }
            Ok(text)
        }
        TableFormat::Text => {
            let mut text = stamp.map(Stamp::header).unwrap_or_default();
            for r in results {
                text.push('\n');
                text.push_str(&format!("[{} / {} terms]\n", r.exercise, terms_name(r)));
                text.push_str(&summarize_fit(r, None));
            }
            if !notes.is_empty() {
                text.push_str("\nNotes:\n");
                for note in notes {
                    text.push_str(&format!("- {note}\n"));
                }
            }
            Ok(text)
        }
    }
}

/// Reads a delimited analysis table back into coefficient rows.
pub fn read_analysis_rows(text: &str, expected_hash: Option<&str>) -> Result<Vec<AnalysisRow>, TableError> {
    let (_, flat): (_, Vec<FlatAnalysisRow>) = crate::table::from_csv_str(text, "analysis table", expected_hash)?;
    Ok(flat
        .into_iter()
        .map(|f| AnalysisRow {
            exercise: f.exercise,
            terms: f.terms,
            standardized: f.standardized,
            cluster: f.cluster,
            coefficient: CoefficientRow {
                outcome: f.outcome,
                family: f.family,
                term: f.term,
                estimate: f.estimate,
                std_error: f.std_error,
                ci_low: f.ci_low,
                ci_high: f.ci_high,
                p_value: f.p_value,
                n: f.n,
                r_squared: f.r_squared,
                log_likelihood: f.log_likelihood,
                eigen_truncated: f.eigen_truncated,
            },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatCell {
    pub warmth_low: f64,
    pub warmth_high: f64,
    pub dominance_low: f64,
    pub dominance_high: f64,
    pub agents: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapGrid {
    pub metric: Metric,
    pub bins: usize,
    /// Occupied cells ordered by warmth bin, then dominance bin.
    pub cells: Vec<HeatCell>,
    /// Every agent fell into one cell.
    pub single_cell: bool,
}

fn bin(score: f64, bins: usize) -> usize {
    ((score / 100.0 * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Agent-level outcome means binned on the warmth × dominance plane; the
/// value in a cell is the mean of its agents' means.
pub fn emit_heatmap_grid(
    styles: &[StyleScores],
    rows: &[OutcomeRow],
    metric: Metric,
    bins: usize,
) -> Option<HeatmapGrid> {
    let bins = bins.max(1);
    let mut per_agent: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for row in rows {
        if let Some(v) = metric.value(row) {
            let e = per_agent.entry(&row.agent_id).or_default();
            e.0 += v;
            e.1 += 1;
        }
    }
    let mut cells: BTreeMap<(usize, usize), (f64, usize)> = BTreeMap::new();
    for s in styles {
        if let Some((sum, n)) = per_agent.get(s.agent_id.as_str()) {
            let key = (bin(s.warmth as f64, bins), bin(s.dominance as f64, bins));
            let c = cells.entry(key).or_default();
            c.0 += sum / *n as f64;
            c.1 += 1;
        }
    }
    if cells.is_empty() {
        return None;
    }
    let width = 100.0 / bins as f64;
    let single_cell = cells.len() == 1;
    if single_cell {
        log::warn!("every agent falls into one {metric} heat-map cell");
    }
    Some(HeatmapGrid {
        metric,
        bins,
        single_cell,
        cells: cells
            .into_iter()
            .map(|((w, d), (sum, n))| HeatCell {
                warmth_low: w as f64 * width,
                warmth_high: (w + 1) as f64 * width,
                dominance_low: d as f64 * width,
                dominance_high: (d + 1) as f64 * width,
                agents: n,
                mean: sum / n as f64,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioKind;
    use crate::session::Termination;

    fn row(agent: &str, v: f64) -> OutcomeRow {
        OutcomeRow {
            negotiation_id: format!("{agent}{v}"),
            exercise: "chair".into(),
            kind: ScenarioKind::Distributive,
            role: "buyer".into(),
            agent_id: agent.into(),
            counterpart_id: "x".into(),
            termination: Termination::Accepted,
            deal: true,
            value_claimed: v,
            points: None,
            proportion_of_pie: None,
            value_created: 80.0,
            efficiency: 2,
            counterpart_sv: None,
            cluster_agent: agent.into(),
            cluster_dyad: "d".into(),
            cluster_negotiation: "n".into(),
        }
    }

    fn style(agent: &str, w: u8, d: u8) -> StyleScores {
        StyleScores { agent_id: agent.into(), warmth: w, dominance: d, rater: "t".into() }
    }

    #[test]
    fn corners() {
        let g = emit_heatmap_grid(
            &[style("a", 0, 0), style("b", 100, 100)],
            &[row("a", 1.0), row("b", 3.0)],
            Metric::ValueClaimed,
            4,
        )
        .unwrap();
        assert_eq!(g.cells.len(), 2);
        assert_eq!((g.cells[0].mean, g.cells[1].mean), (1.0, 3.0));
        assert_eq!(g.cells[1].warmth_low, 75.0);
        assert!(!g.single_cell);
    }

    #[test]
    fn single_cell_flagged() {
        let g = emit_heatmap_grid(&[style("a", 10, 10), style("b", 12, 15)], &[row("a", 2.0), row("b", 4.0)], Metric::ValueClaimed, 2)
            .unwrap();
        assert!(g.single_cell);
        assert_eq!(g.cells[0].mean, 3.0);
        assert_eq!(g.cells[0].agents, 2);
    }
}
