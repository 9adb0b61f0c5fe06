use serde::{Deserialize, Serialize};

use super::{ClusterDim, Family, FitResult};

/// Machine-readable form of one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub outcome: String,
    pub family: Family,
    pub term: String,
    pub estimate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
    pub n: usize,
    pub r_squared: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub eigen_truncated: bool,
}

pub fn coefficient_rows(result: &FitResult) -> Vec<CoefficientRow> {
    (0..result.labels.len())
        .map(|j| CoefficientRow {
            outcome: result.outcome.clone(),
            family: result.spec.family,
            term: result.labels[j].clone(),
            estimate: result.coefficients[j],
            std_error: result.std_errors[j],
            ci_low: result.ci_low[j],
            ci_high: result.ci_high[j],
            p_value: result.p_values[j],
            n: result.n,
            r_squared: result.r_squared,
            log_likelihood: result.log_likelihood,
            eigen_truncated: result.eigen_truncated,
        })
        .collect()
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn cluster_note(dims: &[ClusterDim]) -> String {
    let names: Vec<&str> = dims
        .iter()
        .map(|d| match d {
            ClusterDim::Agent => "agents",
            ClusterDim::Dyad => "dyad",
            ClusterDim::Negotiation => "negotiation",
        })
        .collect();
    match names.as_slice() {
        [] => "Conventional standard errors.".into(),
        [one] => format!("Standard errors clustered by {one}."),
        [a, b] => format!("Standard errors clustered by {a} and {b}."),
        [init @ .., last] => format!("Standard errors clustered by {}, and {last}.", init.join(", ")),
    }
}

const LABEL_WIDTH: usize = 22;
const VALUE_WIDTH: usize = 16;

/// Plain-text regression table: estimates with starred significance, SEs in
/// parentheses, N, fit statistic and notes. `labels` renames the terms.
pub fn summarize_fit(result: &FitResult, labels: Option<&[&str]>) -> String {
    let width = LABEL_WIDTH + VALUE_WIDTH;
    let heavy = "=".repeat(width);
    let light = "-".repeat(width);
    let family = match result.spec.family {
        Family::Linear => "OLS",
        Family::Logistic => "logistic",
    };
    let scale = if result.spec.standardize { ", standardized" } else { "" };
    let mut out = format!("{} ({family}{scale})\n{heavy}\n", result.outcome);
    for j in 0..result.labels.len() {
        let name = labels.and_then(|l| l.get(j).copied()).unwrap_or(&result.labels[j]);
        let est = format!("{:.4}{:<3}", result.coefficients[j], stars(result.p_values[j]));
        let se = format!("({:.4})   ", result.std_errors[j]);
        out.push_str(&format!("{name:<LABEL_WIDTH$}{est:>VALUE_WIDTH$}\n"));
        out.push_str(&format!("{:<LABEL_WIDTH$}{se:>VALUE_WIDTH$}\n", ""));
    }
    out.push_str(&light);
    out.push('\n');
    out.push_str(&format!("{:<LABEL_WIDTH$}{:>w$}   \n", "N", result.n, w = VALUE_WIDTH - 3));
    if let Some(r2) = result.r_squared {
        out.push_str(&format!("{:<LABEL_WIDTH$}{:>w$.4}   \n", "R2", r2, w = VALUE_WIDTH - 3));
    }
    if let Some(ll) = result.log_likelihood {
        out.push_str(&format!("{:<LABEL_WIDTH$}{:>w$.4}   \n", "Log likelihood", ll, w = VALUE_WIDTH - 3));
    }
    out.push_str(&heavy);
    out.push('\n');
    out.push_str("*p<0.05; **p<0.01; ***p<0.001\n");
    out.push_str(&cluster_note(&result.spec.cluster_dims));
    out.push('\n');
    if result.eigen_truncated {
        out.push_str("Negative eigenvalues of the clustered covariance were truncated to zero.\n");
    }
    out
}
