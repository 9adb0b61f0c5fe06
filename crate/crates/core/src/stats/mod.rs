//! Regression of outcomes on agent style: OLS and logistic fits with
//! one- to three-way cluster-robust covariance.
//!
//! Design columns are always ordered intercept, warmth, dominance, then the
//! optional quadratic or interaction columns. Clustering never changes the
//! point estimates, only the covariance.

mod cluster;
mod report;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

pub use cluster::{classical_vcov, multiway_vcov, one_way_meat, RobustVcov};
pub use report::{coefficient_rows, summarize_fit, CoefficientRow};

pub const Z_95: f64 = 1.96;
const IRLS_TOLERANCE: f64 = 1e-10;
const IRLS_MAX_ITERATIONS: usize = 100;
/// Linear predictors beyond this magnitude mean fitted probabilities within
/// about 1e-15 of 0 or 1, which only separation produces.
const SEPARATION_ETA: f64 = 35.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no observations")]
    Empty,
    #[error("{rows} observations cannot identify {columns} coefficients")]
    TooFewRows { rows: usize, columns: usize },
    #[error("column `{0}` has zero variance and cannot be standardized")]
    ZeroVariance(String),
    #[error("design is rank deficient; dependent column(s): {}", .0.join(", "))]
    RankDeficient(Vec<String>),
    #[error("logistic response must be 0 or 1 (row {row} has {value})")]
    NonBinary { row: usize, value: f64 },
    #[error("perfect separation: coefficients diverge (column(s) {})", .0.join(", "))]
    Separation(Vec<String>),
    #[error("logistic fit did not converge in {0} iterations")]
    NotConverged(usize),
    #[error("row {row} has an empty `{dim}` cluster id")]
    MissingCluster { row: usize, dim: ClusterDim },
    #[error("cluster dimension `{0}` has a single cluster")]
    DegenerateClustering(ClusterDim),
    #[error("non-finite value in row {row} column `{column}`")]
    NonFinite { row: usize, column: String },
}

/// One agent-observation: the outcome and the focal agent's style.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRow {
    pub y: f64,
    pub warmth: f64,
    pub dominance: f64,
    pub cluster_agent: String,
    pub cluster_dyad: String,
    pub cluster_negotiation: String,
    pub exercise: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linear,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermSet {
    Main,
    Quadratic,
    Interaction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterDim {
    Agent,
    Dyad,
    Negotiation,
}

impl ClusterDim {
    pub const ALL: [ClusterDim; 3] = [ClusterDim::Agent, ClusterDim::Dyad, ClusterDim::Negotiation];

    pub fn as_str(self) -> &'static str {
        match self {
            ClusterDim::Agent => "agent",
            ClusterDim::Dyad => "dyad",
            ClusterDim::Negotiation => "negotiation",
        }
    }

    pub fn id(self, row: &ObservationRow) -> &str {
        match self {
            ClusterDim::Agent => &row.cluster_agent,
            ClusterDim::Dyad => &row.cluster_dyad,
            ClusterDim::Negotiation => &row.cluster_negotiation,
        }
    }
}

impl fmt::Display for ClusterDim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClusterDim {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ClusterDim::ALL
            .into_iter()
            .find(|d| d.as_str() == s.trim())
            .ok_or_else(|| format!("unknown cluster dimension `{s}` (valid: agent, dyad, negotiation)"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: Family,
    pub terms: TermSet,
    pub standardize: bool,
    /// Empty means conventional (non-robust) standard errors.
    pub cluster_dims: Vec<ClusterDim>,
    /// Per-subset G/(G-1)·(N-1)/(N-K) factor; off reproduces plain CGM.
    #[serde(default)]
    pub small_sample_correction: bool,
}

impl ModelSpec {
    pub fn new(family: Family, terms: TermSet) -> Self {
        ModelSpec {
            family,
            terms,
            standardize: true,
            cluster_dims: ClusterDim::ALL.to_vec(),
            small_sample_correction: false,
        }
    }
}

/// Mean and SD used to z-score a column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaling {
    pub column: String,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub labels: Vec<String>,
    pub scaling: Vec<Scaling>,
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Design matrix and response. Under `standardize` every non-intercept
/// column, and the response of a linear model, is z-scored with the sample
/// SD.
pub fn build_design(rows: &[ObservationRow], spec: &ModelSpec) -> Result<Design, StatsError> {
    if rows.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut labels = vec!["intercept".to_string(), "warmth".into(), "dominance".into()];
    match spec.terms {
        TermSet::Main => {}
        TermSet::Quadratic => labels.extend(["warmth^2".into(), "dominance^2".into()]),
        TermSet::Interaction => labels.push("warmth:dominance".into()),
    }
    for (i, r) in rows.iter().enumerate() {
        for (column, v) in [("y", r.y), ("warmth", r.warmth), ("dominance", r.dominance)] {
            if !v.is_finite() {
                return Err(StatsError::NonFinite { row: i, column: column.into() });
            }
        }
        if spec.family == Family::Logistic && r.y != 0.0 && r.y != 1.0 {
            return Err(StatsError::NonBinary { row: i, value: r.y });
        }
    }
    let p = labels.len();
    let mut x = DMatrix::from_fn(rows.len(), p, |i, j| {
        let r = &rows[i];
        match j {
            0 => 1.0,
            1 => r.warmth,
            2 => r.dominance,
            3 if spec.terms == TermSet::Quadratic => r.warmth * r.warmth,
            4 => r.dominance * r.dominance,
            _ => r.warmth * r.dominance,
        }
    });
    let mut y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.y));
    let mut scaling = Vec::new();
    if spec.standardize {
        if rows.len() < 2 {
            return Err(StatsError::TooFewRows { rows: rows.len(), columns: p });
        }
        for j in 1..p {
            let (mean, sd) = mean_sd(x.column(j).iter().copied());
            if !(sd > 0.0) {
                return Err(StatsError::ZeroVariance(labels[j].clone()));
            }
            x.column_mut(j).apply(|v| *v = (*v - mean) / sd);
            scaling.push(Scaling { column: labels[j].clone(), mean, sd });
        }
        if spec.family == Family::Linear {
            let (mean, sd) = mean_sd(y.iter().copied());
            if !(sd > 0.0) {
                return Err(StatsError::ZeroVariance("y".into()));
            }
            y.apply(|v| *v = (*v - mean) / sd);
            scaling.push(Scaling { column: "y".into(), mean, sd });
        }
    }
    Ok(Design { x, y, labels, scaling })
}

/// Point estimates and the quantities the covariance estimators need.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub family: Family,
    pub coefficients: DVector<f64>,
    /// Fitted means: `Xβ` for linear, the probabilities for logistic.
    pub fitted: DVector<f64>,
    /// `y - fitted`.
    pub residuals: DVector<f64>,
    /// IRLS weights at the optimum; ones for linear.
    pub weights: DVector<f64>,
    pub r_squared: Option<f64>,
    pub log_likelihood: Option<f64>,
    pub iterations: usize,
}

impl Fit {
    pub fn n(&self) -> usize {
        self.fitted.len()
    }
}

/// Least squares through a thin QR of `x`; flags columns whose diagonal
/// entry in R collapses.
fn qr_solve(x: &DMatrix<f64>, y: &DVector<f64>, labels: &[String]) -> Result<DVector<f64>, StatsError> {
    let (n, p) = x.shape();
    if n < p {
        return Err(StatsError::TooFewRows { rows: n, columns: p });
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..p).map(|j| x.column(j).norm()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let dependent: Vec<String> = (0..p)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * scale)
        .map(|j| labels[j].clone())
        .collect();
    if !dependent.is_empty() {
        return Err(StatsError::RankDeficient(dependent));
    }
    let qty = qr.q().transpose() * y;
    Ok(r.solve_upper_triangular(&qty).expect("nonsingular triangular factor"))
}

pub fn fit_model(design: &Design, family: Family) -> Result<Fit, StatsError> {
    match family {
        Family::Linear => fit_linear(design),
        Family::Logistic => fit_logistic(design),
    }
}

fn fit_linear(design: &Design) -> Result<Fit, StatsError> {
    let beta = qr_solve(&design.x, &design.y, &design.labels)?;
    let fitted = &design.x * &beta;
    let residuals = &design.y - &fitted;
    let mean = design.y.mean();
    let tss: f64 = design.y.iter().map(|v| (v - mean).powi(2)).sum();
    let rss = residuals.norm_squared();
    let r_squared = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    Ok(Fit {
        family: Family::Linear,
        weights: DVector::from_element(fitted.len(), 1.0),
        coefficients: beta,
        fitted,
        residuals,
        r_squared: Some(r_squared),
        log_likelihood: None,
        iterations: 1,
    })
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Maximum likelihood by iteratively reweighted least squares from β = 0.
fn fit_logistic(design: &Design) -> Result<Fit, StatsError> {
    let (n, p) = design.x.shape();
    let y = &design.y;
    let mut beta = DVector::zeros(p);
    let separated = |eta: &DVector<f64>, beta: &DVector<f64>| {
        if eta.amax() > SEPARATION_ETA {
            let cols = (1..p)
                .filter(|&j| beta[j].abs() > 1.0)
                .map(|j| design.labels[j].clone())
                .collect::<Vec<_>>();
            let cols = if cols.is_empty() { vec![design.labels[0].clone()] } else { cols };
            Some(StatsError::Separation(cols))
        } else {
            None
        }
    };
    for iteration in 1..=IRLS_MAX_ITERATIONS {
        let eta = &design.x * &beta;
        if let Some(e) = separated(&eta, &beta) {
            return Err(e);
        }
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| m * (1.0 - m));
        let sw = w.map(f64::sqrt);
        let z = DVector::from_fn(n, |i, _| eta[i] + (y[i] - mu[i]) / w[i]);
        let xw = DMatrix::from_fn(n, p, |i, j| design.x[(i, j)] * sw[i]);
        let zw = z.component_mul(&sw);
        let next = qr_solve(&xw, &zw, &design.labels)?;
        let change = (&next - &beta).amax();
        beta = next;
        if change < IRLS_TOLERANCE {
            let eta = &design.x * &beta;
            if let Some(e) = separated(&eta, &beta) {
                return Err(e);
            }
            let mu = eta.map(sigmoid);
            let log_likelihood = (0..n)
                .map(|i| if y[i] == 1.0 { mu[i].ln() } else { (1.0 - mu[i]).ln() })
                .sum();
            return Ok(Fit {
                family: Family::Logistic,
                residuals: y - &mu,
                weights: mu.map(|m| m * (1.0 - m)),
                fitted: mu,
                coefficients: beta,
                r_squared: None,
                log_likelihood: Some(log_likelihood),
                iterations: iteration,
            });
        }
    }
    Err(StatsError::NotConverged(IRLS_MAX_ITERATIONS))
}

/// Everything a regression table needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub outcome: String,
    /// The rows' common exercise, or `pooled`.
    pub exercise: String,
    pub spec: ModelSpec,
    pub labels: Vec<String>,
    pub coefficients: Vec<f64>,
    pub vcov: Vec<Vec<f64>>,
    pub std_errors: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    pub p_values: Vec<f64>,
    pub n: usize,
    pub r_squared: Option<f64>,
    pub log_likelihood: Option<f64>,
    /// Negative eigenvalues of the multiway matrix were set to zero.
    pub eigen_truncated: bool,
    pub scaling: Vec<Scaling>,
}

/// Two-sided p-value: Student t on n - k df for linear fits, normal for
/// logistic.
fn p_value(coef: f64, se: f64, family: Family, df: f64) -> f64 {
    if se == 0.0 {
        return if coef == 0.0 { 1.0 } else { 0.0 };
    }
    let stat = (coef / se).abs();
    let tail = match family {
        Family::Linear if df > 0.0 => 1.0 - StudentsT::new(0.0, 1.0, df).expect("positive df").cdf(stat),
        _ => 1.0 - Normal::standard().cdf(stat),
    };
    (2.0 * tail).min(1.0)
}

/// Design, fit, covariance and inference in one call.
pub fn estimate(outcome: &str, rows: &[ObservationRow], spec: &ModelSpec) -> Result<FitResult, StatsError> {
    let design = build_design(rows, spec)?;
    let fit = fit_model(&design, spec.family)?;
    let (vcov, eigen_truncated) = if spec.cluster_dims.is_empty() {
        (classical_vcov(&fit, &design), false)
    } else {
        let robust = multiway_vcov(&fit, &design, rows, &spec.cluster_dims, spec.small_sample_correction)?;
        (robust.matrix, robust.truncated)
    };
    let p = design.labels.len();
    let df = (fit.n() as f64) - (p as f64);
    let coefficients: Vec<f64> = fit.coefficients.iter().copied().collect();
    let std_errors: Vec<f64> = (0..p).map(|j| vcov[(j, j)].max(0.0).sqrt()).collect();
    let exercise = match rows.iter().all(|r| r.exercise == rows[0].exercise) {
        true => rows[0].exercise.clone(),
        false => "pooled".to_string(),
    };
    Ok(FitResult {
        outcome: outcome.to_string(),
        exercise,
        spec: spec.clone(),
        labels: design.labels.clone(),
        ci_low: coefficients.iter().zip(&std_errors).map(|(b, s)| b - Z_95 * s).collect(),
        ci_high: coefficients.iter().zip(&std_errors).map(|(b, s)| b + Z_95 * s).collect(),
        p_values: coefficients
            .iter()
            .zip(&std_errors)
            .map(|(b, s)| p_value(*b, *s, spec.family, df))
            .collect(),
        vcov: (0..p).map(|i| (0..p).map(|j| vcov[(i, j)]).collect()).collect(),
        coefficients,
        std_errors,
        n: fit.n(),
        r_squared: fit.r_squared,
        log_likelihood: fit.log_likelihood,
        eigen_truncated,
        scaling: design.scaling,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn obs(y: f64, w: f64, d: f64, i: usize) -> ObservationRow {
        ObservationRow {
            y,
            warmth: w,
            dominance: d,
            cluster_agent: format!("a{}", i % 5),
            cluster_dyad: format!("d{}", i % 7),
            cluster_negotiation: format!("n{}", i / 2),
            exercise: "chair".into(),
        }
    }

    fn raw(family: Family, terms: TermSet) -> ModelSpec {
        ModelSpec {
            standardize: false,
            cluster_dims: vec![],
            ..ModelSpec::new(family, terms)
        }
    }

    #[test]
    fn main_design_has_leading_ones() {
        let rows = [obs(1.0, 2.0, 3.0, 0), obs(2.0, 5.0, 1.0, 1), obs(0.0, 4.0, 4.0, 2)];
        let d = build_design(&rows, &raw(Family::Linear, TermSet::Main)).unwrap();
        assert_eq!(d.x.shape(), (3, 3));
        assert!(d.x.column(0).iter().all(|&v| v == 1.0));
        let d = build_design(&rows, &raw(Family::Linear, TermSet::Interaction)).unwrap();
        assert_eq!(d.x.column(3).as_slice(), &[6.0, 5.0, 16.0]);
        let d = build_design(&rows, &raw(Family::Linear, TermSet::Quadratic)).unwrap();
        assert_eq!(d.x.column(3).as_slice(), &[4.0, 25.0, 16.0]);
        assert_eq!(d.x.column(4).as_slice(), &[9.0, 1.0, 16.0]);
    }

    #[test]
    fn standardized_columns() {
        let rows: Vec<_> = (0..9).map(|i| obs(i as f64 * 0.3, (i * i) as f64, (i % 4) as f64, i)).collect();
        let spec = ModelSpec { cluster_dims: vec![], ..ModelSpec::new(Family::Linear, TermSet::Interaction) };
        let d = build_design(&rows, &spec).unwrap();
        for j in 1..4 {
            let (m, s) = mean_sd(d.x.column(j).iter().copied());
            assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        }
        let (m, s) = mean_sd(d.y.iter().copied());
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        let flat: Vec<_> = (0..4).map(|i| obs(i as f64, 1.0, i as f64, i)).collect();
        assert_eq!(build_design(&flat, &spec).unwrap_err(), StatsError::ZeroVariance("warmth".into()));
    }

    #[test]
    fn exact_line() {
        let rows = [obs(2.0, 1.0, 0.0, 0), obs(4.0, 2.0, 0.0, 1), obs(6.0, 3.0, 0.0, 2)];
        // dominance is constant here, so drop it through a univariate design.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let design = Design {
            x,
            y: DVector::from_iterator(3, rows.iter().map(|r| r.y)),
            labels: vec!["intercept".into(), "x".into()],
            scaling: vec![],
        };
        let fit = fit_model(&design, Family::Linear).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!((fit.r_squared.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            fit_model(&build_design(&rows, &raw(Family::Linear, TermSet::Main)).unwrap(), Family::Linear).unwrap_err(),
            StatsError::RankDeficient(vec!["dominance".into()])
        );
    }

    #[test]
    fn logistic_balanced_intercept() {
        let x = DMatrix::from_element(6, 1, 1.0);
        let design = Design {
            x,
            y: DVector::from_row_slice(&[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]),
            labels: vec!["intercept".into()],
            scaling: vec![],
        };
        let fit = fit_model(&design, Family::Logistic).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-8);
        assert!((fit.log_likelihood.unwrap() - 6.0 * 0.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn separation_detected() {
        let rows: Vec<_> = (0..10).map(|i| obs(if i < 5 { 0.0 } else { 1.0 }, i as f64, ((i * 7) % 3) as f64, i)).collect();
        let err = estimate("deal", &rows, &raw(Family::Logistic, TermSet::Main)).unwrap_err();
        assert!(matches!(err, StatsError::Separation(ref c) if c.contains(&"warmth".to_string())), "{err:?}");
        let bad = [obs(2.0, 1.0, 1.0, 0)];
        assert!(matches!(
            build_design(&bad, &raw(Family::Logistic, TermSet::Main)),
            Err(StatsError::NonBinary { .. })
        ));
    }

    #[test]
    fn p_values_and_ci() {
        let rows: Vec<_> = (0..40)
            .map(|i| {
                let w = (i % 9) as f64;
                let d = ((i * 5) % 11) as f64;
                obs(0.5 * w - 0.2 * d + ((i * 13) % 7) as f64 * 0.1, w, d, i)
            })
            .collect();
        let r = estimate("y", &rows, &ModelSpec::new(Family::Linear, TermSet::Main)).unwrap();
        for j in 0..3 {
            assert!((r.ci_high[j] - r.coefficients[j] - 1.96 * r.std_errors[j]).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&r.p_values[j]));
        }
        assert!(r.p_values[1] < 0.05);
    }
}
