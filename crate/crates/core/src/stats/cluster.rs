use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};

use super::{ClusterDim, Design, Family, Fit, ObservationRow, StatsError};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustVcov {
    pub matrix: DMatrix<f64>,
    /// Set when negative eigenvalues were truncated to zero.
    pub truncated: bool,
}

/// `(X'WX)^-1`, with W the IRLS weights (identity for linear fits).
fn bread(fit: &Fit, design: &Design) -> DMatrix<f64> {
    let xw = DMatrix::from_fn(design.x.nrows(), design.x.ncols(), |i, j| design.x[(i, j)] * fit.weights[i]);
    let info = design.x.transpose() * xw;
    info.cholesky()
        .expect("information matrix of a full-rank fit is positive definite")
        .inverse()
}

/// Per-observation score contributions `x_i · (y_i - fitted_i)`.
fn scores(fit: &Fit, design: &Design) -> DMatrix<f64> {
    DMatrix::from_fn(design.x.nrows(), design.x.ncols(), |i, j| design.x[(i, j)] * fit.residuals[i])
}

/// Model-based covariance: `σ²(X'X)^-1` for linear, `(X'WX)^-1` for logistic.
pub fn classical_vcov(fit: &Fit, design: &Design) -> DMatrix<f64> {
    let b = bread(fit, design);
    match fit.family {
        Family::Linear => {
            let df = (fit.n() as f64 - design.x.ncols() as f64).max(1.0);
            b * (fit.residuals.norm_squared() / df)
        }
        Family::Logistic => b,
    }
}

/// `Σ_g (Σ_{i∈g} s_i)(Σ_{i∈g} s_i)'` for the given cluster labels, and the
/// number of clusters.
pub fn one_way_meat(scores: &DMatrix<f64>, labels: &[String]) -> (DMatrix<f64>, usize) {
    let p = scores.ncols();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut sums: Vec<DVector<f64>> = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        let g = *index.entry(label.as_str()).or_insert_with(|| {
            sums.push(DVector::zeros(p));
            sums.len() - 1
        });
        sums[g] += scores.row(i).transpose();
    }
    let mut meat = DMatrix::zeros(p, p);
    for s in &sums {
        meat += s * s.transpose();
    }
    (meat, sums.len())
}

/// Cameron–Gelbach–Miller multiway covariance: the signed sum over every
/// non-empty subset of `dims` of the one-way sandwich clustered on the
/// intersection of that subset.
pub fn multiway_vcov(
    fit: &Fit,
    design: &Design,
    rows: &[ObservationRow],
    dims: &[ClusterDim],
    small_sample_correction: bool,
) -> Result<RobustVcov, StatsError> {
    let mut dims = dims.to_vec();
    dims.sort();
    dims.dedup();
    for (i, row) in rows.iter().enumerate() {
        for &d in &dims {
            if d.id(row).is_empty() {
                return Err(StatsError::MissingCluster { row: i, dim: d });
            }
        }
    }
    for &d in &dims {
        let first = d.id(&rows[0]);
        if rows.iter().all(|r| d.id(r) == first) {
            return Err(StatsError::DegenerateClustering(d));
        }
    }
    let b = bread(fit, design);
    let s = scores(fit, design);
    let (n, k) = (fit.n() as f64, design.x.ncols() as f64);
    let p = design.x.ncols();
    let mut total = DMatrix::zeros(p, p);
    for mask in 1u32..(1 << dims.len()) {
        let subset: Vec<ClusterDim> = (0..dims.len()).filter(|b| mask & (1 << b) != 0).map(|b| dims[b]).collect();
        let labels: Vec<String> = rows
            .iter()
            .map(|r| subset.iter().map(|d| d.id(r)).collect::<Vec<_>>().join("\u{1f}"))
            .collect();
        let (meat, g) = one_way_meat(&s, &labels);
        let mut v = &b * meat * &b;
        if small_sample_correction && g > 1 {
            v *= (g as f64 / (g as f64 - 1.0)) * ((n - 1.0) / (n - k));
        }
        if subset.len() % 2 == 1 {
            total += v;
        } else {
            total -= v;
        }
    }
    let total = (&total + total.transpose()) * 0.5;
    if dims.len() == 1 {
        return Ok(RobustVcov { matrix: total, truncated: false });
    }
    let eig = total.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().all(|&l| l >= -1e-12 * scale) {
        return Ok(RobustVcov { matrix: total, truncated: false });
    }
    log::debug!("multiway covariance is not positive semidefinite; truncating negative eigenvalues");
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let matrix = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    Ok(RobustVcov { matrix, truncated: true })
}
