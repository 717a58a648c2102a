use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use super::table::{Criterion, ResponseTable};
use crate::{Result, StatsError};

/// Observations (rows) by criteria (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct CriterionMatrix {
    pub criteria: Vec<Criterion>,
    pub data: DMatrix<f64>,
}

/// One row per (rater, item, method) that was scored on every criterion present in the table.
pub fn criterion_matrix(table: &ResponseTable) -> CriterionMatrix {
    let criteria = table.criteria();
    let mut rows: BTreeMap<(&str, &str, &str), BTreeMap<Criterion, f64>> = BTreeMap::new();
    for r in table.records() {
        rows.entry((&r.rater_id, &r.item_id, &r.method)).or_default().insert(r.criterion, r.score);
    }
    let complete: Vec<Vec<f64>> = rows
        .values()
        .filter(|m| m.len() == criteria.len())
        .map(|m| criteria.iter().map(|c| m[c]).collect())
        .collect();
    let data = DMatrix::from_fn(complete.len(), criteria.len(), |i, j| complete[i][j]);
    CriterionMatrix { criteria, data }
}

/// Pearson correlation matrix of the columns.
pub fn correlation_matrix(data: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = data.shape();
    if n < 3 {
        return Err(StatsError::InvalidArgument(format!("need at least 3 observations, got {n}")));
    }
    let mut z = data.clone();
    for j in 0..p {
        let col = data.column(j);
        let m = col.mean();
        let sd = (col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64).sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(StatsError::Numeric(format!(
                "column {j} has zero or non-finite variance; cannot standardize"
            )));
        }
        z.column_mut(j).iter_mut().for_each(|x| *x = (*x - m) / sd);
    }
    let mut r = z.transpose() * &z / n as f64;
    for i in 0..p {
        r[(i, i)] = 1.0;
    }
    Ok(r)
}

/// Kaiser-Meyer-Olkin sampling adequacy from simple and partial correlations.
pub fn kmo(data: &DMatrix<f64>) -> Result<f64> {
    let p = data.ncols();
    if p < 3 {
        return Err(StatsError::InvalidArgument(format!("KMO needs at least 3 variables, got {p}")));
    }
    let r = correlation_matrix(data)?;
    let min_eig = SymmetricEigen::new(r.clone()).eigenvalues.min();
    if !(min_eig > 1e-10) {
        return Err(StatsError::Numeric(format!(
            "correlation matrix is singular (smallest eigenvalue {min_eig:e})"
        )));
    }
    let chol = r
        .clone()
        .cholesky()
        .ok_or_else(|| StatsError::Numeric("correlation matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    let mut r2 = 0.0;
    let mut p2 = 0.0;
    for i in 0..p {
        for j in 0..p {
            if i == j {
                continue;
            }
            let partial = -inv[(i, j)] / (inv[(i, i)] * inv[(j, j)]).sqrt();
            r2 += r[(i, j)] * r[(i, j)];
            p2 += partial * partial;
        }
    }
    if r2 + p2 == 0.0 {
        return Err(StatsError::Numeric("all simple and partial correlations vanish".into()));
    }
    Ok(r2 / (r2 + p2))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralFactor {
    pub criteria: Vec<Criterion>,
    /// Share of total variance carried by the first component.
    pub explained_fraction: f64,
    /// Variance share of every component, descending; sums to 1.
    pub component_fractions: Vec<f64>,
    /// Unit-norm first eigenvector, signed so its mean is positive.
    pub loadings: Vec<f64>,
    /// `loadings / sum(|loadings|)`.
    pub l1_loadings: Vec<f64>,
}

/// First principal component of the correlation matrix of `data`'s columns.
pub fn general_factor(data: &DMatrix<f64>, criteria: &[Criterion]) -> Result<GeneralFactor> {
    let (n, p) = data.shape();
    if p < 2 || n < 3 {
        return Err(StatsError::InvalidArgument(format!(
            "general factor needs at least 2 variables and 3 observations, got {p} and {n}"
        )));
    }
    let r = correlation_matrix(data)?;
    let eig = SymmetricEigen::new(r);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // Correlation matrices are PSD; clip round-off negatives before normalizing.
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(StatsError::Numeric("correlation matrix has no positive eigenvalue".into()));
    }
    let component_fractions: Vec<f64> = values.iter().map(|v| v / total).collect();
    let mut loadings: Vec<f64> = eig.eigenvectors.column(order[0]).iter().copied().collect();
    if loadings.iter().sum::<f64>() < 0.0 {
        loadings.iter_mut().for_each(|v| *v = -*v);
    }
    let l1: f64 = loadings.iter().map(|v| v.abs()).sum();
    let l1_loadings = loadings.iter().map(|v| v / l1).collect();
    Ok(GeneralFactor {
        criteria: criteria.to_vec(),
        explained_fraction: component_fractions[0],
        component_fractions,
        loadings,
        l1_loadings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfectly_correlated_columns() {
        let data = DMatrix::from_fn(10, 3, |i, j| (i as f64) * (j as f64 + 1.0) + j as f64);
        let gf = general_factor(&data, &Criterion::ALL).unwrap();
        assert!((gf.explained_fraction - 1.0).abs() < 1e-12);
        for l in &gf.l1_loadings {
            assert!((l - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((gf.component_fractions.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_column_is_rejected() {
        let data = DMatrix::from_fn(5, 3, |i, j| if j == 2 { 1.0 } else { (i * (j + 1)) as f64 });
        assert!(matches!(general_factor(&data, &Criterion::ALL), Err(StatsError::Numeric(_))));
    }

    #[test]
    fn singular_correlation_fails_kmo() {
        let data = DMatrix::from_fn(10, 3, |i, j| (i as f64) * (j as f64 + 1.0));
        assert!(matches!(kmo(&data), Err(StatsError::Numeric(_))));
    }
}
