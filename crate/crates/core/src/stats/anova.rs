//! One-way repeated-measures ANOVA with participants as blocks.

use serde::{Deserialize, Serialize};

use super::dist::f_sf;
use super::table::CurveTable;
use super::{mean, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmAnova {
    pub f: f64,
    pub df1: f64,
    pub df2: f64,
    pub p: f64,
    pub ss_condition: f64,
    pub ss_subject: f64,
    pub ss_error: f64,
    /// Greenhouse–Geisser sphericity estimate; reported, not applied.
    pub gg_epsilon: Option<f64>,
}

pub fn rm_anova(table: &CurveTable) -> Result<RmAnova, StatsError> {
    let n = table.n_rows();
    let k = table.n_cols();
    if n < 2 {
        return Err(StatsError::TooFewRows { needed: 2, got: n });
    }
    if k < 2 {
        return Err(StatsError::ShapeMismatch(format!("need at least 2 conditions, got {k}")));
    }
    let rows = &table.values;
    let all: Vec<f64> = rows.iter().flatten().copied().collect();
    if all.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let grand = mean(&all);
    let row_means: Vec<f64> = rows.iter().map(|r| mean(r)).collect();
    let col_means: Vec<f64> = (0..k).map(|j| mean(&table.column(j))).collect();

    let ss_condition = n as f64 * col_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_subject = k as f64 * row_means.iter().map(|m| (m - grand).powi(2)).sum::<f64>();
    let ss_error: f64 = rows
        .iter()
        .zip(&row_means)
        .flat_map(|(r, rm)| r.iter().zip(&col_means).map(move |(x, cm)| (x - rm - cm + grand).powi(2)))
        .sum();

    let scale: f64 = all.iter().map(|x| (x - grand).powi(2)).sum::<f64>().max(grand * grand);
    if ss_error <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return Err(StatsError::Degenerate);
    }
    let df1 = (k - 1) as f64;
    let df2 = ((n - 1) * (k - 1)) as f64;
    let f = (ss_condition / df1) / (ss_error / df2);
    Ok(RmAnova {
        f,
        df1,
        df2,
        p: f_sf(f, df1, df2)?,
        ss_condition,
        ss_subject,
        ss_error,
        gg_epsilon: greenhouse_geisser(table, &col_means),
    })
}

/// `ε = tr(S*)² / ((k − 1)·Σ S*ᵢⱼ²)` with `S*` the double-centred condition
/// covariance matrix.
fn greenhouse_geisser(table: &CurveTable, col_means: &[f64]) -> Option<f64> {
    let n = table.n_rows() as f64;
    let k = table.n_cols();
    let mut cov = vec![vec![0.0; k]; k];
    for r in &table.values {
        for i in 0..k {
            for j in 0..k {
                cov[i][j] += (r[i] - col_means[i]) * (r[j] - col_means[j]) / (n - 1.0);
            }
        }
    }
    let row_avg: Vec<f64> = cov.iter().map(|r| r.iter().sum::<f64>() / k as f64).collect();
    let all_avg = row_avg.iter().sum::<f64>() / k as f64;
    let mut trace = 0.0;
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let c = cov[i][j] - row_avg[i] - row_avg[j] + all_avg;
            sq += c * c;
            if i == j {
                trace += c;
            }
        }
    }
    let eps = trace * trace / ((k as f64 - 1.0) * sq);
    eps.is_finite().then_some(eps)
}
