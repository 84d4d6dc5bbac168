//! Average ranks and Spearman correlation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dist::student_t_two_sided;
use super::table::CurveTable;
use super::ttest::one_sample_t;
use super::{mean, StatsError};

/// Largest sample size for which the exact permutation p-value is used.
pub const EXACT_MAX_PAIRS: usize = 12;

/// Ranks starting at 1; tied values share the average of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Ranks of one participant's per-curve values.
pub fn rank_within_participant(values: &[f64]) -> Vec<f64> {
    average_ranks(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    TApproximation,
    ExactPermutation,
    /// One-sample t test of per-participant rhos against zero.
    ParticipantMeanT,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spearman {
    pub rho: f64,
    pub p: f64,
    pub n_pairs: usize,
    pub method: PValueMethod,
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    let (mx, my) = (mean(x), mean(y));
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rho with average-rank ties. The p-value is exact (permutation)
/// for `n ≤ 12` and uses `t = rho·√((n − 2)/(1 − rho²))` otherwise.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Spearman, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::ShapeMismatch(format!("{} vs {} values", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::TooFewRows { needed: 3, got: n });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let rho = pearson(&rx, &ry)?;
    if n <= EXACT_MAX_PAIRS {
        return Ok(Spearman {
            rho,
            p: exact_permutation_p(&rx, &ry),
            n_pairs: n,
            method: PValueMethod::ExactPermutation,
        });
    }
    Ok(Spearman {
        rho,
        p: t_approximation_p(rho, n)?,
        n_pairs: n,
        method: PValueMethod::TApproximation,
    })
}

pub fn t_approximation_p(rho: f64, n: usize) -> Result<f64, StatsError> {
    if rho.abs() >= 1.0 {
        return Ok(0.0);
    }
    let df = (n - 2) as f64;
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    student_t_two_sided(t, df)
}

/// Two-sided permutation p-value of `Σ rx·ry` over all `n!` pairings.
///
/// Ranks are multiples of 0.5, so `4·rx·ry` is an integer and the null
/// distribution is accumulated exactly by a subset DP.
fn exact_permutation_p(rx: &[f64], ry: &[f64]) -> f64 {
    let n = rx.len();
    let hx: Vec<i64> = rx.iter().map(|r| (2.0 * r).round() as i64).collect();
    let hy: Vec<i64> = ry.iter().map(|r| (2.0 * r).round() as i64).collect();
    // distance from the null expectation, scaled by n to stay integral
    let sx: i64 = hx.iter().sum();
    let sy: i64 = hy.iter().sum();
    let centre = |s: i64| (n as i64 * s - sx * sy).abs();
    let observed = centre(hx.iter().zip(&hy).map(|(a, b)| a * b).sum());

    let mut dp: Vec<HashMap<i64, u64>> = vec![HashMap::new(); 1 << n];
    dp[0].insert(0, 1);
    for mask in 0usize..(1 << n) {
        let i = mask.count_ones() as usize;
        if i == n || dp[mask].is_empty() {
            continue;
        }
        let entries: Vec<(i64, u64)> = dp[mask].iter().map(|(&s, &c)| (s, c)).collect();
        for j in (0..n).filter(|j| mask & (1 << j) == 0) {
            let next = mask | (1 << j);
            let add = hx[i] * hy[j];
            for &(s, c) in &entries {
                *dp[next].entry(s + add).or_insert(0) += c;
            }
        }
    }
    let full = &dp[(1 << n) - 1];
    let total: u64 = full.values().sum();
    let extreme: u64 = full.iter().filter(|(&s, _)| centre(s) >= observed).map(|(_, &c)| c).sum();
    extreme as f64 / total as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpearmanPooling {
    /// Rank within participant, pool all (participant, curve) pairs.
    #[default]
    Pooled,
    /// Rho per participant, then the mean rho with a one-sample t test.
    ParticipantMean,
}

fn check_same_shape(a: &CurveTable, b: &CurveTable) -> Result<(), StatsError> {
    if a.participants != b.participants || a.curves != b.curves {
        return Err(StatsError::ShapeMismatch(
            "PSE and EBR tables must list the same participants and curves in the same order".into(),
        ));
    }
    Ok(())
}

/// Correlation between within-participant PSE ranks and EBR ranks.
pub fn pse_ebr_correlation(pse: &CurveTable, ebr: &CurveTable, pooling: SpearmanPooling) -> Result<Spearman, StatsError> {
    check_same_shape(pse, ebr)?;
    match pooling {
        SpearmanPooling::Pooled => {
            let px: Vec<f64> = pse.values.iter().flat_map(|r| rank_within_participant(r)).collect();
            let ey: Vec<f64> = ebr.values.iter().flat_map(|r| rank_within_participant(r)).collect();
            spearman(&px, &ey)
        }
        SpearmanPooling::ParticipantMean => {
            let rhos: Vec<f64> = pse
                .values
                .iter()
                .zip(&ebr.values)
                .filter_map(|(a, b)| pearson(&average_ranks(a), &average_ranks(b)).ok())
                .collect();
            let n_pairs = pse.n_rows() * pse.n_cols();
            let rho = if rhos.is_empty() {
                return Err(StatsError::ZeroVariance);
            } else {
                mean(&rhos)
            };
            let p = one_sample_t(&rhos, 0.0).map(|t| t.p).or_else(|e| match e {
                // every participant agrees exactly
                StatsError::ZeroVariance if rho != 0.0 => Ok(0.0),
                other => Err(other),
            })?;
            Ok(Spearman {
                rho,
                p,
                n_pairs,
                method: PValueMethod::ParticipantMeanT,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curves::CurveId;
    use approx::assert_abs_diff_eq;

    #[test]
    fn rank_examples() {
        assert_eq!(rank_within_participant(&[5.1, 5.2, 5.3, 5.4]), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rank_within_participant(&[5.0, 5.0, 6.0, 7.0]), vec![1.5, 1.5, 3.0, 4.0]);
        assert_eq!(rank_within_participant(&[5.4, 5.3, 5.2, 5.1]), vec![4.0, 3.0, 2.0, 1.0]);
        assert_eq!(average_ranks(&[2.0, 2.0, 2.0]), vec![2.0; 3]);
    }

    /// Brute force over every permutation.
    fn brute_p(x: &[f64], y: &[f64]) -> f64 {
        fn permute(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if k == a.len() {
                out.push(a.clone());
                return;
            }
            for i in k..a.len() {
                a.swap(k, i);
                permute(k + 1, a, out);
                a.swap(k, i);
            }
        }
        let rx = average_ranks(x);
        let ry = average_ranks(y);
        let obs = pearson(&rx, &ry).unwrap().abs();
        let mut perms = Vec::new();
        permute(0, &mut (0..y.len()).collect(), &mut perms);
        let hits = perms
            .iter()
            .filter(|p| {
                let yy: Vec<f64> = p.iter().map(|&i| ry[i]).collect();
                pearson(&rx, &yy).unwrap().abs() >= obs - 1e-12
            })
            .count();
        hits as f64 / perms.len() as f64
    }

    #[test]
    fn exact_p_matches_brute_force() {
        let cases: [(&[f64], &[f64]); 4] = [
            (&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 1.0, 4.0, 3.0, 5.0]),
            (&[1.0, 1.0, 2.0, 3.0, 4.0, 4.0], &[3.0, 1.0, 2.0, 2.0, 5.0, 6.0]),
            (&[0.3, 0.1, 0.7, 0.2, 0.9, 0.5, 0.4], &[1.0, 3.0, 2.0, 2.0, 5.0, 4.0, 1.0]),
            (&[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0, 1.5, 1.5, 3.0, 4.0]),
        ];
        for (x, y) in cases {
            let s = spearman(x, y).unwrap();
            assert_eq!(s.method, PValueMethod::ExactPermutation);
            assert_abs_diff_eq!(s.p, brute_p(x, y), epsilon = 1e-12);
        }
    }

    #[test]
    fn perfect_correlations() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s = spearman(&x, &x).unwrap();
        assert_eq!((s.rho, s.p), (1.0, 0.0));
        let rev: Vec<f64> = x.iter().rev().copied().collect();
        assert_eq!(spearman(&x, &rev).unwrap().rho, -1.0);
    }

    fn table(rows: Vec<Vec<f64>>) -> CurveTable {
        CurveTable::rates(
            (0..rows.len()).map(|i| format!("p{i}")).collect(),
            CurveId::NON_CONSTANT.to_vec(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn pooled_identity_and_reversal() {
        let pse = table(vec![
            vec![5.2, 5.6, 5.1, 5.3],
            vec![5.4, 5.9, 5.0, 5.2],
            vec![5.1, 6.2, 5.15, 5.05],
            vec![5.3, 5.5, 5.2, 5.25],
        ]);
        let same = table(pse.values.iter().map(|r| r.iter().map(|v| v * 0.01).collect()).collect());
        let s = pse_ebr_correlation(&pse, &same, SpearmanPooling::Pooled).unwrap();
        assert_abs_diff_eq!(s.rho, 1.0, epsilon = 1e-12);
        assert_eq!(s.n_pairs, 16);
        let reversed = table(pse.values.iter().map(|r| r.iter().map(|v| 10.0 - v).collect()).collect());
        let s = pse_ebr_correlation(&pse, &reversed, SpearmanPooling::Pooled).unwrap();
        assert_abs_diff_eq!(s.rho, -1.0, epsilon = 1e-12);
        let s = pse_ebr_correlation(&pse, &reversed, SpearmanPooling::ParticipantMean).unwrap();
        assert_abs_diff_eq!(s.rho, -1.0, epsilon = 1e-12);
        assert_eq!(s.p, 0.0);
    }

    #[test]
    fn shape_mismatch() {
        let a = table(vec![vec![1.0, 2.0, 3.0, 4.0]; 3]);
        let b = table(vec![vec![1.0, 2.0, 3.0, 4.0]; 4]);
        assert!(matches!(
            pse_ebr_correlation(&a, &b, SpearmanPooling::Pooled),
            Err(StatsError::ShapeMismatch(_))
        ));
    }
}
