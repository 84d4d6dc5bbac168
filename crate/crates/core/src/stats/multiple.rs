//! Pairwise paired comparisons with family-wise p adjustment.

use serde::{Deserialize, Serialize};

use super::table::CurveTable;
use super::ttest::paired_t;
use super::{mean, StatsError};
use crate::curves::CurveId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    None,
    #[default]
    Holm,
    Bonferroni,
}

impl std::str::FromStr for Correction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Correction::None),
            "holm" => Ok(Correction::Holm),
            "bonferroni" => Ok(Correction::Bonferroni),
            other => Err(format!("unknown correction {other:?} (expected none, holm or bonferroni)")),
        }
    }
}

/// Adjusted p-values, in input order.
pub fn adjust(raw: &[f64], correction: Correction) -> Vec<f64> {
    let m = raw.len() as f64;
    match correction {
        Correction::None => raw.to_vec(),
        Correction::Bonferroni => raw.iter().map(|p| (p * m).min(1.0)).collect(),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..raw.len()).collect();
            order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]));
            let mut out = vec![0.0; raw.len()];
            let mut running: f64 = 0.0;
            for (rank, &i) in order.iter().enumerate() {
                running = running.max(((m - rank as f64) * raw[i]).min(1.0));
                out[i] = running;
            }
            out
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub a: CurveId,
    pub b: CurveId,
    /// `mean(a) − mean(b)`.
    pub mean_difference: f64,
    pub t: f64,
    pub df: f64,
    pub raw_p: f64,
    pub adjusted_p: f64,
}

/// Paired t tests on every column pair `(i, j)`, `i < j`, in table order.
pub fn pairwise_compare(table: &CurveTable, correction: Correction) -> Result<Vec<PairwiseComparison>, StatsError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(StatsError::TooFewRows { needed: 2, got: n });
    }
    let k = table.n_cols();
    let mut out = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (table.column(i), table.column(j));
            let t = paired_t(&a, &b)?;
            out.push(PairwiseComparison {
                a: table.curves[i],
                b: table.curves[j],
                mean_difference: mean(&a) - mean(&b),
                t: t.t,
                df: t.df,
                raw_p: t.p,
                adjusted_p: f64::NAN,
            });
        }
    }
    let raw: Vec<f64> = out.iter().map(|c| c.raw_p).collect();
    for (c, p) in out.iter_mut().zip(adjust(&raw, correction)) {
        c.adjusted_p = p;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn holm_by_hand() {
        let raw = [0.01, 0.04, 0.03, 0.005];
        // sorted: 0.005·4 = 0.02, 0.01·3 = 0.03, 0.03·2 = 0.06, 0.04·1 → max 0.06
        assert_eq!(adjust(&raw, Correction::Holm), vec![0.03, 0.06, 0.06, 0.02]);
        assert_eq!(adjust(&raw, Correction::Bonferroni), vec![0.04, 0.16, 0.12, 0.02]);
        assert_eq!(adjust(&raw, Correction::None), raw.to_vec());
        assert_eq!(adjust(&[0.6, 0.9], Correction::Holm), vec![1.0, 1.0]);
    }

    #[test]
    fn identical_columns() {
        let col = [5.0, 5.3, 4.9, 5.6];
        let t = CurveTable::pse(
            (0..4).map(|i| i.to_string()).collect(),
            CurveId::NON_CONSTANT.to_vec(),
            col.iter().map(|&v| vec![v; 4]).collect(),
        )
        .unwrap();
        let cmp = pairwise_compare(&t, Correction::Holm).unwrap();
        assert_eq!(cmp.len(), 6);
        for c in cmp {
            assert_eq!(c.mean_difference, 0.0);
            assert_eq!(c.raw_p, 1.0);
            assert_eq!(c.adjusted_p, 1.0);
        }
    }

    #[test]
    fn parse_names() {
        assert_eq!("HOLM".parse::<Correction>().unwrap(), Correction::Holm);
        assert!("fdr".parse::<Correction>().is_err());
    }
}
