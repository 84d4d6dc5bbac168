//! Participants × curves tables.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{mean, variance, StatsError};
use crate::curves::CurveId;

/// Rectangular participants × curves matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveTable {
    pub participants: Vec<String>,
    pub curves: Vec<CurveId>,
    /// `values[participant][curve]`.
    pub values: Vec<Vec<f64>>,
}

/// PSE tables are curve tables whose cells are strictly positive seconds.
pub type PseTable = CurveTable;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub curve: CurveId,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

impl CurveTable {
    fn checked(
        participants: Vec<String>,
        curves: Vec<CurveId>,
        values: Vec<Vec<f64>>,
        cell_ok: impl Fn(f64) -> bool,
        what: &str,
    ) -> Result<Self, StatsError> {
        if curves.is_empty() {
            return Err(StatsError::InvalidTable("no curves".into()));
        }
        let mut seen = curves.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != curves.len() {
            return Err(StatsError::InvalidTable(format!("duplicate curves in {curves:?}")));
        }
        if participants.len() != values.len() {
            return Err(StatsError::ShapeMismatch(format!(
                "{} participants but {} rows",
                participants.len(),
                values.len()
            )));
        }
        for (p, row) in participants.iter().zip(&values) {
            if row.len() != curves.len() {
                return Err(StatsError::ShapeMismatch(format!("row {p} has {} cells, expected {}", row.len(), curves.len())));
            }
            if let Some(v) = row.iter().find(|v| !cell_ok(**v)) {
                return Err(StatsError::InvalidTable(format!("row {p}: {v} is not {what}")));
            }
        }
        Ok(Self {
            participants,
            curves,
            values,
        })
    }

    /// PSE table: every cell finite and > 0.
    pub fn pse(participants: Vec<String>, curves: Vec<CurveId>, values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        Self::checked(participants, curves, values, |v| v.is_finite() && v > 0.0, "a positive duration")
    }

    /// Rate table (e.g. EBR): every cell finite and >= 0.
    pub fn rates(participants: Vec<String>, curves: Vec<CurveId>, values: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        Self::checked(participants, curves, values, |v| v.is_finite() && v >= 0.0, "a nonnegative rate")
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.curves.len()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    pub fn column_of(&self, curve: CurveId) -> Option<Vec<f64>> {
        self.curves.iter().position(|&c| c == curve).map(|j| self.column(j))
    }

    /// Keeps only `curves`, in that order.
    pub fn select(&self, curves: &[CurveId]) -> Result<Self, StatsError> {
        let idx = curves
            .iter()
            .map(|c| {
                self.curves
                    .iter()
                    .position(|x| x == c)
                    .ok_or_else(|| StatsError::ShapeMismatch(format!("table has no column {c}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            participants: self.participants.clone(),
            curves: curves.to_vec(),
            values: self.values.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect(),
        })
    }

    /// Synthetic table whose columns have exactly the requested sample
    /// means and SDs (up to rounding). Deterministic in `seed`.
    pub fn with_moments(n: usize, targets: &[(CurveId, f64, f64)], seed: u64) -> Result<Self, StatsError> {
        if n < 2 {
            return Err(StatsError::TooFewRows { needed: 2, got: n });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cols = Vec::with_capacity(targets.len());
        for &(_, m, s) in targets {
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let zm = mean(&z);
            let zs = variance(&z).sqrt();
            cols.push(z.iter().map(|v| m + s * (v - zm) / zs).collect::<Vec<f64>>());
        }
        let values = (0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect();
        let participants = (1..=n).map(|i| format!("p{i:02}")).collect();
        Self::pse(participants, targets.iter().map(|t| t.0).collect(), values)
    }

    /// CSV with header `participant_id,<curve>,...`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["participant_id".to_string()];
        header.extend(self.curves.iter().map(|c| c.to_string()));
        w.write_record(&header).expect("in-memory write");
        for (p, row) in self.participants.iter().zip(&self.values) {
            let mut rec = vec![p.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, StatsError> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| StatsError::Csv(e.to_string()))?.clone();
        let curves = header
            .iter()
            .skip(1)
            .map(|h| h.parse::<CurveId>().map_err(|e| StatsError::Csv(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let mut participants = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| StatsError::Csv(e.to_string()))?;
            participants.push(rec.get(0).unwrap_or_default().to_string());
            values.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.trim().parse::<f64>().map_err(|e| StatsError::Csv(format!("{v:?}: {e}"))))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        Self::pse(participants, curves, values)
    }
}

/// Per-curve sample mean and `n − 1` standard deviation.
pub fn summarize(table: &CurveTable) -> Result<Vec<CurveSummary>, StatsError> {
    let n = table.n_rows();
    if n < 2 {
        return Err(StatsError::TooFewRows { needed: 2, got: n });
    }
    Ok(table
        .curves
        .iter()
        .enumerate()
        .map(|(j, &curve)| {
            let col = table.column(j);
            let sd = variance(&col).sqrt();
            CurveSummary {
                curve,
                n,
                mean: mean(&col),
                sd,
                se: sd / (n as f64).sqrt(),
            }
        })
        .collect())
}
