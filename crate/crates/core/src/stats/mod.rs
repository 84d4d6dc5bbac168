//! Inferential chain for per-participant PSE tables.

pub mod anova;
pub mod dist;
pub mod ebr;
pub mod multiple;
pub mod rank;
pub mod report;
pub mod table;
pub mod ttest;

use thiserror::Error;

pub use anova::{rm_anova, RmAnova};
pub use dist::{f_cdf, student_t_cdf};
pub use ebr::{compute_ebr, BlinkRecord};
pub use multiple::{pairwise_compare, Correction, PairwiseComparison};
pub use rank::{pse_ebr_correlation, rank_within_participant, spearman, Spearman, SpearmanPooling};
pub use report::{analyze, AnalysisOptions, StatsReport};
pub use table::{summarize, CurveSummary, CurveTable, PseTable};
pub use ttest::{one_sample_t, paired_t, TTest};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("zero variance: the test statistic is undefined")]
    ZeroVariance,
    #[error("degenerate design: error variance is zero")]
    Degenerate,
    #[error("degrees of freedom must be >= 1, got {0}")]
    InvalidDf(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("phase duration must be > 0 s, got {0}")]
    NonPositiveDuration(f64),
    #[error("blink csv: {0}")]
    Csv(String),
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample variance with `n − 1` denominator (two-pass).
pub(crate) fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// True when `var` is indistinguishable from rounding noise relative to the data scale.
pub(crate) fn negligible_variance(var: f64, xs: &[f64]) -> bool {
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    var <= (1e-12 * scale.max(f64::MIN_POSITIVE)).powi(2)
}
