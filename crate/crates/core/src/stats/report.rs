//! Full analysis of a PSE table and its text rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::anova::{rm_anova, RmAnova};
use super::multiple::{pairwise_compare, Correction, PairwiseComparison};
use super::rank::{pse_ebr_correlation, Spearman, SpearmanPooling};
use super::table::{summarize, CurveSummary, CurveTable};
use super::ttest::{one_sample_t, TTest};
use super::StatsError;
use crate::curves::CurveId;
use crate::observer::STANDARD_DURATION_S;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    pub correction: Correction,
    pub pooling: SpearmanPooling,
    /// Reference value for the one-sample tests.
    pub mu0: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            correction: Correction::Holm,
            pooling: SpearmanPooling::Pooled,
            mu0: STANDARD_DURATION_S,
        }
    }
}

/// A test that either produced a value or failed with a reportable error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome<T> {
    Ok { result: T },
    Error { error: String },
}

impl<T> Outcome<T> {
    fn from_result(r: Result<T, StatsError>) -> Self {
        match r {
            Ok(result) => Outcome::Ok { result },
            Err(e) => Outcome::Error { error: e.to_string() },
        }
    }

    pub fn ok(&self) -> Option<&T> {
        match self {
            Outcome::Ok { result } => Some(result),
            Outcome::Error { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneSampleResult {
    pub curve: CurveId,
    pub mu0: f64,
    pub test: Outcome<TTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub n_participants: usize,
    pub options: AnalysisOptions,
    pub summaries: Vec<CurveSummary>,
    pub anova: Outcome<RmAnova>,
    pub pairwise: Outcome<Vec<PairwiseComparison>>,
    pub one_sample: Vec<OneSampleResult>,
    /// `None` when no blink data was supplied.
    pub spearman: Option<Outcome<Spearman>>,
}

/// Runs every test on `pse`. Individual test failures are recorded in the
/// report; only an unusable table is an error.
pub fn analyze(pse: &CurveTable, ebr: Option<&CurveTable>, options: AnalysisOptions) -> Result<StatsReport, StatsError> {
    let summaries = summarize(pse)?;
    let one_sample = pse
        .curves
        .iter()
        .enumerate()
        .map(|(j, &curve)| OneSampleResult {
            curve,
            mu0: options.mu0,
            test: Outcome::from_result(one_sample_t(&pse.column(j), options.mu0)),
        })
        .collect();
    Ok(StatsReport {
        n_participants: pse.n_rows(),
        options,
        summaries,
        anova: Outcome::from_result(rm_anova(pse)),
        pairwise: Outcome::from_result(pairwise_compare(pse, options.correction)),
        one_sample,
        spearman: ebr.map(|e| Outcome::from_result(pse_ebr_correlation(pse, e, options.pooling))),
    })
}

fn report_rank(c: CurveId) -> usize {
    CurveId::REPORT_ORDER.iter().position(|&r| r == c).unwrap_or(usize::MAX)
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "p<.001".to_string()
    } else {
        format!("p={p:.4}")
    }
}

impl StatsReport {
    /// Descriptive table followed by a results paragraph.
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Average PSE of the progress curves (n = {})", self.n_participants);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<12} {:>22}", "Progress bar", "PSE (s) M (SD)");
        let mut rows: Vec<&CurveSummary> = self.summaries.iter().collect();
        rows.sort_by_key(|c| report_rank(c.curve));
        for c in rows {
            let _ = writeln!(s, "{:<12} {:>22}", c.curve.label(), format!("{:.3} ({:.3})", c.mean, c.sd));
        }
        let _ = writeln!(s);

        match &self.anova {
            Outcome::Ok { result: a } => {
                let _ = writeln!(
                    s,
                    "Repeated-measures ANOVA: F({},{})={:.4}, {} (Greenhouse-Geisser epsilon {}).",
                    a.df1,
                    a.df2,
                    a.f,
                    fmt_p(a.p),
                    a.gg_epsilon.map_or("n/a".to_string(), |e| format!("{e:.3}"))
                );
            }
            Outcome::Error { error } => {
                let _ = writeln!(s, "Repeated-measures ANOVA: not computed ({error}).");
            }
        }

        let corr = match self.options.correction {
            Correction::None => "uncorrected",
            Correction::Holm => "Holm-adjusted",
            Correction::Bonferroni => "Bonferroni-adjusted",
        };
        match &self.pairwise {
            Outcome::Ok { result } => {
                let _ = writeln!(s, "Multiple comparisons ({corr}):");
                for c in result {
                    let _ = writeln!(
                        s,
                        "  {} - {}: MD={:.3}, t({})={:.3}, raw {}, adjusted {}",
                        c.a.label(),
                        c.b.label(),
                        c.mean_difference,
                        c.df,
                        c.t,
                        fmt_p(c.raw_p),
                        fmt_p(c.adjusted_p)
                    );
                }
            }
            Outcome::Error { error } => {
                let _ = writeln!(s, "Multiple comparisons: not computed ({error}).");
            }
        }

        let _ = writeln!(s, "One-sample t-tests against {} s:", self.options.mu0);
        for o in &self.one_sample {
            match &o.test {
                Outcome::Ok { result: t } => {
                    let _ = writeln!(s, "  {}: t({})={:.3}, {}", o.curve.label(), t.df, t.t, fmt_p(t.p));
                }
                Outcome::Error { error } => {
                    let _ = writeln!(s, "  {}: not computed ({error})", o.curve.label());
                }
            }
        }

        match &self.spearman {
            None => {
                let _ = writeln!(s, "PSE-EBR rank correlation: absent (no blink data).");
            }
            Some(Outcome::Ok { result: r }) => {
                let _ = writeln!(s, "PSE-EBR rank correlation: r={:.3}, {} ({} pairs).", r.rho, fmt_p(r.p), r.n_pairs);
            }
            Some(Outcome::Error { error }) => {
                let _ = writeln!(s, "PSE-EBR rank correlation: not computed ({error}).");
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_on_constructed_table() {
        let t = CurveTable::with_moments(
            20,
            &[
                (CurveId::Bezier, 5.238, 0.370),
                (CurveId::SlowDown, 5.104, 0.171),
                (CurveId::SpeedUp, 5.672, 0.746),
                (CurveId::Elasticity, 5.232, 0.234),
            ],
            3,
        )
        .unwrap();
        let r = analyze(&t, None, AnalysisOptions::default()).unwrap();
        let a = r.anova.ok().unwrap();
        assert_eq!((a.df1, a.df2), (3.0, 57.0));
        assert_eq!(r.pairwise.ok().unwrap().len(), 6);
        assert!(r.spearman.is_none());
        let text = r.render_text();
        assert!(text.contains("F(3,57)="));
        assert!(text.contains("absent"));
        let json = serde_json::to_string(&r).unwrap();
        let back: StatsReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn identical_rows_report_errors_per_test() {
        let t = CurveTable::pse(
            (0..20).map(|i| format!("p{i}")).collect(),
            CurveId::NON_CONSTANT.to_vec(),
            vec![vec![5.1, 5.2, 5.3, 5.4]; 20],
        )
        .unwrap();
        let r = analyze(&t, None, AnalysisOptions::default()).unwrap();
        assert!(matches!(r.anova, Outcome::Error { .. }));
        assert!(r.one_sample.iter().all(|o| matches!(o.test, Outcome::Error { .. })));
        assert!(r.render_text().contains("not computed"));
    }
}
