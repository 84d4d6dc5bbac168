use serde::{Deserialize, Serialize};

use super::dist::student_t_two_sided;
use super::{mean, negligible_variance, variance, StatsError};

/// Result of a two-sided t test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Mean of the sample (or of the paired differences).
    pub mean: f64,
}

pub fn one_sample_t(values: &[f64], mu0: f64) -> Result<TTest, StatsError> {
    let n = values.len();
    if n < 2 {
        return Err(StatsError::TooFewRows { needed: 2, got: n });
    }
    if values.iter().any(|v| !v.is_finite()) || !mu0.is_finite() {
        return Err(StatsError::NonFinite);
    }
    let m = mean(values);
    let var = variance(values);
    if negligible_variance(var, values) {
        return Err(StatsError::ZeroVariance);
    }
    let t = (m - mu0) / (var / n as f64).sqrt();
    let df = (n - 1) as f64;
    Ok(TTest {
        t,
        df,
        p: student_t_two_sided(t, df)?,
        mean: m,
    })
}

/// Paired t test on `a − b`.
///
/// Identical columns (all differences exactly zero) give `t = 0, p = 1`;
/// any other zero-variance difference is an error.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::ShapeMismatch(format!("{} vs {} values", a.len(), b.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.len() >= 2 && d.iter().all(|&x| x == 0.0) {
        return Ok(TTest {
            t: 0.0,
            df: (d.len() - 1) as f64,
            p: 1.0,
            mean: 0.0,
        });
    }
    one_sample_t(&d, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn small_sample_reference() {
        // mean 5.25, sd sqrt(1/60): t = sqrt(15); p from 40-digit mpmath
        let r = one_sample_t(&[5.1, 5.3, 5.2, 5.4], 5.0).unwrap();
        assert_abs_diff_eq!(r.t, 15f64.sqrt(), epsilon = 1e-9);
        assert_eq!(r.df, 3.0);
        assert_abs_diff_eq!(r.p, 0.030_466_291_662_170_99, epsilon = 1e-10);
    }

    #[test]
    fn null_case() {
        let vals = [5.0 + 1e-3, 5.0 - 1e-3, 5.0 + 2e-3, 5.0 - 2e-3];
        let r = one_sample_t(&vals, 5.0).unwrap();
        assert!(r.t.abs() < 1e-9);
        assert_abs_diff_eq!(r.p, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn errors() {
        assert_eq!(one_sample_t(&[5.0], 5.0), Err(StatsError::TooFewRows { needed: 2, got: 1 }));
        assert_eq!(one_sample_t(&[5.2; 6], 5.0), Err(StatsError::ZeroVariance));
        assert_eq!(paired_t(&[1.0, 2.0], &[0.0, 1.0]), Err(StatsError::ZeroVariance));
    }

    #[test]
    fn identical_pairs() {
        let a = [5.0, 5.5, 6.0];
        let r = paired_t(&a, &a).unwrap();
        assert_eq!((r.t, r.p, r.mean), (0.0, 1.0, 0.0));
    }
}
