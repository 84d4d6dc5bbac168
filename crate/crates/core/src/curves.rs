//! Progress functions for the five bar types.
//!
//! Every curve is a normalized displacement `p: [0, 1] → [0, 1]` over the
//! fraction of elapsed display time. Labels follow the rate trend each bar is
//! meant to show: `SpeedUp` accelerates (`u²`), `SlowDown` decelerates
//! (`2u − u²`), `Bezier` eases in and out, and `Elasticity` accelerates along
//! `(e^u(1 + u) − 1)/(2e − 1)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("progress {0} is outside [0, 1]")]
    OutOfDomain(f64),
    #[error("elapsed time {elapsed} s is outside [0, {duration}] s")]
    ElapsedOutOfRange { elapsed: f64, duration: f64 },
    #[error("empty velocity window [{0}, {1}]")]
    EmptyWindow(f64, f64),
    #[error("invalid curve spec: {0}")]
    InvalidSpec(String),
    #[error("unknown curve name {0:?}")]
    UnknownCurve(String),
    #[error("final-second velocity order is {got:?}, expected {expected:?}")]
    OrderingMismatch { got: Vec<CurveId>, expected: Vec<CurveId> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveId {
    Constant,
    Bezier,
    SlowDown,
    SpeedUp,
    Elasticity,
}

impl CurveId {
    pub const ALL: [CurveId; 5] = [
        CurveId::Constant,
        CurveId::Bezier,
        CurveId::SlowDown,
        CurveId::SpeedUp,
        CurveId::Elasticity,
    ];

    /// The four curves measured against the constant bar, in canonical order.
    pub const NON_CONSTANT: [CurveId; 4] = [CurveId::Bezier, CurveId::SlowDown, CurveId::SpeedUp, CurveId::Elasticity];

    pub fn as_str(self) -> &'static str {
        match self {
            CurveId::Constant => "constant",
            CurveId::Bezier => "bezier",
            CurveId::SlowDown => "slow_down",
            CurveId::SpeedUp => "speed_up",
            CurveId::Elasticity => "elasticity",
        }
    }

    /// Row order used in printed reports.
    pub const REPORT_ORDER: [CurveId; 4] = [CurveId::Bezier, CurveId::SpeedUp, CurveId::SlowDown, CurveId::Elasticity];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Human-readable name.
    pub fn label(self) -> &'static str {
        match self {
            CurveId::Constant => "Constant",
            CurveId::Bezier => "Bezier",
            CurveId::SlowDown => "Slow Down",
            CurveId::SpeedUp => "Speed Up",
            CurveId::Elasticity => "Elasticity",
        }
    }
}

impl fmt::Display for CurveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CurveId {
    type Err = CurveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace(['-', ' '], "_");
        CurveId::ALL
            .into_iter()
            .find(|c| c.as_str() == norm || (norm == "speedup" && *c == CurveId::SpeedUp) || (norm == "slowdown" && *c == CurveId::SlowDown))
            .ok_or_else(|| CurveError::UnknownCurve(s.to_string()))
    }
}

/// Functional form of a curve, independent of its label.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Shape {
    /// `u`
    Linear,
    /// `u²`
    Accelerating,
    /// `2u − u²`
    Decelerating,
    /// Cubic Bernstein form with end points 0, 1 and interior controls `c1`, `c2`.
    CubicBezier { c1: f64, c2: f64 },
    /// `(e^{ru}(1 + ru) − 1)/(e^r(1 + r) − 1)`; `rate = 1` is the default.
    Elastic { rate: f64 },
}

impl Shape {
    pub fn default_for(id: CurveId) -> Shape {
        match id {
            CurveId::Constant => Shape::Linear,
            CurveId::SpeedUp => Shape::Accelerating,
            CurveId::SlowDown => Shape::Decelerating,
            CurveId::Bezier => Shape::CubicBezier { c1: 0.0, c2: 1.0 },
            CurveId::Elasticity => Shape::Elastic { rate: 1.0 },
        }
    }

    fn eval(self, u: f64) -> f64 {
        match self {
            Shape::Linear => u,
            Shape::Accelerating => u * u,
            Shape::Decelerating => u * (2.0 - u),
            Shape::CubicBezier { c1, c2 } => {
                let v = 1.0 - u;
                3.0 * u * v * v * c1 + 3.0 * u * u * v * c2 + u * u * u
            }
            Shape::Elastic { rate } => {
                let num = (rate * u).exp() * (1.0 + rate * u) - 1.0;
                let den = rate.exp() * (1.0 + rate) - 1.0;
                num / den
            }
        }
    }

    /// Analytic derivative `dp/du`.
    fn slope(self, u: f64) -> f64 {
        match self {
            Shape::Linear => 1.0,
            Shape::Accelerating => 2.0 * u,
            Shape::Decelerating => 2.0 - 2.0 * u,
            Shape::CubicBezier { c1, c2 } => {
                let v = 1.0 - u;
                3.0 * c1 * v * v + 6.0 * (c2 - c1) * u * v + 3.0 * (1.0 - c2) * u * u
            }
            Shape::Elastic { rate } => {
                let den = rate.exp() * (1.0 + rate) - 1.0;
                rate * (rate * u).exp() * (2.0 + rate * u) / den
            }
        }
    }
}

/// A configured progress bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub id: CurveId,
    pub shape: Shape,
    pub track_px: u32,
    pub duration_s: f64,
}

impl CurveSpec {
    pub fn new(id: CurveId) -> Self {
        Self {
            id,
            shape: Shape::default_for(id),
            track_px: 600,
            duration_s: 5.0,
        }
    }

    /// Bezier curve with custom interior control values.
    pub fn bezier(c1: f64, c2: f64) -> Self {
        Self {
            shape: Shape::CubicBezier { c1, c2 },
            ..Self::new(CurveId::Bezier)
        }
    }

    pub fn with_shape(id: CurveId, shape: Shape) -> Self {
        Self { shape, ..Self::new(id) }
    }

    pub fn defaults() -> [CurveSpec; 5] {
        CurveId::ALL.map(CurveSpec::new)
    }

    pub fn validate(&self) -> Result<(), CurveError> {
        if self.track_px == 0 {
            return Err(CurveError::InvalidSpec("track_px must be > 0".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(CurveError::InvalidSpec(format!("duration must be > 0, got {}", self.duration_s)));
        }
        if let Shape::Elastic { rate } = self.shape {
            if !rate.is_finite() || rate == 0.0 {
                return Err(CurveError::InvalidSpec(format!("elastic rate must be finite and nonzero, got {rate}")));
            }
        }
        if let Shape::CubicBezier { c1, c2 } = self.shape {
            if !(c1.is_finite() && c2.is_finite()) {
                return Err(CurveError::InvalidSpec("bezier controls must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn progress_fraction(&self, u: f64) -> Result<f64, CurveError> {
        check_unit(u)?;
        Ok(self.shape.eval(u))
    }

    /// Instantaneous velocity `dp/du` in fractions per unit progress-time.
    pub fn velocity(&self, u: f64) -> Result<f64, CurveError> {
        check_unit(u)?;
        Ok(self.shape.slope(u))
    }

    /// Filled width after `elapsed` seconds, clamped to the track.
    pub fn pixel_position(&self, elapsed: f64) -> Result<u32, CurveError> {
        if !(elapsed >= 0.0 && elapsed <= self.duration_s) {
            return Err(CurveError::ElapsedOutOfRange {
                elapsed,
                duration: self.duration_s,
            });
        }
        if elapsed == self.duration_s {
            return Ok(self.track_px);
        }
        let frac = self.shape.eval(elapsed / self.duration_s);
        let px = (f64::from(self.track_px) * frac).round();
        Ok(px.clamp(0.0, f64::from(self.track_px)) as u32)
    }

    /// Average velocity `(p(u1) − p(u0))/(u1 − u0)`.
    pub fn mean_velocity(&self, u0: f64, u1: f64) -> Result<f64, CurveError> {
        check_unit(u0)?;
        check_unit(u1)?;
        if u0 >= u1 {
            return Err(CurveError::EmptyWindow(u0, u1));
        }
        Ok((self.shape.eval(u1) - self.shape.eval(u0)) / (u1 - u0))
    }

    /// Mean velocity over the last second of the animation.
    pub fn final_second_velocity(&self) -> Result<f64, CurveError> {
        let start = (1.0 - 1.0 / self.duration_s).max(0.0);
        self.mean_velocity(start, 1.0)
    }
}

fn check_unit(u: f64) -> Result<(), CurveError> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(CurveError::OutOfDomain(u))
    }
}

/// Curves sorted by final-second mean velocity, fastest first.
pub fn final_second_ranking(specs: &[CurveSpec]) -> Result<Vec<(CurveId, f64)>, CurveError> {
    let mut ranked = specs
        .iter()
        .map(|s| s.final_second_velocity().map(|v| (s.id, v)))
        .collect::<Result<Vec<_>, _>>()?;
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    Ok(ranked)
}

/// Expected final-second ordering of the non-constant curves.
pub const FINAL_SPEED_ORDER: [CurveId; 4] = [CurveId::SpeedUp, CurveId::Elasticity, CurveId::Bezier, CurveId::SlowDown];

/// Checks that the non-constant curves in `specs` rank
/// SpeedUp > Elasticity > Bezier > SlowDown by final-second velocity.
pub fn check_final_speed_ordering(specs: &[CurveSpec]) -> Result<Vec<CurveId>, CurveError> {
    let non_constant: Vec<CurveSpec> = specs.iter().copied().filter(|s| s.id != CurveId::Constant).collect();
    let got: Vec<CurveId> = final_second_ranking(&non_constant)?.into_iter().map(|(id, _)| id).collect();
    if got == FINAL_SPEED_ORDER {
        Ok(got)
    } else {
        Err(CurveError::OrderingMismatch {
            got,
            expected: FINAL_SPEED_ORDER.to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    // (e^0.5·1.5 − 1)/(2e − 1), 40-digit mpmath
    const ELASTIC_HALF: f64 = 0.332_032_180_751_686_85;
    // (1 − p(0.8))/0.2 for the elastic curve, 40-digit mpmath
    const ELASTIC_FINAL_VELOCITY: f64 = 1.612_272_578_801_928_5;

    #[test]
    fn midpoint_values() {
        let at = |id| CurveSpec::new(id).progress_fraction(0.5).unwrap();
        assert_eq!(at(CurveId::Constant), 0.5);
        assert_eq!(at(CurveId::SpeedUp), 0.25);
        assert_eq!(at(CurveId::SlowDown), 0.75);
        assert_eq!(at(CurveId::Bezier), 0.5);
        assert_abs_diff_eq!(at(CurveId::Elasticity), ELASTIC_HALF, epsilon = 1e-14);
    }

    #[test]
    fn out_of_domain() {
        let s = CurveSpec::new(CurveId::Constant);
        assert_eq!(s.progress_fraction(1.5), Err(CurveError::OutOfDomain(1.5)));
        assert!(s.progress_fraction(f64::NAN).is_err());
        assert!(s.pixel_position(6.0).is_err());
        assert!(s.pixel_position(-0.1).is_err());
    }

    #[test]
    fn pixels() {
        assert_eq!(CurveSpec::new(CurveId::Constant).pixel_position(2.5).unwrap(), 300);
        assert_eq!(CurveSpec::new(CurveId::SpeedUp).pixel_position(2.5).unwrap(), 150);
        assert_eq!(CurveSpec::new(CurveId::Elasticity).pixel_position(5.0).unwrap(), 600);
        assert_eq!(CurveSpec::new(CurveId::Elasticity).pixel_position(0.0).unwrap(), 0);
    }

    #[test]
    fn overshoot_is_clamped() {
        let spec = CurveSpec::bezier(0.0, 1.6);
        let peak = (0..=1000)
            .map(|i| spec.progress_fraction(i as f64 / 1000.0).unwrap())
            .fold(0.0, f64::max);
        assert!(peak > 1.0);
        for i in 0..=500 {
            assert!(spec.pixel_position(i as f64 * 0.01).unwrap() <= 600);
        }
    }

    #[test]
    fn window_velocities() {
        let v = |id| CurveSpec::new(id).mean_velocity(0.8, 1.0).unwrap();
        assert_abs_diff_eq!(v(CurveId::Constant), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v(CurveId::SpeedUp), 1.8, epsilon = 1e-12);
        assert_abs_diff_eq!(v(CurveId::Elasticity), ELASTIC_FINAL_VELOCITY, epsilon = 1e-12);
        assert_abs_diff_eq!(v(CurveId::Bezier), 0.52, epsilon = 1e-12);
        assert_abs_diff_eq!(v(CurveId::SlowDown), 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(
            CurveSpec::new(CurveId::Constant).mean_velocity(0.1, 0.35).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_eq!(
            CurveSpec::new(CurveId::Constant).mean_velocity(0.5, 0.5),
            Err(CurveError::EmptyWindow(0.5, 0.5))
        );
    }

    #[test]
    fn ordering_with_constant() {
        let ranked: Vec<CurveId> = final_second_ranking(&CurveSpec::defaults())
            .unwrap()
            .into_iter()
            .map(|(id, _)| id)
            .collect();
        assert_eq!(
            ranked,
            vec![CurveId::SpeedUp, CurveId::Elasticity, CurveId::Constant, CurveId::Bezier, CurveId::SlowDown]
        );
        assert_eq!(check_final_speed_ordering(&CurveSpec::defaults()).unwrap(), FINAL_SPEED_ORDER.to_vec());
    }

    #[test]
    fn swapped_shapes_fail_ordering() {
        let mut specs = CurveSpec::defaults();
        for s in &mut specs {
            s.shape = match s.id {
                CurveId::SpeedUp => Shape::Decelerating,
                CurveId::SlowDown => Shape::Accelerating,
                _ => s.shape,
            };
        }
        assert!(matches!(check_final_speed_ordering(&specs), Err(CurveError::OrderingMismatch { .. })));
    }

    #[test]
    fn analytic_slope_matches_central_difference() {
        let h = 1e-6;
        for spec in CurveSpec::defaults() {
            for i in 1..100 {
                let u = i as f64 / 100.0;
                let fd = (spec.shape.eval(u + h) - spec.shape.eval(u - h)) / (2.0 * h);
                assert_abs_diff_eq!(spec.velocity(u).unwrap(), fd, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for id in CurveId::ALL {
            assert_eq!(id.as_str().parse::<CurveId>().unwrap(), id);
            assert_eq!(serde_json::to_string(&id).unwrap(), format!("\"{}\"", id.as_str()));
        }
        assert_eq!("Speed Up".parse::<CurveId>().unwrap(), CurveId::SpeedUp);
        assert!("wobbly".parse::<CurveId>().is_err());
    }

    #[test]
    fn invalid_specs() {
        let mut s = CurveSpec::new(CurveId::Constant);
        s.track_px = 0;
        assert!(s.validate().is_err());
        s.track_px = 600;
        s.duration_s = 0.0;
        assert!(s.validate().is_err());
    }
}
