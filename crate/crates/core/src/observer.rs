//! Simulated participants.
//!
//! A [`ObserverModel`] answers forced-choice trials by sampling the same
//! shifted Weibull the staircase assumes, centred on its ground-truth PSE for
//! each curve. Cohorts draw those ground truths from per-curve Gaussians.
//!
//! The anchored observer is an extrapolated mechanism for rehearsal tests:
//! `T(c) = 5·(1 + λ·[c ≠ Constant] + κ·(v̄_const − v̄_c))`, with `v̄` the
//! mean velocity over the final second of the bar.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{CurveId, CurveSpec};
use crate::protocol::{self, IntervalResponse, NextStep, ProtocolError, SessionConfig, SessionState};
use crate::quest::{self, PsychometricParams, QuestConfig, QuestError, QuestState, Response, TrialObservation};
use crate::rng::{self, TRUTH_STREAM};
use crate::stats::table::CurveTable;

/// Duration of the non-constant standard bar.
pub const STANDARD_DURATION_S: f64 = 5.0;

/// Trial-index offset for practice answers, keeping them off the main streams.
const PRACTICE_STREAM_BASE: u64 = 1 << 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error("invalid observer: {0}")]
    InvalidObserver(String),
    #[error("observer has no PSE for curve {0}")]
    UnknownCurve(CurveId),
    #[error("n_trials must be >= 1")]
    NoTrials,
    #[error("cohort needs at least 2 observers, got {0}")]
    CohortTooSmall(usize),
    #[error("invalid generator: {0}")]
    InvalidGenerator(String),
    #[error("anchored fit needs at least two distinct curves with targets")]
    UnderdeterminedFit,
    #[error(transparent)]
    Quest(#[from] QuestError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObserverModel {
    pub true_pse_s: BTreeMap<CurveId, f64>,
    /// Observer's psychometric function; `params.beta` is the observer slope.
    pub params: PsychometricParams,
    pub lapse: f64,
    pub seed: u64,
}

impl ObserverModel {
    /// Observer whose slope and asymptotes match the staircase defaults.
    pub fn matched(true_pse_s: BTreeMap<CurveId, f64>, seed: u64) -> Self {
        Self {
            true_pse_s,
            params: PsychometricParams::default(),
            lapse: 0.0,
            seed,
        }
    }

    /// Same PSE for every curve.
    pub fn uniform(pse: f64, seed: u64) -> Self {
        Self::matched(CurveId::ALL.into_iter().map(|c| (c, pse)).collect(), seed)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.params.beta = beta;
        self
    }

    pub fn with_lapse(mut self, lapse: f64) -> Self {
        self.lapse = lapse;
        self
    }

    pub fn beta_obs(&self) -> f64 {
        self.params.beta
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        if let Some((c, v)) = self.true_pse_s.iter().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(ObserverError::InvalidObserver(format!("true PSE for {c} must be > 0, got {v}")));
        }
        if !(0.0..0.5).contains(&self.lapse) {
            return Err(ObserverError::InvalidObserver(format!("lapse must lie in [0, 0.5), got {}", self.lapse)));
        }
        self.params
            .validate()
            .map_err(|e| ObserverError::InvalidObserver(e.to_string()))
    }

    /// Probability of answering "variable longer".
    pub fn p_longer(&self, curve: CurveId, variable_duration: f64) -> Result<f64, ObserverError> {
        let t = *self.true_pse_s.get(&curve).ok_or(ObserverError::UnknownCurve(curve))?;
        let eps = quest::calibration_offset(&self.params)?;
        let p = quest::psi(&self.params, variable_duration, t, eps);
        Ok((1.0 - self.lapse) * p + self.lapse * 0.5)
    }

    /// Samples a response. The draw depends only on `(seed, curve, trial_index)`.
    pub fn respond(&self, curve: CurveId, variable_duration: f64, trial_index: u64) -> Result<Response, ObserverError> {
        if !(variable_duration.is_finite() && variable_duration > 0.0) {
            return Err(ObserverError::InvalidObserver(format!(
                "variable duration must be > 0, got {variable_duration}"
            )));
        }
        let p = self.p_longer(curve, variable_duration)?;
        let mut rng = rng::substream(self.seed, &[curve.index() as u64, trial_index]);
        Ok(if rng.random::<f64>() < p {
            Response::VariableLonger
        } else {
            Response::VariableShorter
        })
    }
}

/// Runs one staircase against `observer` for `n_trials`.
pub fn run_session(
    observer: &ObserverModel,
    curve: CurveId,
    quest_config: QuestConfig,
    n_trials: usize,
) -> Result<(f64, QuestState), ObserverError> {
    if n_trials == 0 {
        return Err(ObserverError::NoTrials);
    }
    let mut state = quest::create_quest(quest_config)?;
    for k in 0..n_trials {
        let x = state.next_intensity();
        let response = observer.respond(curve, x, k as u64)?;
        state.record(TrialObservation { intensity: x, response })?;
    }
    Ok((state.estimate_pse(), state))
}

/// Drives a full protocol session with `observer` answering every trial.
///
/// Main trial `k` of a block is answered with `respond(curve, x, k)`, so the
/// per-curve estimates equal [`run_session`] with the same quest config.
/// Rests are skipped by advancing the simulated clock.
pub fn run_protocol_session(
    observer: &ObserverModel,
    config: SessionConfig,
    start_ms: u64,
) -> Result<SessionState, ObserverError> {
    let mut state = protocol::create_session(config)?;
    let mut now = start_ms;
    let mut practice_k = 0u64;
    let mut block_k: BTreeMap<CurveId, u64> = BTreeMap::new();
    loop {
        match state.poll(now)? {
            NextStep::Done => break,
            NextStep::Rest { remaining_s, .. } => {
                now += (remaining_s * 1000.0).ceil() as u64;
            }
            NextStep::Trial(plan) => {
                let response = match plan.phase {
                    protocol::TrialPhase::Practice => {
                        practice_k += 1;
                        let practice_observer = ObserverModel {
                            true_pse_s: BTreeMap::from([(plan.curve, plan.standard_duration_s)]),
                            ..observer.clone()
                        };
                        practice_observer.respond(plan.curve, plan.variable_duration_s, PRACTICE_STREAM_BASE + practice_k)?
                    }
                    protocol::TrialPhase::Main => {
                        let k = block_k.entry(plan.curve).or_insert(0);
                        let r = observer.respond(plan.curve, plan.variable_duration_s, *k)?;
                        *k += 1;
                        r
                    }
                };
                let trial_ms = ((plan.fixation_s + plan.isi_s + plan.first_duration_s() + plan.second_duration_s())
                    * 1000.0)
                    .round() as u64;
                now += trial_ms;
                let latency = 400.0 + (plan.trial_index % 7) as f64 * 35.0;
                state.submit_response(
                    IntervalResponse::expressing(response, plan.standard_first),
                    latency,
                    now + latency as u64,
                )?;
                now += latency as u64 + 500;
            }
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveDistribution {
    pub mean: f64,
    pub sd: f64,
}

/// Per-curve Gaussians from which cohort ground truths are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortGenerator {
    pub curves: BTreeMap<CurveId, CurveDistribution>,
}

impl CohortGenerator {
    /// Reference group means and SDs (seconds).
    pub fn reference() -> Self {
        Self::from_pairs([
            (CurveId::Bezier, 5.238, 0.370),
            (CurveId::SpeedUp, 5.104, 0.171),
            (CurveId::SlowDown, 5.672, 0.746),
            (CurveId::Elasticity, 5.232, 0.234),
        ])
    }

    /// Every curve shares one distribution.
    pub fn null(mean: f64, sd: f64) -> Self {
        Self::from_pairs(CurveId::NON_CONSTANT.map(|c| (c, mean, sd)))
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (CurveId, f64, f64)>) -> Self {
        Self {
            curves: pairs
                .into_iter()
                .map(|(c, mean, sd)| (c, CurveDistribution { mean, sd }))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ObserverError> {
        for c in CurveId::NON_CONSTANT {
            let d = self
                .curves
                .get(&c)
                .ok_or_else(|| ObserverError::InvalidGenerator(format!("missing curve {c}")))?;
            if !(d.mean.is_finite() && d.mean > 0.0 && d.sd.is_finite() && d.sd >= 0.0) {
                return Err(ObserverError::InvalidGenerator(format!(
                    "{c}: need mean > 0 and sd >= 0, got ({}, {})",
                    d.mean, d.sd
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortConfig {
    pub n_observers: usize,
    pub n_trials: usize,
    pub generator: CohortGenerator,
    pub quest: QuestConfig,
    /// Observer psychometric function (matched to `quest.params` by default).
    pub observer_params: PsychometricParams,
    pub lapse: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            n_observers: 20,
            n_trials: 40,
            generator: CohortGenerator::reference(),
            quest: QuestConfig::default(),
            observer_params: PsychometricParams::default(),
            lapse: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    pub table: CurveTable,
    pub truth: CurveTable,
    pub observers: Vec<ObserverModel>,
    pub block_orders: Vec<Vec<CurveId>>,
}

/// Ground truth for observer `i`: Gaussian draws (redrawn until inside the
/// staircase grid) and a shuffled block order, all from the observer's
/// truth substream.
pub fn cohort_observer(config: &CohortConfig, i: usize) -> (ObserverModel, Vec<CurveId>) {
    let mut rng = rng::substream(config.seed, &[i as u64, TRUTH_STREAM]);
    let (lo, hi) = (config.quest.t_min, config.quest.t_max);
    let mut truth = BTreeMap::new();
    for c in CurveId::NON_CONSTANT {
        let d = config.generator.curves[&c];
        let v = if d.sd == 0.0 {
            d.mean
        } else {
            let normal = Normal::new(d.mean, d.sd).expect("validated generator");
            let mut v = normal.sample(&mut rng);
            let mut tries = 0;
            while !(v > lo && v < hi && v > 0.0) && tries < 1000 {
                v = normal.sample(&mut rng);
                tries += 1;
            }
            v.clamp(lo.max(f64::MIN_POSITIVE), hi)
        };
        truth.insert(c, v);
    }
    let mut order = CurveId::NON_CONSTANT.to_vec();
    order.shuffle(&mut rng);
    let observer = ObserverModel {
        true_pse_s: truth,
        params: config.observer_params,
        lapse: config.lapse,
        seed: rng::seed_for(config.seed, &[i as u64]),
    };
    (observer, order)
}

/// Simulates `n_observers` participants, each measured on all four curves.
pub fn run_cohort(config: &CohortConfig) -> Result<Cohort, ObserverError> {
    if config.n_observers < 2 {
        return Err(ObserverError::CohortTooSmall(config.n_observers));
    }
    if config.n_trials == 0 {
        return Err(ObserverError::NoTrials);
    }
    config.generator.validate()?;
    quest::create_quest(config.quest)?;

    let rows: Vec<_> = (0..config.n_observers)
        .into_par_iter()
        .map(|i| -> Result<_, ObserverError> {
            let (observer, order) = cohort_observer(config, i);
            observer.validate()?;
            let mut measured = BTreeMap::new();
            for &c in &order {
                let (pse, _) = run_session(&observer, c, config.quest, config.n_trials)?;
                measured.insert(c, pse);
            }
            Ok((observer, order, measured))
        })
        .collect::<Result<_, _>>()?;

    let participants: Vec<String> = (0..config.n_observers).map(|i| format!("sim{:03}", i + 1)).collect();
    let curves = CurveId::NON_CONSTANT.to_vec();
    let measured: Vec<Vec<f64>> = rows.iter().map(|(_, _, m)| curves.iter().map(|c| m[c]).collect()).collect();
    let truth: Vec<Vec<f64>> = rows
        .iter()
        .map(|(o, _, _)| curves.iter().map(|c| o.true_pse_s[c]).collect())
        .collect();
    let table = CurveTable::pse(participants.clone(), curves.clone(), measured)
        .map_err(|e| ObserverError::InvalidGenerator(e.to_string()))?;
    let truth = CurveTable::pse(participants, curves, truth).map_err(|e| ObserverError::InvalidGenerator(e.to_string()))?;
    let (observers, block_orders) = rows.into_iter().map(|(o, b, _)| (o, b)).unzip();
    Ok(Cohort {
        table,
        truth,
        observers,
        block_orders,
    })
}

/// Session config that reproduces observer `i` of a cohort through the full
/// protocol (same quest config, trial count and block order).
pub fn cohort_session_config(config: &CohortConfig, i: usize, order: &[CurveId]) -> SessionConfig {
    SessionConfig {
        participant_id: format!("sim{:03}", i + 1),
        curves: Some(order.to_vec()),
        trials_per_curve: config.n_trials as u32,
        quest: config.quest,
        seed: rng::seed_for(config.seed, &[i as u64, rng::SESSION_STREAM]),
        ..SessionConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchoredObserverConfig {
    /// Weight on the final-second velocity deficit.
    pub kappa: f64,
    /// Offset applied to every non-constant curve.
    pub lambda: f64,
}

impl AnchoredObserverConfig {
    pub fn validate(&self) -> Result<(), ObserverError> {
        if !(self.kappa >= 0.0 && self.lambda >= 0.0) {
            return Err(ObserverError::InvalidObserver(format!(
                "kappa and lambda must be >= 0, got ({}, {})",
                self.kappa, self.lambda
            )));
        }
        Ok(())
    }
}

fn final_second_velocity(curve: CurveId) -> f64 {
    CurveSpec::new(curve).mean_velocity(0.8, 1.0).expect("fixed window")
}

/// Velocity deficit relative to the constant bar over the final second.
pub fn anchor_deficit(curve: CurveId) -> f64 {
    final_second_velocity(CurveId::Constant) - final_second_velocity(curve)
}

pub fn anchored_pse(curve: CurveId, config: &AnchoredObserverConfig) -> f64 {
    if curve == CurveId::Constant {
        return STANDARD_DURATION_S;
    }
    STANDARD_DURATION_S * (1.0 + config.lambda + config.kappa * anchor_deficit(curve))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchoredFit {
    pub config: AnchoredObserverConfig,
    pub predicted: BTreeMap<CurveId, f64>,
    pub sse: f64,
}

/// Least-squares `(κ, λ)` for the given per-curve PSE targets.
///
/// The model is linear in both parameters, so the normal equations are solved
/// directly. Parameters are not constrained to be non-negative.
pub fn fit_anchored(targets: &[(CurveId, f64)]) -> Result<AnchoredFit, ObserverError> {
    let pts: Vec<(f64, f64)> = targets
        .iter()
        .filter(|(c, _)| *c != CurveId::Constant)
        .map(|&(c, t)| (anchor_deficit(c), t / STANDARD_DURATION_S - 1.0))
        .collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return Err(ObserverError::UnderdeterminedFit);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 1e-15 {
        return Err(ObserverError::UnderdeterminedFit);
    }
    let kappa = sxy / sxx;
    let config = AnchoredObserverConfig {
        kappa,
        lambda: my - kappa * mx,
    };
    let predicted: BTreeMap<CurveId, f64> = targets.iter().map(|&(c, _)| (c, anchored_pse(c, &config))).collect();
    let sse = targets.iter().map(|(c, t)| (predicted[c] - t).powi(2)).sum();
    Ok(AnchoredFit { config, predicted, sse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn response_rate_at_true_pse_is_half() {
        let obs = ObserverModel::uniform(5.3, 99);
        let longer = (0..10_000)
            .filter(|&k| obs.respond(CurveId::Bezier, 5.3, k).unwrap() == Response::VariableLonger)
            .count();
        let rate = longer as f64 / 10_000.0;
        assert!((rate - 0.5).abs() <= 0.015, "rate {rate}");
    }

    #[test]
    fn response_rate_one_second_above() {
        let obs = ObserverModel::uniform(5.0, 5);
        // Ψ(+1 s) = 0.9901 for the default asymptotes
        assert_abs_diff_eq!(obs.p_longer(CurveId::SlowDown, 6.0).unwrap(), 0.9901, epsilon = 1e-9);
        let longer = (0..10_000)
            .filter(|&k| obs.respond(CurveId::SlowDown, 6.0, k).unwrap() == Response::VariableLonger)
            .count();
        assert!(longer as f64 / 10_000.0 >= 0.97);
    }

    #[test]
    fn responses_are_deterministic() {
        let a = ObserverModel::uniform(5.5, 7);
        let seq = |o: &ObserverModel| (0..200).map(|k| o.respond(CurveId::SpeedUp, 5.4, k).unwrap()).collect::<Vec<_>>();
        assert_eq!(seq(&a), seq(&a.clone()));
        assert_ne!(seq(&a), seq(&ObserverModel::uniform(5.5, 8)));
    }

    #[test]
    fn zero_trials_rejected() {
        let obs = ObserverModel::uniform(5.0, 1);
        assert_eq!(
            run_session(&obs, CurveId::Bezier, QuestConfig::default(), 0).unwrap_err(),
            ObserverError::NoTrials
        );
    }

    #[test]
    fn invalid_observers() {
        assert!(ObserverModel::uniform(-1.0, 0).validate().is_err());
        assert!(ObserverModel::uniform(5.0, 0).with_lapse(0.5).validate().is_err());
        assert!(ObserverModel::uniform(5.0, 0).with_lapse(0.2).validate().is_ok());
        assert!(ObserverModel::uniform(5.0, 0).respond(CurveId::Bezier, 0.0, 0).is_err());
    }

    #[test]
    fn anchored_constant_is_standard() {
        for (kappa, lambda) in [(0.0, 0.0), (0.3, 0.1), (5.0, 2.0)] {
            let cfg = AnchoredObserverConfig { kappa, lambda };
            assert_eq!(anchored_pse(CurveId::Constant, &cfg), 5.0);
        }
    }

    #[test]
    fn anchored_ordering_follows_final_speed() {
        let cfg = AnchoredObserverConfig { kappa: 0.1, lambda: 0.02 };
        let t = |c| anchored_pse(c, &cfg);
        assert!(t(CurveId::SpeedUp) < t(CurveId::Elasticity));
        assert!(t(CurveId::Elasticity) < t(CurveId::Bezier));
        assert!(t(CurveId::Bezier) < t(CurveId::SlowDown));
    }

    #[test]
    fn protocol_session_matches_direct_staircase() {
        let obs = ObserverModel::matched(
            BTreeMap::from([
                (CurveId::Bezier, 5.2),
                (CurveId::SpeedUp, 5.1),
                (CurveId::SlowDown, 5.7),
                (CurveId::Elasticity, 5.25),
            ]),
            21,
        );
        let cfg = SessionConfig {
            trials_per_curve: 12,
            seed: 4,
            ..SessionConfig::default()
        };
        let session = run_protocol_session(&obs, cfg.clone(), 1_700_000_000_000).unwrap();
        assert!(session.is_done());
        let results = session.session_results(false).unwrap();
        for c in CurveId::NON_CONSTANT {
            let (pse, _) = run_session(&obs, c, cfg.quest, 12).unwrap();
            assert_eq!(results.pse(c).unwrap(), pse);
        }
    }

    #[test]
    fn cohort_is_reproducible() {
        let cfg = CohortConfig {
            n_observers: 3,
            n_trials: 10,
            seed: 17,
            ..CohortConfig::default()
        };
        let a = run_cohort(&cfg).unwrap();
        let b = run_cohort(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.table.values.len(), 3);
        assert!(run_cohort(&CohortConfig {
            n_observers: 1,
            ..cfg.clone()
        })
        .is_err());
    }
}
