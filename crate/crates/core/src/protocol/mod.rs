//! Experiment state machine: practice trials with feedback, one QUEST block
//! per non-constant curve, rests between blocks, then done.
//!
//! The machine is clock-free; callers pass wall-clock milliseconds into
//! [`SessionState::next_trial`] and [`SessionState::submit_response`], which
//! keeps simulated sessions deterministic.

pub mod persist;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::CurveId;
use crate::quest::{self, QuestConfig, QuestError, QuestState, Response, TrialObservation};
use crate::rng::{self, SimRng, SESSION_STREAM};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("no trial can be issued during phase {phase}")]
    WrongPhase { phase: Phase, rest_remaining_s: Option<f64> },
    #[error("trial {trial_index} is still awaiting a response")]
    TrialInFlight { trial_index: u64 },
    #[error("no trial is awaiting a response")]
    NoTrialInFlight,
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("session is incomplete ({done} of {planned} trials)")]
    IncompleteSession { done: usize, planned: usize },
    #[error(transparent)]
    Quest(#[from] QuestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub participant_id: String,
    /// Block order. When absent it is shuffled from `seed`.
    pub curves: Option<Vec<CurveId>>,
    pub trials_per_curve: u32,
    pub practice_trials: u32,
    pub standard_duration_s: f64,
    pub fixation_s: f64,
    /// Blank interval between the two bars of a trial.
    pub isi_s: f64,
    pub rest_s: f64,
    /// Blocks shorter than this are not followed by a rest.
    pub rest_min_block_trials: u32,
    /// Variable-bar durations for practice; defaults to {4, 5, 6} s with any
    /// value equal to the standard replaced.
    pub practice_durations_s: Option<Vec<f64>>,
    pub quest: QuestConfig,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            participant_id: "anonymous".into(),
            curves: None,
            trials_per_curve: 40,
            practice_trials: 3,
            standard_duration_s: 5.0,
            fixation_s: 2.0,
            isi_s: 0.5,
            rest_s: 60.0,
            rest_min_block_trials: 2,
            practice_durations_s: None,
            quest: QuestConfig::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidConfig(m));
        if self.trials_per_curve < 1 {
            return bad("trials_per_curve must be >= 1".into());
        }
        for (name, v) in [
            ("standard_duration_s", self.standard_duration_s),
            ("fixation_s", self.fixation_s),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        for (name, v) in [("isi_s", self.isi_s), ("rest_s", self.rest_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be >= 0, got {v}"));
            }
        }
        if let Some(curves) = &self.curves {
            let mut sorted = curves.clone();
            sorted.sort();
            let mut expected = CurveId::NON_CONSTANT.to_vec();
            expected.sort();
            if sorted != expected {
                return bad(format!(
                    "curves must be a permutation of the four non-constant curves, got {curves:?}"
                ));
            }
        }
        if let Some(d) = &self.practice_durations_s {
            if d.is_empty() {
                return bad("practice_durations_s must not be empty".into());
            }
            if d.iter().any(|&x| !(x.is_finite() && x > 0.0) || x == self.standard_duration_s) {
                return bad("practice durations must be > 0 and differ from the standard".into());
            }
        }
        QuestState::new(self.quest).map_err(|e| ProtocolError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    pub fn practice_durations(&self) -> Vec<f64> {
        if let Some(d) = &self.practice_durations_s {
            return d.clone();
        }
        let mut set: Vec<f64> = [4.0, 5.0, 6.0]
            .into_iter()
            .filter(|&d| d != self.standard_duration_s)
            .collect();
        if set.len() < 3 {
            let top = set.iter().copied().fold(f64::MIN, f64::max);
            set.push(top + 0.5);
        }
        set
    }

    pub fn main_trial_count(&self) -> usize {
        CurveId::NON_CONSTANT.len() * self.trials_per_curve as usize
    }

    pub fn planned_trial_count(&self) -> usize {
        self.practice_trials as usize + self.main_trial_count()
    }

    fn rests_between_blocks(&self) -> bool {
        self.trials_per_curve >= self.rest_min_block_trials
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase", content = "block")]
pub enum Phase {
    Practice,
    Block(usize),
    /// Rest following block `k`.
    Rest(usize),
    Done,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Practice => write!(f, "practice"),
            Phase::Block(k) => write!(f, "block {k}"),
            Phase::Rest(k) => write!(f, "rest after block {k}"),
            Phase::Done => write!(f, "done"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialPhase {
    Practice,
    Main,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub trial_index: u64,
    pub phase: TrialPhase,
    pub curve: CurveId,
    pub standard_duration_s: f64,
    pub variable_duration_s: f64,
    pub standard_first: bool,
    pub fixation_s: f64,
    pub isi_s: f64,
}

impl TrialPlan {
    pub fn first_duration_s(&self) -> f64 {
        if self.standard_first {
            self.standard_duration_s
        } else {
            self.variable_duration_s
        }
    }

    pub fn second_duration_s(&self) -> f64 {
        if self.standard_first {
            self.variable_duration_s
        } else {
            self.standard_duration_s
        }
    }
}

/// Which interval the participant judged shorter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalResponse {
    FirstShorter,
    SecondShorter,
}

impl IntervalResponse {
    /// Maps the interval judgement onto the variable bar.
    pub fn derive(self, standard_first: bool) -> Response {
        let variable_judged_shorter = match self {
            IntervalResponse::FirstShorter => !standard_first,
            IntervalResponse::SecondShorter => standard_first,
        };
        if variable_judged_shorter {
            Response::VariableShorter
        } else {
            Response::VariableLonger
        }
    }

    /// Interval answer that expresses `response` given the presentation order.
    pub fn expressing(response: Response, standard_first: bool) -> Self {
        match (response, standard_first) {
            (Response::VariableShorter, true) | (Response::VariableLonger, false) => IntervalResponse::SecondShorter,
            (Response::VariableShorter, false) | (Response::VariableLonger, true) => IntervalResponse::FirstShorter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feedback {
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    #[serde(flatten)]
    pub plan: TrialPlan,
    pub response: IntervalResponse,
    pub derived_response: Response,
    pub response_latency_ms: f64,
    pub timestamp_ms: u64,
    pub posterior_mean_after: Option<f64>,
    pub posterior_sd_after: Option<f64>,
    pub feedback_correct: Option<bool>,
}

impl TrialRecord {
    pub fn observation(&self) -> TrialObservation {
        TrialObservation {
            intensity: self.plan.variable_duration_s,
            response: self.derived_response,
        }
    }
}

/// What the participant should see next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NextStep {
    Trial(TrialPlan),
    Rest { block: usize, remaining_s: f64 },
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    pub curve: CurveId,
    pub pse: f64,
    pub posterior_sd: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResults {
    pub complete: bool,
    pub per_curve: Vec<CurveResult>,
    pub log: Vec<TrialRecord>,
}

impl SessionResults {
    pub fn pse(&self, curve: CurveId) -> Option<f64> {
        self.per_curve.iter().find(|r| r.curve == curve).map(|r| r.pse)
    }
}

#[derive(Debug, Clone)]
pub struct SessionState {
    config: SessionConfig,
    block_order: Vec<CurveId>,
    phase: Phase,
    quests: BTreeMap<CurveId, QuestState>,
    log: Vec<TrialRecord>,
    in_flight: Option<TrialPlan>,
    rng: SimRng,
    practice_done: u32,
    block_done: u32,
    rest_until_ms: u64,
    next_index: u64,
}

pub fn create_session(config: SessionConfig) -> Result<SessionState, ProtocolError> {
    SessionState::new(config)
}

impl SessionState {
    pub fn new(mut config: SessionConfig) -> Result<Self, ProtocolError> {
        config.validate()?;
        let mut rng = rng::substream(config.seed, &[SESSION_STREAM]);
        let block_order = match &config.curves {
            Some(c) => c.clone(),
            None => {
                let mut c = CurveId::NON_CONSTANT.to_vec();
                c.shuffle(&mut rng);
                c
            }
        };
        config.curves = Some(block_order.clone());
        let quests = block_order
            .iter()
            .map(|&c| Ok((c, quest::create_quest(config.quest)?)))
            .collect::<Result<BTreeMap<_, _>, QuestError>>()?;
        let phase = if config.practice_trials == 0 {
            Phase::Block(0)
        } else {
            Phase::Practice
        };
        Ok(Self {
            config,
            block_order,
            phase,
            quests,
            log: Vec::new(),
            in_flight: None,
            rng,
            practice_done: 0,
            block_done: 0,
            rest_until_ms: 0,
            next_index: 0,
        })
    }

    /// Config with the block order resolved.
    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn block_order(&self) -> &[CurveId] {
        &self.block_order
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn log(&self) -> &[TrialRecord] {
        &self.log
    }

    pub fn quest(&self, curve: CurveId) -> Option<&QuestState> {
        self.quests.get(&curve)
    }

    pub fn in_flight(&self) -> Option<&TrialPlan> {
        self.in_flight.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    /// Seconds of rest still owed at `now_ms`, if resting.
    pub fn rest_remaining_s(&self, now_ms: u64) -> Option<f64> {
        match self.phase {
            Phase::Rest(_) => Some(self.rest_until_ms.saturating_sub(now_ms) as f64 / 1000.0),
            _ => None,
        }
    }

    /// Ends a rest early.
    pub fn end_rest(&mut self) -> Result<(), ProtocolError> {
        match self.phase {
            Phase::Rest(k) => {
                self.phase = Phase::Block(k + 1);
                Ok(())
            }
            phase => Err(ProtocolError::WrongPhase {
                phase,
                rest_remaining_s: None,
            }),
        }
    }

    fn expire_rest(&mut self, now_ms: u64) {
        if let Phase::Rest(k) = self.phase {
            if now_ms >= self.rest_until_ms {
                self.phase = Phase::Block(k + 1);
            }
        }
    }

    /// Like [`SessionState::next_trial`] but reports rest and completion as
    /// steps instead of errors.
    pub fn poll(&mut self, now_ms: u64) -> Result<NextStep, ProtocolError> {
        match self.next_trial(now_ms) {
            Ok(plan) => Ok(NextStep::Trial(plan)),
            Err(ProtocolError::WrongPhase {
                phase: Phase::Rest(block),
                rest_remaining_s,
            }) => Ok(NextStep::Rest {
                block,
                remaining_s: rest_remaining_s.unwrap_or(0.0),
            }),
            Err(ProtocolError::WrongPhase { phase: Phase::Done, .. }) => Ok(NextStep::Done),
            Err(e) => Err(e),
        }
    }

    pub fn next_trial(&mut self, now_ms: u64) -> Result<TrialPlan, ProtocolError> {
        if let Some(plan) = &self.in_flight {
            return Err(ProtocolError::TrialInFlight {
                trial_index: plan.trial_index,
            });
        }
        self.expire_rest(now_ms);
        let (phase, curve, variable) = match self.phase {
            Phase::Practice => {
                let curve = self.block_order[self.rng.random_range(0..self.block_order.len())];
                let durations = self.config.practice_durations();
                let d = durations[self.rng.random_range(0..durations.len())];
                (TrialPhase::Practice, curve, d)
            }
            Phase::Block(k) => {
                let curve = self.block_order[k];
                (TrialPhase::Main, curve, self.quests[&curve].next_intensity())
            }
            phase @ (Phase::Rest(_) | Phase::Done) => {
                return Err(ProtocolError::WrongPhase {
                    phase,
                    rest_remaining_s: self.rest_remaining_s(now_ms),
                })
            }
        };
        let plan = TrialPlan {
            trial_index: self.next_index,
            phase,
            curve,
            standard_duration_s: self.config.standard_duration_s,
            variable_duration_s: variable,
            standard_first: self.rng.random_bool(0.5),
            fixation_s: self.config.fixation_s,
            isi_s: self.config.isi_s,
        };
        self.in_flight = Some(plan.clone());
        Ok(plan)
    }

    pub fn submit_response(
        &mut self,
        response: IntervalResponse,
        latency_ms: f64,
        now_ms: u64,
    ) -> Result<Option<Feedback>, ProtocolError> {
        let Some(plan) = self.in_flight.clone() else {
            return Err(ProtocolError::NoTrialInFlight);
        };
        if !(latency_ms.is_finite() && latency_ms >= 0.0) {
            return Err(ProtocolError::InvalidResponse(format!("latency must be >= 0 ms, got {latency_ms}")));
        }
        let derived = response.derive(plan.standard_first);
        let mut record = TrialRecord {
            plan: plan.clone(),
            response,
            derived_response: derived,
            response_latency_ms: latency_ms,
            timestamp_ms: now_ms,
            posterior_mean_after: None,
            posterior_sd_after: None,
            feedback_correct: None,
        };
        let feedback = match plan.phase {
            TrialPhase::Practice => {
                let (chosen, other) = match response {
                    IntervalResponse::FirstShorter => (plan.first_duration_s(), plan.second_duration_s()),
                    IntervalResponse::SecondShorter => (plan.second_duration_s(), plan.first_duration_s()),
                };
                let correct = chosen < other;
                record.feedback_correct = Some(correct);
                self.practice_done += 1;
                if self.practice_done >= self.config.practice_trials {
                    self.phase = Phase::Block(0);
                }
                Some(Feedback { correct })
            }
            TrialPhase::Main => {
                let quest = self.quests.get_mut(&plan.curve).expect("block curve has a staircase");
                quest.record(record.observation())?;
                record.posterior_mean_after = Some(quest.estimate_pse());
                record.posterior_sd_after = Some(quest.posterior_sd());
                self.block_done += 1;
                if self.block_done >= self.config.trials_per_curve {
                    self.block_done = 0;
                    let Phase::Block(k) = self.phase else {
                        unreachable!("main trials are only issued inside a block")
                    };
                    self.phase = if k + 1 == self.block_order.len() {
                        Phase::Done
                    } else if self.config.rests_between_blocks() {
                        self.rest_until_ms = now_ms.saturating_add((self.config.rest_s * 1000.0).round() as u64);
                        Phase::Rest(k)
                    } else {
                        Phase::Block(k + 1)
                    };
                }
                None
            }
        };
        self.log.push(record);
        self.next_index += 1;
        self.in_flight = None;
        Ok(feedback)
    }

    pub fn session_results(&self, allow_partial: bool) -> Result<SessionResults, ProtocolError> {
        let complete = self.is_done();
        if !complete && !allow_partial {
            return Err(ProtocolError::IncompleteSession {
                done: self.log.len(),
                planned: self.config.planned_trial_count(),
            });
        }
        let per_curve = CurveId::NON_CONSTANT
            .iter()
            .filter_map(|c| self.quests.get(c).map(|q| (c, q)))
            .map(|(&curve, q)| CurveResult {
                curve,
                pse: q.estimate_pse(),
                posterior_sd: q.posterior_sd(),
                trials: q.trial_count(),
            })
            .collect();
        Ok(SessionResults {
            complete,
            per_curve,
            log: self.log.clone(),
        })
    }
}
