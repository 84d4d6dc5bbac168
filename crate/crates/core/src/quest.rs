//! Grid-based QUEST posterior over the point of subjective equality.
//!
//! The threshold parameter `T` is a candidate PSE in linear seconds. Each
//! trial shows the variable (constant-speed) bar for `x` seconds and scores the
//! observer's answer with a shifted Weibull:
//!
//! ```text
//! Ψ(x; T) = δγ + (1 − δ)(1 − (1 − γ)·exp(−10^(β(x − T + ε))))
//! ```
//!
//! where `ε` is chosen so that `Ψ(T; T) = p_threshold`. The posterior is kept
//! as accumulated log-likelihood on a fixed grid; trials are placed at the
//! posterior mean (QuestMean) unless a different [`Placement`] is configured.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default presentation quantum: one frame at 120 Hz.
pub const FRAME_QUANTUM_S: f64 = 1.0 / 120.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuestError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid psychometric parameters: {0}")]
    InvalidParams(String),
    #[error("invalid prior: {0}")]
    InvalidPrior(String),
    #[error("no calibration offset exists: q = {q} is outside (0, 1)")]
    NoSolution { q: f64 },
    #[error("posterior mass vanished after scoring intensity {intensity}")]
    DegeneratePosterior { intensity: f64 },
    #[error("intensity {intensity} is outside the grid [{t_min}, {t_max}]")]
    IntensityOutOfGrid { intensity: f64, t_min: f64, t_max: f64 },
    #[error("intensity is not finite")]
    NonFiniteIntensity,
}

/// Shifted-Weibull psychometric parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsychometricParams {
    /// Slope per second of duration difference.
    pub beta: f64,
    /// Lower asymptote.
    pub gamma: f64,
    /// Lapse rate.
    pub delta: f64,
    /// Response probability that defines the PSE.
    pub p_threshold: f64,
}

impl Default for PsychometricParams {
    fn default() -> Self {
        Self {
            beta: 3.5,
            gamma: 0.01,
            delta: 0.01,
            p_threshold: 0.5,
        }
    }
}

impl PsychometricParams {
    pub fn validate(&self) -> Result<(), QuestError> {
        let Self {
            beta,
            gamma,
            delta,
            p_threshold,
        } = *self;
        if !(beta.is_finite() && beta > 0.0) {
            return Err(QuestError::InvalidParams(format!("beta must be > 0, got {beta}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(QuestError::InvalidParams(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if !(0.0..0.5).contains(&delta) {
            return Err(QuestError::InvalidParams(format!("delta must lie in [0, 0.5), got {delta}")));
        }
        if !(p_threshold > gamma && p_threshold < self.upper_asymptote()) {
            return Err(QuestError::InvalidParams(format!(
                "p_threshold {p_threshold} must lie strictly between {gamma} and {}",
                self.upper_asymptote()
            )));
        }
        Ok(())
    }

    pub fn upper_asymptote(&self) -> f64 {
        1.0 - self.delta * (1.0 - self.gamma)
    }
}

/// Offset `ε` that makes `Ψ(T; T) = p_threshold`.
///
/// Only the asymptote consistency is checked here; callers constructing a
/// state go through [`PsychometricParams::validate`] first.
pub fn calibration_offset(params: &PsychometricParams) -> Result<f64, QuestError> {
    let PsychometricParams {
        beta,
        gamma,
        delta,
        p_threshold,
    } = *params;
    // (1 − δ − p + δγ) written against the asymptote so p = asymptote gives q = 0 exactly
    let q = (params.upper_asymptote() - p_threshold) / ((1.0 - delta) * (1.0 - gamma));
    if !(q > 0.0 && q < 1.0) {
        return Err(QuestError::NoSolution { q });
    }
    Ok((-q.ln()).log10() / beta)
}

/// Probability that the variable bar is judged longer.
pub fn psi(params: &PsychometricParams, x: f64, threshold: f64, epsilon: f64) -> f64 {
    let PsychometricParams { beta, gamma, delta, .. } = *params;
    let w = 10f64.powf(beta * (x - threshold + epsilon));
    // 1 − exp(−w), accurate for small w
    let hit = -(-w).exp_m1();
    delta * gamma + (1.0 - delta) * (gamma + (1.0 - gamma) * hit)
}

/// `ln Ψ` and `ln(1 − Ψ)` evaluated without forming `1 − Ψ` by subtraction.
fn log_psi_pair(params: &PsychometricParams, x: f64, threshold: f64, epsilon: f64) -> (f64, f64) {
    let PsychometricParams { beta, gamma, delta, .. } = *params;
    let w = 10f64.powf(beta * (x - threshold + epsilon));
    let miss = (-w).exp();
    let hit = -(-w).exp_m1();
    let p = delta * gamma + (1.0 - delta) * (gamma + (1.0 - gamma) * hit);
    // 1 − Ψ = (1 − γ)(δ + (1 − δ)·exp(−w))
    let q = (1.0 - gamma) * (delta + (1.0 - delta) * miss);
    (p.ln(), q.ln())
}

/// Everything a log-likelihood row depends on, as bit patterns.
#[derive(PartialEq, Eq, Hash)]
struct RowKey {
    params: [u64; 4],
    epsilon: u64,
    t_min: u64,
    grain: u64,
    len: usize,
    intensity: u64,
    response: Response,
}

/// Upper bound on memoized rows (~16 KiB each at the default grid).
const ROW_CACHE_LIMIT: usize = 4096;

type RowCache = Mutex<HashMap<RowKey, Arc<[f64]>>>;

fn row_cache() -> &'static RowCache {
    static CACHE: OnceLock<RowCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// `ln P(response | x, T_i)` for every grid point. Rows are pure functions of
/// their key; intensities are frame-quantized, so they repeat across sessions
/// and are memoized process-wide.
fn log_likelihood_row(
    params: &PsychometricParams,
    epsilon: f64,
    t_min: f64,
    grain: f64,
    len: usize,
    obs: TrialObservation,
) -> Arc<[f64]> {
    let key = RowKey {
        params: [
            params.beta.to_bits(),
            params.gamma.to_bits(),
            params.delta.to_bits(),
            params.p_threshold.to_bits(),
        ],
        epsilon: epsilon.to_bits(),
        t_min: t_min.to_bits(),
        grain: grain.to_bits(),
        len,
        intensity: obs.intensity.to_bits(),
        response: obs.response,
    };
    if let Some(row) = row_cache().lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Arc::clone(row);
    }
    let row: Arc<[f64]> = (0..len)
        .map(|i| {
            let (longer, shorter) = log_psi_pair(params, obs.intensity, t_min + i as f64 * grain, epsilon);
            match obs.response {
                Response::VariableLonger => longer,
                Response::VariableShorter => shorter,
            }
        })
        .collect();
    let mut cache = row_cache().lock().unwrap_or_else(|e| e.into_inner());
    if cache.len() >= ROW_CACHE_LIMIT {
        cache.clear();
    }
    cache.insert(key, Arc::clone(&row));
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    VariableLonger,
    VariableShorter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialObservation {
    pub intensity: f64,
    pub response: Response,
}

/// Rule used to propose the next intensity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "rule", content = "value")]
pub enum Placement {
    #[default]
    Mean,
    Mode,
    Quantile(f64),
}

/// Everything needed to build a fresh posterior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuestConfig {
    pub prior_mean: f64,
    pub prior_sd: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub grain: f64,
    pub params: PsychometricParams,
    pub placement: Placement,
    /// Proposed intensities are rounded to multiples of this (seconds).
    pub quantum: f64,
}

impl Default for QuestConfig {
    fn default() -> Self {
        Self {
            prior_mean: 5.0,
            prior_sd: 1.5,
            t_min: 1.0,
            t_max: 11.0,
            grain: 0.005,
            params: PsychometricParams::default(),
            placement: Placement::Mean,
            quantum: FRAME_QUANTUM_S,
        }
    }
}

impl QuestConfig {
    /// Defaults with the grid narrowed to [1, 9] so it is symmetric about the
    /// prior mean; the fresh posterior mean is then exactly 5 s.
    pub fn symmetric_default() -> Self {
        Self {
            t_max: 9.0,
            ..Self::default()
        }
    }
}

/// Discretized posterior density over candidate PSEs `T_i = t_min + i·grain`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorGrid {
    pub t_min: f64,
    pub t_max: f64,
    pub grain: f64,
    pub density: Vec<f64>,
}

impl PosteriorGrid {
    fn point_count(t_min: f64, t_max: f64, grain: f64) -> Result<usize, QuestError> {
        if !(grain.is_finite() && grain > 0.0) {
            return Err(QuestError::InvalidGrid(format!("grain must be > 0, got {grain}")));
        }
        if !(t_min.is_finite() && t_max.is_finite() && t_min < t_max) {
            return Err(QuestError::InvalidGrid(format!("need t_min < t_max, got [{t_min}, {t_max}]")));
        }
        // small tolerance so that e.g. 10.0/0.005 does not lose the last point
        let steps = ((t_max - t_min) / grain + 1e-9).floor();
        if steps > 1e7 {
            return Err(QuestError::InvalidGrid(format!("{steps} grid points is too many")));
        }
        Ok(steps as usize + 1)
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn point(&self, i: usize) -> f64 {
        self.t_min + i as f64 * self.grain
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }

    pub fn mean(&self) -> f64 {
        self.points().zip(&self.density).map(|(t, p)| t * p).sum()
    }

    pub fn sd(&self) -> f64 {
        let mean = self.mean();
        let second: f64 = self.points().zip(&self.density).map(|(t, p)| t * t * p).sum();
        (second - mean * mean).max(0.0).sqrt()
    }

    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
        self.point(i)
    }

    /// Smallest grid point whose cumulative mass reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        let mut acc = 0.0;
        for (i, p) in self.density.iter().enumerate() {
            acc += p;
            if acc >= q {
                return self.point(i);
            }
        }
        self.point(self.len() - 1)
    }
}

/// Posterior state of one QUEST staircase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestState {
    config: QuestConfig,
    grid: PosteriorGrid,
    history: Vec<TrialObservation>,
    epsilon: f64,
    /// Unnormalized log posterior, shifted so its maximum is 0.
    log_posterior: Vec<f64>,
}

/// Builds a fresh state with a Gaussian prior over the grid.
pub fn create_quest(config: QuestConfig) -> Result<QuestState, QuestError> {
    QuestState::new(config)
}

/// Folds `trials` over a fresh state built from `config`.
pub fn rebuild(config: QuestConfig, trials: &[TrialObservation]) -> Result<QuestState, QuestError> {
    let mut state = QuestState::new(config)?;
    for obs in trials {
        state.record(*obs)?;
    }
    Ok(state)
}

impl QuestState {
    pub fn new(config: QuestConfig) -> Result<Self, QuestError> {
        let n = PosteriorGrid::point_count(config.t_min, config.t_max, config.grain)?;
        config.params.validate()?;
        let epsilon = calibration_offset(&config.params)?;
        if !(config.prior_sd.is_finite() && config.prior_sd > 0.0) {
            return Err(QuestError::InvalidPrior(format!("prior sd must be > 0, got {}", config.prior_sd)));
        }
        if !(config.prior_mean > config.t_min && config.prior_mean < config.t_max) {
            return Err(QuestError::InvalidPrior(format!(
                "prior mean {} must lie inside ({}, {})",
                config.prior_mean, config.t_min, config.t_max
            )));
        }
        if !(config.quantum.is_finite() && config.quantum > 0.0) {
            return Err(QuestError::InvalidGrid(format!("quantum must be > 0, got {}", config.quantum)));
        }
        if let Placement::Quantile(q) = config.placement {
            if !(q > 0.0 && q < 1.0) {
                return Err(QuestError::InvalidParams(format!("placement quantile must lie in (0, 1), got {q}")));
            }
        }

        let grid = PosteriorGrid {
            t_min: config.t_min,
            t_max: config.t_max,
            grain: config.grain,
            density: Vec::with_capacity(n),
        };
        let two_var = 2.0 * config.prior_sd * config.prior_sd;
        let log_posterior: Vec<f64> = (0..n)
            .map(|i| {
                let d = grid.point(i) - config.prior_mean;
                -d * d / two_var
            })
            .collect();
        let mut state = Self {
            config,
            grid,
            history: Vec::new(),
            epsilon,
            log_posterior,
        };
        state.absorb(None, f64::NAN)?;
        Ok(state)
    }

    pub fn config(&self) -> &QuestConfig {
        &self.config
    }

    pub fn params(&self) -> &PsychometricParams {
        &self.config.params
    }

    pub fn grid(&self) -> &PosteriorGrid {
        &self.grid
    }

    pub fn history(&self) -> &[TrialObservation] {
        &self.history
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn trial_count(&self) -> usize {
        self.history.len()
    }

    /// Returns the posterior after scoring `obs`, leaving `self` untouched.
    pub fn update(&self, obs: TrialObservation) -> Result<Self, QuestError> {
        let mut next = self.clone();
        next.record(obs)?;
        Ok(next)
    }

    /// In-place form of [`QuestState::update`]. On error the state is unchanged.
    pub fn record(&mut self, obs: TrialObservation) -> Result<(), QuestError> {
        let x = obs.intensity;
        if !x.is_finite() {
            return Err(QuestError::NonFiniteIntensity);
        }
        let row = log_likelihood_row(
            &self.config.params,
            self.epsilon,
            self.grid.t_min,
            self.grid.grain,
            self.log_posterior.len(),
            obs,
        );
        self.absorb(Some(&row), x)?;
        self.history.push(obs);
        Ok(())
    }

    /// Adds `row` (if any) to the log posterior, shifts its maximum to 0 and
    /// refreshes the normalized density. Nothing is modified on error.
    fn absorb(&mut self, row: Option<&[f64]>, intensity: f64) -> Result<(), QuestError> {
        let term = |i: usize, lp: f64| lp + row.map_or(0.0, |r| r[i]);
        let max = self
            .log_posterior
            .iter()
            .enumerate()
            .map(|(i, &lp)| term(i, lp))
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(QuestError::DegeneratePosterior { intensity });
        }
        let shifted: Vec<f64> = self
            .log_posterior
            .iter()
            .enumerate()
            .map(|(i, &lp)| term(i, lp) - max)
            .collect();
        let weights: Vec<f64> = shifted.iter().map(|lp| lp.exp()).collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(QuestError::DegeneratePosterior { intensity });
        }
        self.log_posterior = shifted;
        self.grid.density = weights.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    /// Posterior mean (QuestMean).
    pub fn estimate_pse(&self) -> f64 {
        self.grid.mean()
    }

    pub fn posterior_sd(&self) -> f64 {
        self.grid.sd()
    }

    /// Intensity for the next trial: the placement statistic clamped to the
    /// grid and rounded to the presentation quantum.
    pub fn next_intensity(&self) -> f64 {
        let raw = match self.config.placement {
            Placement::Mean => self.grid.mean(),
            Placement::Mode => self.grid.mode(),
            Placement::Quantile(q) => self.grid.quantile(q),
        };
        let (lo, hi) = (self.grid.t_min, self.grid.t_max);
        quantize_within(raw.clamp(lo, hi), self.config.quantum, lo, hi)
    }

    pub fn check_intensity(&self, intensity: f64) -> Result<(), QuestError> {
        if !intensity.is_finite() {
            return Err(QuestError::NonFiniteIntensity);
        }
        let slack = 1e-9 * self.grid.grain;
        if intensity < self.grid.t_min - slack || intensity > self.grid.t_max + slack {
            return Err(QuestError::IntensityOutOfGrid {
                intensity,
                t_min: self.grid.t_min,
                t_max: self.grid.t_max,
            });
        }
        Ok(())
    }
}

/// Nearest multiple of `quantum` to `value`, stepping inward if rounding
/// leaves `[lo, hi]`.
pub fn quantize_within(value: f64, quantum: f64, lo: f64, hi: f64) -> f64 {
    let k = (value / quantum).round();
    let mut q = k * quantum;
    if q > hi {
        q = (hi / quantum).floor() * quantum;
    } else if q < lo {
        q = (lo / quantum).ceil() * quantum;
    }
    q
}

/// Validates that every trial is on-grid, then rebuilds.
pub fn rebuild_checked(config: QuestConfig, trials: &[TrialObservation]) -> Result<QuestState, QuestError> {
    let mut state = QuestState::new(config)?;
    for obs in trials {
        state.check_intensity(obs.intensity)?;
        state.record(*obs)?;
    }
    Ok(state)
}
