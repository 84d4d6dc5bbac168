//! Adaptive measurement of the point of subjective equality (PSE) between a
//! constant-speed progress bar and non-constant progress bars.
//!
//! * [`quest`]: grid posterior and Weibull likelihood (QuestMean placement).
//! * [`curves`]: the five progress functions and their velocity profiles.
//! * [`observer`]: simulated participants and cohorts.
//! * [`protocol`]: practice / block / rest state machine with JSON-lines logs.
//! * [`stats`]: RM-ANOVA, t-tests, Holm correction, EBR and Spearman.

pub mod curves;
pub mod observer;
pub mod protocol;
pub mod quest;
pub mod rng;
pub mod stats;

pub use curves::{CurveId, CurveSpec};
pub use quest::{PsychometricParams, QuestConfig, QuestState, Response, TrialObservation};
pub use stats::table::{CurveTable, PseTable};

/// Crate version recorded in manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
