//! On-disk session layout and replay.
//!
//! ```text
//! <session_dir>/manifest.json   SessionManifest, written once at creation
//! <session_dir>/trials.jsonl    one TrialRecord per line, appended per response
//! <session_dir>/results.json    SessionResults minus the log, written at Done
//! ```
//!
//! Field names are fixed by `schema/session.schema.json` at the repo root.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CurveResult, IntervalResponse, SessionConfig, SessionState, TrialPhase, TrialRecord};
use crate::curves::CurveId;
use crate::quest::{QuestError, QuestState};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TRIALS_FILE: &str = "trials.jsonl";
pub const RESULTS_FILE: &str = "results.json";

/// Largest PSE or posterior-sd discrepancy replay tolerates.
pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed json in {path} line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("session directory {0} has no manifest")]
    MissingManifest(PathBuf),
    #[error(transparent)]
    Quest(#[from] QuestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub session_id: String,
    pub created_ms: u64,
    pub software_version: String,
    /// Resolved config; `curves` holds the block order actually used.
    pub config: SessionConfig,
}

impl SessionManifest {
    pub fn new(session_id: impl Into<String>, created_ms: u64, state: &SessionState) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            session_id: session_id.into(),
            created_ms,
            software_version: crate::VERSION.to_string(),
            config: state.config().clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResults {
    pub session_id: String,
    pub complete: bool,
    pub per_curve: Vec<CurveResult>,
}

/// Append-only writer for one session directory.
#[derive(Debug, Clone)]
pub struct SessionWriter {
    dir: PathBuf,
}

impl SessionWriter {
    pub fn create(dir: impl Into<PathBuf>, manifest: &SessionManifest) -> Result<Self, PersistError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(MANIFEST_FILE);
        write_json(&path, manifest)?;
        let trials = dir.join(TRIALS_FILE);
        File::create(&trials).map_err(io_err(&trials))?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append(&self, record: &TrialRecord) -> Result<(), PersistError> {
        let path = self.dir.join(TRIALS_FILE);
        let mut line = serde_json::to_string(record).expect("records always serialize");
        line.push('\n');
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        f.write_all(line.as_bytes()).map_err(io_err(&path))?;
        f.flush().map_err(io_err(&path))
    }

    /// Forces the trial log to stable storage.
    pub fn sync(&self) -> Result<(), PersistError> {
        let path = self.dir.join(TRIALS_FILE);
        File::open(&path).and_then(|f| f.sync_all()).map_err(io_err(&path))
    }

    pub fn write_results(&self, results: &StoredResults) -> Result<(), PersistError> {
        write_json(&self.dir.join(RESULTS_FILE), results)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let mut text = serde_json::to_string_pretty(value).expect("value always serializes");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes a finished (or partial) session in one go.
pub fn save_session(dir: &Path, session_id: &str, created_ms: u64, state: &SessionState) -> Result<(), PersistError> {
    let writer = SessionWriter::create(dir, &SessionManifest::new(session_id, created_ms, state))?;
    for r in state.log() {
        writer.append(r)?;
    }
    if state.is_done() {
        let res = state.session_results(false).expect("done sessions have results");
        writer.write_results(&StoredResults {
            session_id: session_id.to_string(),
            complete: true,
            per_curve: res.per_curve,
        })?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedSession {
    pub dir: PathBuf,
    pub manifest: SessionManifest,
    pub records: Vec<TrialRecord>,
    pub results: Option<StoredResults>,
}

impl LoadedSession {
    pub fn is_complete(&self) -> bool {
        let cfg = &self.manifest.config;
        self.records.iter().filter(|r| r.plan.phase == TrialPhase::Main).count() == cfg.main_trial_count()
    }

    pub fn participant_id(&self) -> &str {
        &self.manifest.config.participant_id
    }

    /// Per-curve PSEs recomputed from the log.
    pub fn rebuild(&self) -> Result<Vec<CurveResult>, PersistError> {
        let mut out = Vec::new();
        for curve in CurveId::NON_CONSTANT {
            let obs: Vec<_> = self.main_records(curve).map(TrialRecord::observation).collect();
            let q = crate::quest::rebuild_checked(self.manifest.config.quest, &obs)?;
            out.push(CurveResult {
                curve,
                pse: q.estimate_pse(),
                posterior_sd: q.posterior_sd(),
                trials: obs.len(),
            });
        }
        Ok(out)
    }

    fn main_records(&self, curve: CurveId) -> impl Iterator<Item = &TrialRecord> {
        self.records
            .iter()
            .filter(move |r| r.plan.phase == TrialPhase::Main && r.plan.curve == curve)
    }
}

pub fn load_session(dir: &Path) -> Result<LoadedSession, PersistError> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(PersistError::MissingManifest(dir.to_path_buf()));
    }
    let manifest = read_json(&manifest_path)?;
    let trials = dir.join(TRIALS_FILE);
    let mut records = Vec::new();
    if trials.exists() {
        let f = File::open(&trials).map_err(io_err(&trials))?;
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&trials))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line).map_err(|source| PersistError::Json {
                path: trials.clone(),
                line: i + 1,
                source,
            })?);
        }
    }
    let results_path = dir.join(RESULTS_FILE);
    let results = if results_path.exists() {
        Some(read_json(&results_path)?)
    } else {
        None
    };
    Ok(LoadedSession {
        dir: dir.to_path_buf(),
        manifest,
        records,
        results,
    })
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        line: 0,
        source,
    })
}

/// Session directories (those holding a manifest) directly under `root`,
/// sorted by name.
pub fn list_sessions(root: &Path) -> Result<Vec<PathBuf>, PersistError> {
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let path = entry.map_err(io_err(root))?.path();
        if path.join(MANIFEST_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    Ok(dirs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDiff {
    /// Trial index, or `None` for session-level fields.
    pub trial_index: Option<u64>,
    pub curve: Option<CurveId>,
    pub field: String,
    pub logged: String,
    pub replayed: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub session_id: String,
    pub complete: bool,
    pub rebuilt: Vec<CurveResult>,
    pub max_abs_pse_diff: f64,
    pub diffs: Vec<ReplayDiff>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

/// Recomputes every logged posterior from the raw responses and reports any
/// field that disagrees by more than [`REPLAY_TOLERANCE`].
pub fn replay(session: &LoadedSession) -> Result<ReplayReport, PersistError> {
    let mut diffs = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for r in &session.records {
        if !seen.insert(r.plan.trial_index) {
            diffs.push(ReplayDiff {
                trial_index: Some(r.plan.trial_index),
                curve: Some(r.plan.curve),
                field: "trial_index".into(),
                logged: "duplicate".into(),
                replayed: "unique".into(),
            });
        }
        let derived = r.response.derive(r.plan.standard_first);
        if derived != r.derived_response {
            diffs.push(ReplayDiff {
                trial_index: Some(r.plan.trial_index),
                curve: Some(r.plan.curve),
                field: "derived_response".into(),
                logged: format!("{:?}", r.derived_response),
                replayed: format!("{derived:?}"),
            });
        }
        if r.plan.phase == TrialPhase::Practice {
            let (chosen, other) = match r.response {
                IntervalResponse::FirstShorter => (r.plan.first_duration_s(), r.plan.second_duration_s()),
                IntervalResponse::SecondShorter => (r.plan.second_duration_s(), r.plan.first_duration_s()),
            };
            let correct = Some(chosen < other);
            if r.feedback_correct != correct {
                diffs.push(ReplayDiff {
                    trial_index: Some(r.plan.trial_index),
                    curve: Some(r.plan.curve),
                    field: "feedback_correct".into(),
                    logged: format!("{:?}", r.feedback_correct),
                    replayed: format!("{correct:?}"),
                });
            }
        }
    }

    let cfg = session.manifest.config.quest;
    let mut rebuilt = Vec::new();
    let mut max_abs_pse_diff: f64 = 0.0;
    for curve in CurveId::NON_CONSTANT {
        let mut q = QuestState::new(cfg)?;
        let mut last_logged = None;
        for r in session.main_records(curve) {
            // the staircase replays the derived response, so a tampered raw
            // response shows up both above and in the posterior below
            let obs = crate::quest::TrialObservation {
                intensity: r.plan.variable_duration_s,
                response: r.response.derive(r.plan.standard_first),
            };
            let expected_next = q.next_intensity();
            if (expected_next - r.plan.variable_duration_s).abs() > REPLAY_TOLERANCE {
                diffs.push(numeric_diff(r, "variable_duration_s", r.plan.variable_duration_s, expected_next));
            }
            q.check_intensity(obs.intensity)?;
            q.record(obs)?;
            for (field, logged, replayed) in [
                ("posterior_mean_after", r.posterior_mean_after, q.estimate_pse()),
                ("posterior_sd_after", r.posterior_sd_after, q.posterior_sd()),
            ] {
                match logged {
                    Some(v) if (v - replayed).abs() <= REPLAY_TOLERANCE => {}
                    Some(v) => diffs.push(numeric_diff(r, field, v, replayed)),
                    None => diffs.push(ReplayDiff {
                        trial_index: Some(r.plan.trial_index),
                        curve: Some(curve),
                        field: field.into(),
                        logged: "missing".into(),
                        replayed: replayed.to_string(),
                    }),
                }
            }
            last_logged = r.posterior_mean_after;
        }
        let result = CurveResult {
            curve,
            pse: q.estimate_pse(),
            posterior_sd: q.posterior_sd(),
            trials: q.trial_count(),
        };
        if let Some(v) = last_logged {
            max_abs_pse_diff = max_abs_pse_diff.max((v - result.pse).abs());
        }
        if let Some(stored) = session.results.as_ref().and_then(|s| s.per_curve.iter().find(|c| c.curve == curve)) {
            let d = (stored.pse - result.pse).abs();
            max_abs_pse_diff = max_abs_pse_diff.max(d);
            if d > REPLAY_TOLERANCE {
                diffs.push(ReplayDiff {
                    trial_index: None,
                    curve: Some(curve),
                    field: "results.pse".into(),
                    logged: stored.pse.to_string(),
                    replayed: result.pse.to_string(),
                });
            }
        }
        rebuilt.push(result);
    }
    Ok(ReplayReport {
        session_id: session.manifest.session_id.clone(),
        complete: session.is_complete(),
        rebuilt,
        max_abs_pse_diff,
        diffs,
    })
}

fn numeric_diff(r: &TrialRecord, field: &str, logged: f64, replayed: f64) -> ReplayDiff {
    ReplayDiff {
        trial_index: Some(r.plan.trial_index),
        curve: Some(r.plan.curve),
        field: field.into(),
        logged: logged.to_string(),
        replayed: replayed.to_string(),
    }
}
