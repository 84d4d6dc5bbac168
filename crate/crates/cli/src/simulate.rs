//! `simulate`: cohort simulation to CSV, optionally with full session logs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use pselab_core::observer::{self, CohortConfig, CohortGenerator};
use pselab_core::protocol::persist;
use pselab_core::{quest, QuestConfig};

use crate::run::{load_params, usage, CliResult, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GeneratorKind {
    /// Reference group means and SDs.
    Reference,
    /// One shared Gaussian for every curve.
    Null,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// JSON parameter file or run manifest; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "pselab-out")]
    out: PathBuf,
    /// Number of simulated participants.
    #[arg(long)]
    cohort: Option<usize>,
    /// Main trials per curve.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    generator: Option<GeneratorKind>,
    /// Mean of the null generator (s); implies `--generator null`.
    #[arg(long)]
    null_mean: Option<f64>,
    /// SD of the null generator (s); implies `--generator null`.
    #[arg(long)]
    null_sd: Option<f64>,
    /// Observer lapse rate.
    #[arg(long)]
    lapse: Option<f64>,
    /// Observer psychometric slope.
    #[arg(long)]
    beta_obs: Option<f64>,
    /// Also run every participant through the full protocol and write the
    /// session logs under `<out>/sessions/`.
    #[arg(long)]
    sessions: bool,
}

const DEFAULT_NULL_MEAN: f64 = 5.0;
const DEFAULT_NULL_SD: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub cohort: usize,
    pub trials: usize,
    pub seed: u64,
    pub generator: CohortGenerator,
    pub lapse: f64,
    pub beta_obs: f64,
    pub sessions: bool,
    pub quest: QuestConfig,
}

impl Default for SimulateParams {
    fn default() -> Self {
        let quest = QuestConfig::default();
        Self {
            cohort: 20,
            trials: 40,
            seed: 0,
            generator: CohortGenerator::reference(),
            lapse: 0.0,
            beta_obs: quest.params.beta,
            sessions: false,
            quest,
        }
    }
}

impl SimulateParams {
    fn resolve(args: &SimulateArgs) -> CliResult<Self> {
        let mut p: Self = load_params(args.config.as_deref(), "simulate")?;
        if let Some(n) = args.cohort {
            p.cohort = n;
        }
        if let Some(n) = args.trials {
            p.trials = n;
        }
        if let Some(s) = args.seed {
            p.seed = s;
        }
        let null_flags = args.null_mean.is_some() || args.null_sd.is_some();
        match (args.generator, null_flags) {
            (Some(GeneratorKind::Reference), true) => {
                return Err(usage("--null-mean/--null-sd require --generator null"));
            }
            (Some(GeneratorKind::Reference), false) => p.generator = CohortGenerator::reference(),
            (Some(GeneratorKind::Null), _) | (None, true) => {
                p.generator = CohortGenerator::null(
                    args.null_mean.unwrap_or(DEFAULT_NULL_MEAN),
                    args.null_sd.unwrap_or(DEFAULT_NULL_SD),
                );
            }
            (None, false) => {}
        }
        if let Some(l) = args.lapse {
            p.lapse = l;
        }
        if let Some(b) = args.beta_obs {
            p.beta_obs = b;
        }
        p.sessions |= args.sessions;
        p.validate()?;
        Ok(p)
    }

    fn validate(&self) -> CliResult<()> {
        if self.cohort < 2 {
            return Err(usage(format!("cohort must be at least 2, got {}", self.cohort)));
        }
        if self.trials == 0 {
            return Err(usage("trials must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.lapse) {
            return Err(usage(format!("lapse must be in [0, 1), got {}", self.lapse)));
        }
        if !(self.beta_obs.is_finite() && self.beta_obs > 0.0) {
            return Err(usage(format!("beta-obs must be positive, got {}", self.beta_obs)));
        }
        self.generator.validate().map_err(|e| usage(e.to_string()))?;
        quest::create_quest(self.quest).map_err(|e| usage(format!("quest: {e}")))?;
        Ok(())
    }

    pub fn cohort_config(&self) -> CohortConfig {
        let mut observer_params = self.quest.params;
        observer_params.beta = self.beta_obs;
        CohortConfig {
            n_observers: self.cohort,
            n_trials: self.trials,
            generator: self.generator.clone(),
            quest: self.quest,
            observer_params,
            lapse: self.lapse,
            seed: self.seed,
        }
    }
}

pub fn run(args: SimulateArgs) -> CliResult<ExitCode> {
    let params = SimulateParams::resolve(&args)?;
    let mut manifest = RunManifest::start("simulate", &params, Some(params.seed), &args.out);
    let config = params.cohort_config();
    let cohort = observer::run_cohort(&config).context("simulating cohort")?;
    manifest.write_artifact("pse.csv", cohort.table.to_csv().as_bytes())?;
    manifest.write_artifact("truth.csv", cohort.truth.to_csv().as_bytes())?;
    if params.sessions {
        write_sessions(&config, &cohort, &args.out, &mut manifest)?;
    }
    let path = manifest.finish()?;
    println!(
        "simulated {} participants x {} trials per curve; wrote {}",
        params.cohort,
        params.trials,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn write_sessions(
    config: &CohortConfig,
    cohort: &observer::Cohort,
    out: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<()> {
    for (i, (obs, order)) in cohort.observers.iter().zip(&cohort.block_orders).enumerate() {
        let session_config = observer::cohort_session_config(config, i, order);
        let id = session_config.participant_id.clone();
        let state = observer::run_protocol_session(obs, session_config, 0)
            .with_context(|| format!("running protocol session {id}"))?;
        let rel = Path::new("sessions").join(&id);
        persist::save_session(&out.join(&rel), &id, 0, &state).with_context(|| format!("saving session {id}"))?;
        manifest.record_artifact(rel);
    }
    Ok(())
}
