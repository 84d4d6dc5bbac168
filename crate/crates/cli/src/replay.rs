//! `replay`: recompute every logged posterior and PSE from raw responses.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use pselab_core::protocol::persist::{self, ReplayReport};

use crate::run::{load_params, usage, CliResult, RunManifest};

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// A session directory, or a directory of sessions.
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pselab-out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplayParams {
    pub input: Option<PathBuf>,
}

pub fn run(args: ReplayArgs) -> CliResult<ExitCode> {
    let mut params: ReplayParams = load_params(args.config.as_deref(), "replay")?;
    if args.input.is_some() {
        params.input = args.input.clone();
    }
    let input = params
        .input
        .clone()
        .ok_or_else(|| usage("no session directory given (positional INPUT or `input` in --config)"))?;
    let mut manifest = RunManifest::start("replay", &params, None, &args.out);

    let reports = replay_all(&input)?;
    let mut dirty = 0;
    for r in &reports {
        if r.is_clean() {
            println!("{}: clean (max PSE diff {:.3e})", r.session_id, r.max_abs_pse_diff);
        } else {
            dirty += 1;
            println!("{}: {} diff(s)", r.session_id, r.diffs.len());
            for d in &r.diffs {
                println!(
                    "  trial {} {} {}: logged {} replayed {}",
                    d.trial_index.map_or("-".to_string(), |t| t.to_string()),
                    d.curve.map_or("-", |c| c.as_str()),
                    d.field,
                    d.logged,
                    d.replayed
                );
            }
        }
    }
    let mut json = serde_json::to_string_pretty(&reports).expect("reports serialize");
    json.push('\n');
    manifest.write_artifact("replay.json", json.as_bytes())?;
    manifest.finish()?;
    if dirty > 0 {
        eprintln!("{dirty} of {} session(s) disagree with their logs", reports.len());
        Ok(ExitCode::FAILURE)
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

fn replay_all(input: &Path) -> anyhow::Result<Vec<ReplayReport>> {
    let dirs = if input.join(persist::MANIFEST_FILE).is_file() {
        vec![input.to_path_buf()]
    } else {
        let nested = input.join("sessions");
        let root = if nested.is_dir() { nested } else { input.to_path_buf() };
        persist::list_sessions(&root).with_context(|| format!("listing {}", root.display()))?
    };
    if dirs.is_empty() {
        anyhow::bail!("no sessions found under {}", input.display());
    }
    dirs.iter()
        .map(|d| {
            let session = persist::load_session(d).with_context(|| format!("loading {}", d.display()))?;
            persist::replay(&session).with_context(|| format!("replaying {}", d.display()))
        })
        .collect()
}
