//! `analyze`: statistics over a directory of completed session logs.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::Args;
use serde::{Deserialize, Serialize};

use pselab_core::protocol::persist::{self, LoadedSession};
use pselab_core::stats::ebr::{ebr_table, parse_blink_csv};
use pselab_core::stats::{analyze, AnalysisOptions, Correction, SpearmanPooling};
use pselab_core::{CurveId, CurveTable};

use crate::run::{load_params, usage, CliError, CliResult, RunManifest};

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory of session logs: either the sessions themselves or a
    /// directory with a `sessions/` subdirectory.
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pselab-out")]
    out: PathBuf,
    /// Blink counts CSV (participant_id,curve,blink_count,phase_duration_s).
    #[arg(long)]
    blinks: Option<PathBuf>,
    /// Multiple-comparison correction: none, holm or bonferroni.
    #[arg(long)]
    correction: Option<Correction>,
    /// Spearman pooling: pooled or participant-mean.
    #[arg(long, value_parser = parse_pooling)]
    pooling: Option<SpearmanPooling>,
}

fn parse_pooling(s: &str) -> Result<SpearmanPooling, String> {
    match s.to_ascii_lowercase().replace('_', "-").as_str() {
        "pooled" => Ok(SpearmanPooling::Pooled),
        "participant-mean" => Ok(SpearmanPooling::ParticipantMean),
        other => Err(format!("unknown pooling {other:?} (expected pooled or participant-mean)")),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeParams {
    pub input: Option<PathBuf>,
    pub blinks: Option<PathBuf>,
    pub options: AnalysisOptions,
}

pub fn run(args: AnalyzeArgs) -> CliResult<ExitCode> {
    let mut params: AnalyzeParams = load_params(args.config.as_deref(), "analyze")?;
    if args.input.is_some() {
        params.input = args.input.clone();
    }
    if args.blinks.is_some() {
        params.blinks = args.blinks.clone();
    }
    if let Some(c) = args.correction {
        params.options.correction = c;
    }
    if let Some(p) = args.pooling {
        params.options.pooling = p;
    }
    let input = params
        .input
        .clone()
        .ok_or_else(|| usage("no session directory given (positional INPUT or `input` in --config)"))?;

    let mut manifest = RunManifest::start("analyze", &params, None, &args.out);
    let pse = pse_table(&input)?;
    let ebr = match &params.blinks {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let records = parse_blink_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
            Some(ebr_table(&records, &pse).with_context(|| format!("matching {} to sessions", path.display()))?)
        }
    };
    let report = analyze(&pse, ebr.as_ref(), params.options).context("analyzing PSE table")?;
    let text = report.render_text();

    manifest.write_artifact("pse.csv", pse.to_csv().as_bytes())?;
    let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
    json.push('\n');
    manifest.write_artifact("report.json", json.as_bytes())?;
    manifest.write_artifact("report.txt", text.as_bytes())?;
    manifest.finish()?;
    print!("{text}");
    Ok(ExitCode::SUCCESS)
}

fn session_root(input: &Path) -> PathBuf {
    let nested = input.join("sessions");
    if !input.join(persist::MANIFEST_FILE).exists() && nested.is_dir() {
        nested
    } else {
        input.to_path_buf()
    }
}

/// One row per complete session, columns in report order.
fn pse_table(input: &Path) -> CliResult<CurveTable> {
    let root = session_root(input);
    let dirs = if root.join(persist::MANIFEST_FILE).is_file() {
        vec![root.clone()]
    } else {
        persist::list_sessions(&root).with_context(|| format!("listing {}", root.display()))?
    };
    let sessions = dirs
        .iter()
        .map(|d| persist::load_session(d).with_context(|| format!("loading {}", d.display())))
        .collect::<anyhow::Result<Vec<LoadedSession>>>()?;

    let incomplete: Vec<String> = sessions
        .iter()
        .filter(|s| !s.is_complete())
        .map(|s| s.manifest.session_id.clone())
        .collect();
    if !incomplete.is_empty() {
        return Err(CliError::Runtime(anyhow!("incomplete sessions: {}", incomplete.join(", "))));
    }
    if sessions.len() < 2 {
        return Err(CliError::Runtime(anyhow!(
            "need at least 2 complete sessions under {}, found {}",
            root.display(),
            sessions.len()
        )));
    }

    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &sessions {
        *counts.entry(s.participant_id()).or_default() += 1;
    }
    let curves = CurveId::REPORT_ORDER.to_vec();
    let mut participants = Vec::new();
    let mut values = Vec::new();
    for s in &sessions {
        let pid = s.participant_id();
        participants.push(if counts[pid] > 1 {
            let dir_name = s.dir.file_name().map_or_else(|| s.manifest.session_id.clone(), |n| n.to_string_lossy().into_owned());
            format!("{pid}/{dir_name}")
        } else {
            pid.to_string()
        });
        let rebuilt = s.rebuild().with_context(|| format!("rebuilding {}", s.dir.display()))?;
        values.push(
            curves
                .iter()
                .map(|c| rebuilt.iter().find(|r| r.curve == *c).map(|r| r.pse).expect("rebuild covers every curve"))
                .collect(),
        );
    }
    Ok(CurveTable::pse(participants, curves, values).context("building PSE table")?)
}
