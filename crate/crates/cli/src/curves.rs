//! `curves`: samples of progress fraction and velocity for plotting.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Args;
use serde::{Deserialize, Serialize};

use pselab_core::CurveSpec;

use crate::run::{load_params, usage, CliResult, RunManifest};

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "pselab-out")]
    out: PathBuf,
    /// Samples per curve over normalized time [0, 1], endpoints included.
    #[arg(long)]
    samples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurvesParams {
    pub samples: usize,
    pub specs: Vec<CurveSpec>,
}

impl Default for CurvesParams {
    fn default() -> Self {
        Self {
            samples: 501,
            specs: CurveSpec::defaults().to_vec(),
        }
    }
}

pub fn run(args: CurvesArgs) -> CliResult<ExitCode> {
    let mut params: CurvesParams = load_params(args.config.as_deref(), "curves")?;
    if let Some(n) = args.samples {
        params.samples = n;
    }
    if params.samples < 2 {
        return Err(usage(format!("samples must be at least 2, got {}", params.samples)));
    }
    for spec in &params.specs {
        spec.validate().map_err(|e| usage(e.to_string()))?;
    }
    let mut manifest = RunManifest::start("curves", &params, None, &args.out);
    let csv = render(&params).context("sampling curves")?;
    manifest.write_artifact("curves.csv", &csv)?;
    let path = manifest.finish()?;
    println!("wrote {} rows; manifest {}", params.specs.len() * params.samples, path.display());
    Ok(ExitCode::SUCCESS)
}

fn render(params: &CurvesParams) -> anyhow::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["curve", "u", "fraction", "velocity"])?;
    let last = (params.samples - 1) as f64;
    for spec in &params.specs {
        for i in 0..params.samples {
            let u = i as f64 / last;
            w.write_record([
                spec.id.as_str().to_string(),
                u.to_string(),
                spec.progress_fraction(u)?.to_string(),
                spec.velocity(u)?.to_string(),
            ])?;
        }
    }
    Ok(w.into_inner()?)
}
