//! Experiment runners and the `sysid` command-line interface.
//!
//! Every run reads one JSON [`ExperimentConfig`], writes CSVs and
//! checkpoints into an output directory and finishes with a
//! `manifest.json` holding the config echo, the seed and content hashes of
//! all outputs.

pub mod config;
pub mod error;
pub mod output;
pub mod runners;

use std::path::Path;
use std::time::Instant;

use sysid_core::autodiff::Real;

pub use config::{Experiment, ExperimentConfig, Precision};
pub use error::CliError;
pub use output::RunDir;

/// Outcome of a complete run.
#[derive(Clone, Debug)]
pub struct RunSummary {
    pub content_hash: String,
    /// One human-readable line per headline number.
    pub lines: Vec<String>,
}

fn dispatch<T: Real>(cfg: &ExperimentConfig, dir: &mut RunDir) -> Result<Vec<String>, CliError> {
    let lines = match &cfg.experiment {
        Experiment::Pretrain(s) => {
            let rec = runners::run_pretrain::<T>(cfg, s, dir)?;
            vec![format!("best validation loss {:.4} at iteration {}", rec.best_val, rec.best_iter)]
        }
        Experiment::Metagen(s) => runners::run_metagen::<T>(cfg, s, dir)?
            .iter()
            .map(|(a, _)| format!("{}: train-class {:.4}, test-class {:.4}", a.name, a.final_train_class_loss, a.final_test_class_loss))
            .collect(),
        Experiment::AdaptMc(s) => {
            let r = runners::run_adapt_mc::<T>(cfg, s, dir)?;
            vec![format!("median test RMSE {:.4} before, {:.4} after adaptation", r.median_pre_rmse(), r.median_post_rmse())]
        }
        Experiment::Short2long(s) => {
            let r = runners::run_short2long::<T>(cfg, s, dir)?;
            let w = (s.long_train.max_iters / 10).max(1);
            vec![format!(
                "long arms, mean loss over the last {w} iterations: scratch {:.4}, warm start {:.4}",
                r.long_scratch.tail_mean(w),
                r.long_warm.tail_mean(w)
            )]
        }
        Experiment::Eval(s) => {
            let r = runners::run_eval::<T>(cfg, s, dir)?;
            vec![format!("loss {:.4} (zero predictor {:.4})", r.loss, r.zero_predictor_loss)]
        }
    };
    Ok(lines)
}

/// Runs `cfg` into `out`, writing the manifest last.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<RunSummary, CliError> {
    cfg.validate()?;
    let start = Instant::now();
    let mut dir = RunDir::create(out)?;
    dir.write("config.json", &(cfg.to_json() + "\n"))?;
    let lines = match cfg.precision {
        Precision::F32 => dispatch::<f32>(cfg, &mut dir)?,
        Precision::F64 => dispatch::<f64>(cfg, &mut dir)?,
    };
    let content_hash = dir.finish(cfg, start.elapsed().as_secs_f64())?;
    Ok(RunSummary { content_hash, lines })
}
