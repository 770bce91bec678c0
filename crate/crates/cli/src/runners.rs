//! One runner per experiment. Each writes its CSVs and checkpoints through a
//! [`RunDir`] and returns the in-memory records.

use rand::RngCore;
use serde::Serialize;
use serde_json::json;
use sysid_core::autodiff::Real;
use sysid_core::checkpoint::load_checkpoint;
use sysid_core::datapipe::make_split_dataset;
use sysid_core::eval::{abs_error_quantiles, band_csv, eval_on_stream, evaluate_sequences, quantile_sorted, zero_predictor_on_stream, QuantileBand, StreamEval};
use sysid_core::model::{TransformerConfig, TransformerParams};
use sysid_core::sysgen::{sample_from_class, ClassSpec};
use sysid_core::train::{adapt, loss_on_sequences, meta_train, meta_train_monitored, rng_stream, validation_pool, StopReason, TrainConfig, TrainRecord};

use crate::config::{AdaptMcSpec, EvalSpec, ExperimentConfig, MetagenSpec, PretrainSpec, Short2LongSpec};
use crate::error::CliError;
use crate::output::{csv, RunDir};

const STREAM_RUN_SEEDS: u64 = 10;
const STREAM_SYSTEM: u64 = 11;

fn fmt(x: f64) -> String {
    x.to_string()
}

fn train_cfg(base: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..base.clone() }
}

fn stop_label(s: &StopReason) -> String {
    match s {
        StopReason::Completed => "completed".into(),
        StopReason::EarlyStopped { iter } => format!("early_stopped@{iter}"),
        StopReason::NonFinite { iter } => format!("non_finite@{iter}"),
    }
}

fn record_meta<T: Real>(cfg: &ExperimentConfig, train: &TrainConfig, class: &ClassSpec, rec: &TrainRecord<T>) -> serde_json::Value {
    json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "train": train,
        "class": class,
        "best_iter": rec.best_iter,
        "best_val": rec.best_val,
        "stop": rec.stop,
    })
}

/// Widens positional capacities of `params` so `train` fits.
fn fit_capacity<T: Real>(params: TransformerParams<T>, train: &TrainConfig) -> Result<TransformerParams<T>, CliError> {
    let c = params.config();
    let (enc, dec) = (c.n_ctx_enc.max(train.ctx_len), c.n_ctx_dec.max(train.query_len()));
    if (enc, dec) == (c.n_ctx_enc, c.n_ctx_dec) {
        return Ok(params);
    }
    Ok(params.with_capacity(enc, dec)?)
}

fn load<T: Real>(path: &std::path::Path) -> Result<TransformerParams<T>, CliError> {
    Ok(load_checkpoint::<T>(path)?.0)
}

fn check_finished<T>(what: &str, rec: &TrainRecord<T>) -> Result<(), CliError> {
    match rec.stop {
        StopReason::NonFinite { iter } => Err(CliError::Runtime(format!("{what}: non-finite loss or gradient at iteration {iter}"))),
        _ => Ok(()),
    }
}

/// Meta-training on one class; writes `loss.csv`, `best.ckpt`, `final.ckpt`.
pub fn run_pretrain<T: Real>(cfg: &ExperimentConfig, spec: &PretrainSpec, dir: &mut RunDir) -> Result<TrainRecord<T>, CliError> {
    let train = train_cfg(&cfg.train, cfg.seed);
    let init = spec.init_checkpoint.as_deref().map(load::<T>).transpose()?;
    let rec = meta_train(&train, &spec.class, &cfg.model, init.as_ref())?;
    dir.write("loss.csv", &rec.loss_csv())?;
    let meta = record_meta(cfg, &train, &spec.class, &rec);
    dir.checkpoint("best.ckpt", &rec.best, meta.clone())?;
    dir.checkpoint("final.ckpt", &rec.last, meta)?;
    check_finished("pretrain", &rec)?;
    Ok(rec)
}

/// `iter,loss_train_class,loss_test_class` at every evaluation point.
pub fn stream_eval_csv<T>(rec: &TrainRecord<T>) -> String {
    let rows = rec.val_loss.iter().zip(&rec.monitor_loss).map(|(&(i, tr), &(_, te))| vec![i.to_string(), fmt(tr), fmt(te)]);
    csv(&["iter", "loss_train_class", "loss_test_class"], rows)
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmSummary {
    pub name: String,
    pub final_train_class_loss: f64,
    pub final_test_class_loss: f64,
}

/// Trains one model per arm with a shared seed, monitoring a fixed pool of
/// test-class systems.
pub fn run_metagen<T: Real>(
    cfg: &ExperimentConfig,
    spec: &MetagenSpec,
    dir: &mut RunDir,
) -> Result<Vec<(ArmSummary, TrainRecord<T>)>, CliError> {
    let train = train_cfg(&cfg.train, cfg.seed);
    let test_pool = validation_pool(&spec.test_class, spec.test_systems, train.seq_len, spec.test_seed)?;
    let mut out = Vec::new();
    for arm in &spec.arms {
        let rec = meta_train_monitored::<T>(&train, &arm.class, &cfg.model, None, Some(&test_pool))?;
        dir.write(&format!("{}/loss.csv", arm.name), &rec.loss_csv())?;
        dir.write(&format!("{}/stream_eval.csv", arm.name), &stream_eval_csv(&rec))?;
        dir.checkpoint(&format!("{}/final.ckpt", arm.name), &rec.last, record_meta(cfg, &train, &arm.class, &rec))?;
        check_finished(&arm.name, &rec)?;
        let last = |v: &[(usize, f64)]| v.last().map_or(f64::NAN, |p| p.1);
        let summary = ArmSummary {
            name: arm.name.clone(),
            final_train_class_loss: last(&rec.val_loss),
            final_test_class_loss: last(&rec.monitor_loss),
        };
        out.push((summary, rec));
    }
    let rows = out.iter().map(|(s, _)| {
        vec![s.name.clone(), fmt(s.final_train_class_loss), fmt(s.final_test_class_loss), fmt(s.final_test_class_loss - s.final_train_class_loss)]
    });
    dir.write("summary.csv", &csv(&["arm", "final_train_class_loss", "final_test_class_loss", "gap"], rows))?;
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct McRun {
    pub run: usize,
    pub seed: u64,
    pub system: u64,
    pub pre_rmse: f64,
    pub post_rmse: f64,
    pub best_iter: usize,
    pub best_val: f64,
    /// Validation loss of the returned snapshot, recomputed from scratch.
    pub best_val_recomputed: f64,
    pub stop: StopReason,
}

#[derive(Clone, Debug)]
pub struct AdaptMcReport {
    pub runs: Vec<McRun>,
    pub pre_band: QuantileBand,
    pub post_band: QuantileBand,
}

impl AdaptMcReport {
    pub fn median_pre_rmse(&self) -> f64 {
        median(self.runs.iter().map(|r| r.pre_rmse))
    }

    pub fn median_post_rmse(&self) -> f64 {
        median(self.runs.iter().map(|r| r.post_rmse))
    }
}

fn median(xs: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

/// Seed of Monte Carlo run `r`, independent of how many runs there are.
pub fn run_seed(seed: u64, r: usize) -> u64 {
    rng_stream(seed, STREAM_RUN_SEEDS + r as u64).next_u64()
}

/// Monte Carlo adaptation: per run, one system from the target class, a
/// train/val/test split of its sequences, adaptation of the checkpoint and
/// pre/post evaluation on the test partition.
pub fn run_adapt_mc<T: Real>(cfg: &ExperimentConfig, spec: &AdaptMcSpec, dir: &mut RunDir) -> Result<AdaptMcReport, CliError> {
    let base = fit_capacity(load::<T>(&spec.checkpoint)?, &cfg.train)?;
    let m = cfg.train.ctx_len;
    let [n_train, n_val, n_test] = spec.split;
    let (mut runs, mut pre_err, mut post_err) = (Vec::new(), Vec::new(), Vec::new());
    for r in 0..spec.runs {
        let seed = run_seed(cfg.seed, r);
        let mut rng = rng_stream(seed, STREAM_SYSTEM);
        let system = sample_from_class(&spec.target, &mut rng).map_err(sysid_core::Error::from)?;
        let data = make_split_dataset(&system, n_train + n_val + n_test, cfg.train.seq_len, (n_train, n_val, n_test), &mut rng)?;
        let train = train_cfg(&cfg.train, seed);
        let rec = adapt(&base, &data, &train)?;
        check_finished(&format!("run {r}"), &rec)?;
        let pre = evaluate_sequences(&base, &data.test, m)?;
        let post = evaluate_sequences(&rec.best, &data.test, m)?;
        let chunk = train.batch_size.max(16);
        let run = McRun {
            run: r,
            seed,
            system: system.fingerprint(),
            pre_rmse: pre.mean_rmse(),
            post_rmse: post.mean_rmse(),
            best_iter: rec.best_iter,
            best_val: rec.best_val,
            best_val_recomputed: loss_on_sequences(&rec.best, &data.val, m, chunk)?,
            stop: rec.stop.clone(),
        };
        dir.write(&format!("runs/run_{r:03}/loss.csv"), &rec.loss_csv())?;
        pre_err.extend(pre.errors);
        post_err.extend(post.errors);
        runs.push(run);
    }
    let [q_lo, q_hi] = spec.quantiles;
    let pre_band = abs_error_quantiles(&pre_err, q_lo, q_hi)?;
    let post_band = abs_error_quantiles(&post_err, q_lo, q_hi)?;
    dir.write("band.csv", &band_csv(&pre_band, &post_band))?;
    let rows = runs.iter().map(|r| {
        vec![
            r.run.to_string(),
            r.seed.to_string(),
            format!("{:016x}", r.system),
            fmt(r.pre_rmse),
            fmt(r.post_rmse),
            r.best_iter.to_string(),
            fmt(r.best_val),
            stop_label(&r.stop),
        ]
    });
    dir.write("runs.csv", &csv(&["run", "seed", "system", "pre_rmse", "post_rmse", "best_iter", "best_val", "stop"], rows))?;
    let report = AdaptMcReport { runs, pre_band, post_band };
    dir.write_json(
        "summary.json",
        &json!({
            "runs": report.runs.len(),
            "median_pre_rmse": report.median_pre_rmse(),
            "median_post_rmse": report.median_post_rmse(),
            "band_median_mid_pre": report.pre_band.median_mid(),
            "band_median_mid_post": report.post_band.median_mid(),
        }),
    )?;
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct Short2LongReport<T> {
    /// `None` when the short weights came from a checkpoint.
    pub short: Option<TrainRecord<T>>,
    pub long_scratch: TrainRecord<T>,
    pub long_warm: TrainRecord<T>,
}

/// Short-horizon arm, then long-horizon arms from scratch and warm-started
/// from the short arm's best weights, with shared seeds.
pub fn run_short2long<T: Real>(
    cfg: &ExperimentConfig,
    spec: &Short2LongSpec,
    dir: &mut RunDir,
) -> Result<Short2LongReport<T>, CliError> {
    let short_train = train_cfg(&cfg.train, cfg.seed);
    let (short, short_params) = match &spec.short_checkpoint {
        Some(p) => (None, load::<T>(p)?),
        None => {
            let rec = meta_train::<T>(&short_train, &spec.class, &cfg.model, None)?;
            dir.write("short/loss.csv", &rec.loss_csv())?;
            dir.checkpoint("short/best.ckpt", &rec.best, record_meta(cfg, &short_train, &spec.class, &rec))?;
            check_finished("short arm", &rec)?;
            let best = rec.best.clone();
            (Some(rec), best)
        }
    };
    let long_train = train_cfg(&spec.long_train, cfg.seed);
    let long_model: TransformerConfig = short_params.config().with_capacity(
        short_params.config().n_ctx_enc.max(long_train.ctx_len),
        short_params.config().n_ctx_dec.max(long_train.query_len()),
    );
    let mut arm = |name: &str, init: Option<&TransformerParams<T>>| -> Result<TrainRecord<T>, CliError> {
        let rec = meta_train(&long_train, &spec.class, &long_model, init)?;
        dir.write(&format!("{name}/loss.csv"), &rec.loss_csv())?;
        dir.checkpoint(&format!("{name}/final.ckpt"), &rec.last, record_meta(cfg, &long_train, &spec.class, &rec))?;
        check_finished(name, &rec)?;
        Ok(rec)
    };
    let long_scratch = arm("long_scratch", None)?;
    let long_warm = arm("long_warm", Some(&short_params))?;
    let window = (long_train.max_iters / 10).max(1);
    dir.write_json(
        "summary.json",
        &json!({
            "tail_window": window,
            "long_scratch_tail_mean": long_scratch.tail_mean(window),
            "long_warm_tail_mean": long_warm.tail_mean(window),
            "long_scratch_initial_val": long_scratch.val_loss.first().map(|v| v.1),
            "long_warm_initial_val": long_warm.val_loss.first().map(|v| v.1),
        }),
    )?;
    Ok(Short2LongReport { short, long_scratch, long_warm })
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub loss: f64,
    pub zero_predictor_loss: f64,
    pub n_batches: usize,
}

/// Loss of a checkpoint and of the zero predictor on the same seed-pinned
/// stream of fresh systems.
pub fn run_eval<T: Real>(cfg: &ExperimentConfig, spec: &EvalSpec, dir: &mut RunDir) -> Result<EvalReport, CliError> {
    let params = fit_capacity(load::<T>(&spec.checkpoint)?, &cfg.train)?;
    let stream = StreamEval {
        n_batches: spec.n_batches,
        batch_size: cfg.train.batch_size,
        seq_len: cfg.train.seq_len,
        ctx_len: cfg.train.ctx_len,
        seed: cfg.seed,
    };
    let report = EvalReport {
        loss: eval_on_stream(&params, &spec.class, &stream)?,
        zero_predictor_loss: zero_predictor_on_stream(&spec.class, &stream)?,
        n_batches: spec.n_batches,
    };
    dir.write_json("eval.json", &report)?;
    Ok(report)
}
