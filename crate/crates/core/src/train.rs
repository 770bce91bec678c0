//! AdamW, learning-rate schedule, the meta-training loop and adaptation
//! with early stopping.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tensor};
use crate::datapipe::{make_batch_traced, sample_sequence, Sequence, SequenceBatch, SplitDataset};
use crate::error::{Error, Result, TensorError};
use crate::model::{Session, TransformerConfig, TransformerParams};
use crate::sysgen::ClassSpec;

/// Independent random stream `stream` of the generator seeded by `seed`.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_DATA: u64 = 2;
const STREAM_DROPOUT: u64 = 3;
const STREAM_VAL: u64 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// First/second moments and step count.
#[derive(Clone, Debug)]
pub struct OptimState<T> {
    pub hyper: AdamW,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> OptimState<T> {
    pub fn new(hyper: AdamW, params: &[Tensor<T>]) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { hyper, m: zeros(), v: zeros(), t: 0 }
    }
}

/// One decoupled-decay Adam update. `decays[i]` selects weight decay for
/// tensor `i`. Non-finite gradients abort without touching any state.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    decays: &[bool],
    state: &mut OptimState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != decays.len() || params.len() != state.m.len() {
        return Err(Error::Config(format!("adamw: {} params, {} grads, {} masks", params.len(), grads.len(), decays.len())));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(TensorError::Shape { op: "adamw", lhs: p.shape().to_vec(), rhs: g.shape().to_vec() }.into());
        }
        if !g.all_finite() {
            return Err(Error::Numeric(format!("non-finite gradient in parameter tensor {i}")));
        }
    }
    let h = state.hyper;
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let (c1, c2) = (T::of(1.0 - h.beta1), T::of(1.0 - h.beta2));
    let bc1 = T::of(1.0 / (1.0 - h.beta1.powi(t)));
    let bc2 = T::of(1.0 / (1.0 - h.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(h.eps));
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let wd = if decays[i] { T::of(h.weight_decay) } else { T::zero() };
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + c1 * gi;
            *vi = b2 * *vi + c2 * gi * gi;
            let (mh, vh) = (*mi * bc1, *vi * bc2);
            *x -= lr * (mh / (vh.sqrt() + eps) + wd * *x);
        }
    }
    Ok(())
}

/// Scales gradients in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.data()).map(|&x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt();
    if norm > max_norm && norm.is_finite() {
        let s = T::of(max_norm / norm);
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|x| *x *= s));
    }
    norm
}

/// Linear warmup then cosine decay to `min_lr_frac · base`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub total: usize,
    pub min_frac: f64,
}

impl LrSchedule {
    pub fn at(&self, iter: usize) -> f64 {
        if iter < self.warmup {
            return self.base * (iter + 1) as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1) as f64;
        let p = ((iter - self.warmup) as f64 / span).min(1.0);
        let floor = self.base * self.min_frac;
        floor + (self.base - floor) * 0.5 * (1.0 + (PI * p).cos())
    }
}

fn d_lr() -> f64 {
    3e-4
}
fn d_warmup() -> f64 {
    0.02
}
fn d_min_lr() -> f64 {
    0.1
}
fn d_eval_every() -> usize {
    100
}
fn d_patience() -> usize {
    20
}
fn d_clip() -> f64 {
    1.0
}
fn d_val_systems() -> usize {
    64
}
fn d_val_seed() -> u64 {
    0x5A11_DA7E
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Sequences per minibatch.
    pub batch_size: usize,
    /// Total sequence length `N`.
    pub seq_len: usize,
    /// Context length `m`; the query is the remaining `N − m` steps.
    pub ctx_len: usize,
    pub max_iters: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    /// Warmup length as a fraction of `max_iters`.
    #[serde(default = "d_warmup")]
    pub warmup_frac: f64,
    #[serde(default = "d_min_lr")]
    pub min_lr_frac: f64,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    /// Evaluations without improvement before stopping; `None` disables it.
    #[serde(default)]
    pub patience: Option<usize>,
    #[serde(default = "d_clip")]
    pub grad_clip: f64,
    #[serde(default)]
    pub adamw: AdamW,
    #[serde(default = "d_val_systems")]
    pub val_systems: usize,
    #[serde(default = "d_val_seed")]
    pub val_seed: u64,
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// Pretraining defaults for a given geometry.
    pub fn new(batch_size: usize, seq_len: usize, ctx_len: usize, max_iters: usize) -> Self {
        Self {
            batch_size,
            seq_len,
            ctx_len,
            max_iters,
            lr: d_lr(),
            warmup_frac: d_warmup(),
            min_lr_frac: d_min_lr(),
            eval_every: d_eval_every(),
            patience: None,
            grad_clip: d_clip(),
            adamw: AdamW::default(),
            val_systems: d_val_systems(),
            val_seed: d_val_seed(),
            seed: 0,
        }
    }

    /// Adaptation defaults: small learning rate and patience 20.
    pub fn adaptation(batch_size: usize, seq_len: usize, ctx_len: usize, max_iters: usize) -> Self {
        Self { lr: 1e-5, patience: Some(d_patience()), ..Self::new(batch_size, seq_len, ctx_len, max_iters) }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.ctx_len == 0 || self.ctx_len >= self.seq_len {
            return bad(format!("need 1 <= ctx_len < seq_len, got {} and {}", self.ctx_len, self.seq_len));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.patience == Some(0) {
            return bad("patience must be >= 1".into());
        }
        if !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.warmup_frac) || !(0.0..=1.0).contains(&self.min_lr_frac) {
            return bad("lr must be positive, warmup_frac and min_lr_frac in [0, 1]".into());
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive".into());
        }
        Ok(())
    }

    pub fn query_len(&self) -> usize {
        self.seq_len - self.ctx_len
    }

    pub fn schedule(&self) -> LrSchedule {
        let warmup = ((self.max_iters as f64 * self.warmup_frac).ceil() as usize).max(1);
        LrSchedule { base: self.lr, warmup, total: self.max_iters, min_frac: self.min_lr_frac }
    }

    fn check_model(&self, model: &TransformerConfig) -> Result<()> {
        if self.ctx_len > model.n_ctx_enc || self.query_len() > model.n_ctx_dec {
            return Err(Error::Config(format!(
                "context {} / query {} exceed model capacities {} / {}",
                self.ctx_len,
                self.query_len(),
                model.n_ctx_enc,
                model.n_ctx_dec
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped { iter: usize },
    NonFinite { iter: usize },
}

/// Everything recorded by a training run.
#[derive(Clone, Debug)]
pub struct TrainRecord<T> {
    /// Loss of the minibatch used at each update.
    pub train_loss: Vec<f64>,
    /// `(iter, loss)`: validation loss of the parameters before update `iter`
    /// (`iter == updates` for the final parameters).
    pub val_loss: Vec<(usize, f64)>,
    pub best_iter: usize,
    pub best_val: f64,
    pub wall_time_s: f64,
    pub stop: StopReason,
    pub best: TransformerParams<T>,
    pub last: TransformerParams<T>,
    /// Fingerprints of the systems behind each meta-training minibatch.
    pub batch_systems: Vec<Vec<u64>>,
    /// `(iter, loss)` on the monitor pool, recorded with each validation.
    pub monitor_loss: Vec<(usize, f64)>,
}

impl<T: Real> TrainRecord<T> {
    /// `iter,train_loss,val_loss` rows, LF-terminated; blank cells where a
    /// value was not recorded.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iter,train_loss,val_loss\n");
        let last_iter = self.val_loss.last().map_or(0, |v| v.0).max(self.train_loss.len());
        let mut val = self.val_loss.iter().peekable();
        for i in 0..=last_iter {
            let tl = self.train_loss.get(i).map(|v| v.to_string()).unwrap_or_default();
            let vl = match val.peek() {
                Some(&&(it, v)) if it == i => {
                    val.next();
                    v.to_string()
                }
                _ => String::new(),
            };
            if !tl.is_empty() || !vl.is_empty() {
                out.push_str(&format!("{i},{tl},{vl}\n"));
            }
        }
        out
    }

    /// Mean training loss over the last `k` recorded updates.
    pub fn tail_mean(&self, k: usize) -> f64 {
        let n = self.train_loss.len();
        let tail = &self.train_loss[n.saturating_sub(k)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Mean squared error between prediction and target over all elements.
pub fn mse_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Shape { op: "mse_loss", lhs: pred.shape().to_vec(), rhs: target.shape().to_vec() }.into());
    }
    let n = pred.len().max(1) as f64;
    Ok(pred.data().iter().zip(target.data()).map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2)).sum::<f64>() / n)
}

/// Predicted query outputs `[b, n, 1]` for a batch, no gradients.
pub fn predict<T: Real>(params: &TransformerParams<T>, batch: &SequenceBatch) -> Result<Tensor<T>> {
    crate::model::forward(params, &batch.u_ctx.cast(), &batch.y_ctx.cast(), &batch.u_query.cast())
}

/// Mean loss over `seqs`, evaluated in chunks of `chunk` sequences and
/// weighted by chunk size.
pub fn loss_on_sequences<T: Real>(params: &TransformerParams<T>, seqs: &[Sequence], m: usize, chunk: usize) -> Result<f64> {
    let mut total = 0.0;
    for part in seqs.chunks(chunk.max(1)) {
        let batch = SequenceBatch::from_sequences(&part.iter().collect::<Vec<_>>(), m)?;
        let pred = predict(params, &batch)?;
        total += mse_loss(&pred, &batch.y_query.cast())? * part.len() as f64;
    }
    Ok(total / seqs.len().max(1) as f64)
}

/// One forward/backward pass; returns the loss and the parameter gradients.
fn loss_and_grads<T: Real>(
    params: &TransformerParams<T>,
    batch: &SequenceBatch,
    dropout: &mut ChaCha8Rng,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut s = Session::new(params).with_dropout(ChaCha8Rng::from_rng(&mut *dropout).expect("chacha"));
    let u = s.input(batch.u_ctx.cast());
    let y = s.input(batch.y_ctx.cast());
    let q = s.input(batch.u_query.cast());
    let target = s.input(batch.y_query.cast());
    let out = s.forward(u, y, q)?;
    let loss = s.graph.mse(out, target)?;
    let value = s.graph.value(loss).item().as_f64();
    if !value.is_finite() {
        return Ok((value, Vec::new()));
    }
    s.graph.backward(loss)?;
    Ok((value, s.param_grads()))
}

struct Loop<'a, T> {
    cfg: &'a TrainConfig,
    params: TransformerParams<T>,
    state: OptimState<T>,
    decays: Vec<bool>,
    dropout: ChaCha8Rng,
    record_train: Vec<f64>,
    record_val: Vec<(usize, f64)>,
    record_monitor: Vec<(usize, f64)>,
    best: (usize, f64, TransformerParams<T>),
    since_best: usize,
}

enum Step {
    Continue,
    Stop(StopReason),
}

impl<'a, T: Real> Loop<'a, T> {
    fn new(cfg: &'a TrainConfig, params: TransformerParams<T>) -> Self {
        let decays = params.specs().iter().map(|s| s.decays()).collect();
        let state = OptimState::new(cfg.adamw, params.tensors());
        let best = (0, f64::INFINITY, params.clone());
        Self {
            cfg,
            state,
            decays,
            dropout: rng_stream(cfg.seed, STREAM_DROPOUT),
            record_train: Vec::new(),
            record_val: Vec::new(),
            record_monitor: Vec::new(),
            best,
            since_best: 0,
            params,
        }
    }

    fn evaluate(&mut self, iter: usize, (val, monitor): (f64, Option<f64>)) -> Step {
        self.record_val.push((iter, val));
        if let Some(l) = monitor {
            self.record_monitor.push((iter, l));
        }
        if val < self.best.1 {
            self.best = (iter, val, self.params.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if let Some(p) = self.cfg.patience {
                if self.since_best >= p {
                    return Step::Stop(StopReason::EarlyStopped { iter });
                }
            }
        }
        Step::Continue
    }

    fn update(&mut self, iter: usize, batch: &SequenceBatch) -> Result<Step> {
        let (loss, mut grads) = loss_and_grads(&self.params, batch, &mut self.dropout)?;
        if !loss.is_finite() {
            return Ok(Step::Stop(StopReason::NonFinite { iter }));
        }
        self.record_train.push(loss);
        clip_global_norm(&mut grads, self.cfg.grad_clip);
        let lr = self.cfg.schedule().at(iter);
        if adamw_step(self.params.tensors_mut(), &grads, &self.decays, &mut self.state, lr).is_err() {
            return Ok(Step::Stop(StopReason::NonFinite { iter }));
        }
        Ok(Step::Continue)
    }

    fn run(
        mut self,
        mut next_batch: impl FnMut() -> Result<(SequenceBatch, Option<Vec<u64>>)>,
        mut validate: impl FnMut(&TransformerParams<T>) -> Result<(f64, Option<f64>)>,
    ) -> Result<TrainRecord<T>> {
        let mut batch_systems = Vec::new();
        let start = Instant::now();
        let mut stop = StopReason::Completed;
        let max = self.cfg.max_iters;
        for iter in 0..max {
            if iter % self.cfg.eval_every == 0 {
                let v = validate(&self.params)?;
                if let Step::Stop(r) = self.evaluate(iter, v) {
                    stop = r;
                    break;
                }
            }
            let (batch, ids) = next_batch()?;
            batch_systems.extend(ids);
            if let Step::Stop(r) = self.update(iter, &batch)? {
                stop = r;
                break;
            }
        }
        if stop == StopReason::Completed {
            let v = validate(&self.params)?;
            self.evaluate(max, v);
        }
        let (best_iter, best_val, best) = self.best;
        Ok(TrainRecord {
            train_loss: self.record_train,
            val_loss: self.record_val,
            best_iter,
            best_val,
            wall_time_s: start.elapsed().as_secs_f64(),
            stop,
            best,
            last: self.params,
            batch_systems,
            monitor_loss: self.record_monitor,
        })
    }
}

/// Fixed validation pool: one sequence from each of `n` systems drawn with
/// a pinned seed.
pub fn validation_pool(spec: &ClassSpec, n: usize, seq_len: usize, seed: u64) -> Result<Vec<Sequence>> {
    let mut rng = rng_stream(seed, STREAM_VAL);
    (0..n).map(|_| sample_sequence(spec, seq_len, &mut rng)).collect()
}

/// Meta-training with a fresh batch of systems at every update.
///
/// `init` may have smaller or larger positional capacities than `model`;
/// its learned weights are reused as-is.
pub fn meta_train<T: Real>(
    cfg: &TrainConfig,
    spec: &ClassSpec,
    model: &TransformerConfig,
    init: Option<&TransformerParams<T>>,
) -> Result<TrainRecord<T>> {
    meta_train_monitored(cfg, spec, model, init, None)
}

/// [`meta_train`] that also records the loss on `monitor` at every
/// validation. The monitor never influences training or model selection.
pub fn meta_train_monitored<T: Real>(
    cfg: &TrainConfig,
    spec: &ClassSpec,
    model: &TransformerConfig,
    init: Option<&TransformerParams<T>>,
    monitor: Option<&[Sequence]>,
) -> Result<TrainRecord<T>> {
    cfg.validate()?;
    spec.validate()?;
    model.validate()?;
    cfg.check_model(model)?;
    let params = match init {
        Some(p) => {
            if !p.config().same_architecture(model) {
                return Err(Error::Config("initial parameters do not match the model architecture".into()));
            }
            p.with_capacity(model.n_ctx_enc, model.n_ctx_dec)?
        }
        None => TransformerParams::init(model, &mut rng_stream(cfg.seed, STREAM_INIT))?,
    };
    let pool = validation_pool(spec, cfg.val_systems, cfg.seq_len, cfg.val_seed)?;
    let m = cfg.ctx_len;
    let chunk = cfg.batch_size.max(16);

    let mut data = rng_stream(cfg.seed, STREAM_DATA);
    let next = || make_batch_traced(spec, cfg.batch_size, cfg.seq_len, m, &mut data).map(|(b, ids)| (b, Some(ids)));
    let validate = |p: &TransformerParams<T>| {
        let v = loss_on_sequences(p, &pool, m, chunk)?;
        let extra = monitor.map(|seqs| loss_on_sequences(p, seqs, m, chunk)).transpose()?;
        Ok((v, extra))
    };
    Loop::new(cfg, params).run(next, validate)
}

/// Fine-tunes all parameters on minibatches drawn with replacement from
/// `data.train`, validating on `data.val`; `data.test` is never read.
pub fn adapt<T: Real>(init: &TransformerParams<T>, data: &SplitDataset, cfg: &TrainConfig) -> Result<TrainRecord<T>> {
    cfg.validate()?;
    cfg.check_model(init.config())?;
    if data.train.is_empty() || data.val.is_empty() || data.test.is_empty() {
        return Err(Error::Config("adaptation needs non-empty train, validation and test partitions".into()));
    }
    let m = cfg.ctx_len;
    let mut rng = rng_stream(cfg.seed, STREAM_DATA);
    let next = || {
        let picks: Vec<&Sequence> = (0..cfg.batch_size).map(|_| &data.train[rng.gen_range(0..data.train.len())]).collect();
        SequenceBatch::from_sequences(&picks, m).map(|b| (b, None))
    };
    let chunk = cfg.batch_size.max(16);
    let validate = |p: &TransformerParams<T>| Ok((loss_on_sequences(p, &data.val, m, chunk)?, None));
    Loop::new(cfg, init.clone()).run(next, validate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TransformerConfig;

    fn scalar_step(theta: f64, g: f64, lr: f64, wd: f64) -> f64 {
        let mut p = vec![Tensor::scalar(theta)];
        let mut st = OptimState::new(AdamW { weight_decay: wd, ..AdamW::default() }, &p);
        adamw_step(&mut p, &[Tensor::scalar(g)], &[true], &mut st, lr).unwrap();
        p[0].item()
    }

    #[test]
    fn adamw_hand_examples() {
        assert!((scalar_step(1.0, 1.0, 0.1, 0.0) - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert_eq!(scalar_step(3.0, 0.0, 0.1, 0.0), 3.0);
        assert!((scalar_step(2.0, 0.0, 0.1, 0.1) - 1.98).abs() < 1e-15);
    }

    #[test]
    fn adamw_rejects_non_finite_gradient_untouched() {
        let mut p = vec![Tensor::scalar(1.0f64)];
        let mut st = OptimState::new(AdamW::default(), &p);
        assert!(adamw_step(&mut p, &[Tensor::scalar(f64::NAN)], &[true], &mut st, 0.1).is_err());
        assert_eq!((p[0].item(), st.t), (1.0, 0));
    }

    #[test]
    fn adamw_converges_on_quadratic() {
        let target = 3.0;
        let mut p = vec![Tensor::scalar(-2.0f64)];
        let mut st = OptimState::new(AdamW { weight_decay: 0.0, ..AdamW::default() }, &p);
        let mut steps = 0;
        while (p[0].item() - target).abs() > 1e-6 {
            let g = 2.0 * (p[0].item() - target);
            adamw_step(&mut p, &[Tensor::scalar(g)], &[true], &mut st, 0.01).unwrap();
            steps += 1;
            assert!(steps <= 5000, "no convergence, at {}", p[0].item());
        }
    }

    #[test]
    fn schedule_warms_up_then_decays_to_floor() {
        let s = TrainConfig { lr: 1e-3, ..TrainConfig::new(1, 10, 5, 1000) }.schedule();
        assert_eq!(s.warmup, 20);
        assert!((s.at(0) - 5e-5).abs() < 1e-12);
        assert!((s.at(19) - 1e-3).abs() < 1e-12);
        assert!((s.at(20) - 1e-3).abs() < 1e-12);
        assert!((s.at(1000) - 1e-4).abs() < 1e-12);
        assert!((1..1000).all(|i| i < 20 || s.at(i) <= s.at(i - 1)));
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut g = vec![Tensor::new(&[2], vec![3.0f64, 0.0]).unwrap(), Tensor::scalar(4.0)];
        assert_eq!(clip_global_norm(&mut g, 1.0), 5.0);
        assert!((g[0].data()[0] - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
        assert_eq!(clip_global_norm(&mut g, 10.0), 1.0);
    }

    #[test]
    fn mse_loss_examples() {
        let y = Tensor::new(&[1, 4, 1], vec![0.1, -0.2, 0.3, 0.4f64]).unwrap();
        assert_eq!(mse_loss(&y, &y).unwrap(), 0.0);
        let off = Tensor::new(&[1, 4, 1], y.data().iter().map(|v| v + 0.5).collect()).unwrap();
        assert!((mse_loss(&off, &y).unwrap() - 0.25).abs() < 1e-15);
        assert!(mse_loss(&y, &Tensor::zeros(&[4])).is_err());
    }

    fn tiny() -> (TrainConfig, TransformerParams<f64>) {
        let model = TransformerConfig { n_layers: 1, d_model: 8, n_heads: 2, n_ctx_enc: 6, n_ctx_dec: 4, n_u: 1, n_y: 1, d_ff: 16, dropout: 0.0 };
        let p = TransformerParams::init(&model, &mut rng_stream(0, 0)).unwrap();
        (TrainConfig { eval_every: 1, patience: Some(1), ..TrainConfig::new(2, 10, 6, 10) }, p)
    }

    #[test]
    fn patience_one_with_rising_validation_returns_initial_parameters() {
        let (cfg, p) = tiny();
        let batch = SequenceBatch::from_sequences(
            &[&Sequence { u: (0..10).map(|i| (i as f64).sin()).collect(), y: (0..10).map(|i| (i as f64).cos()).collect() }],
            6,
        )
        .unwrap();
        let mut calls = 0.0;
        let rec = Loop::new(&cfg, p.clone())
            .run(
                || Ok((batch.clone(), None)),
                |_| {
                    calls += 1.0;
                    Ok((calls, None))
                },
            )
            .unwrap();
        assert_eq!(rec.stop, StopReason::EarlyStopped { iter: 1 });
        assert_eq!((rec.best_iter, rec.best_val), (0, 1.0));
        assert_eq!(rec.best, p);
        assert_ne!(rec.last, p);
    }

    #[test]
    fn loss_csv_has_blank_cells_between_evaluations() {
        let (_, p) = tiny();
        let rec = TrainRecord {
            train_loss: vec![1.0, 0.5, 0.25],
            val_loss: vec![(0, 0.9), (2, 0.4), (3, 0.3)],
            best_iter: 3,
            best_val: 0.3,
            wall_time_s: 0.0,
            stop: StopReason::Completed,
            best: p.clone(),
            last: p,
            batch_systems: Vec::new(),
            monitor_loss: Vec::new(),
        };
        assert_eq!(rec.loss_csv(), "iter,train_loss,val_loss\n0,1,0.9\n1,0.5,\n2,0.25,0.4\n3,,0.3\n");
        assert!((rec.tail_mean(2) - 0.375).abs() < 1e-15);
    }
}
