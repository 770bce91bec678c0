//! RMSE, absolute-error quantile bands and seed-pinned stream evaluation.

use crate::autodiff::Real;
use crate::datapipe::{make_batch, Sequence, SequenceBatch};
use crate::error::{Error, Result, TensorError};
use crate::model::TransformerParams;
use crate::sysgen::ClassSpec;
use crate::train::{mse_loss, predict, rng_stream};

const STREAM_EVAL: u64 = 5;

/// Root mean squared error over all elements.
pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(TensorError::Shape { op: "rmse", lhs: vec![pred.len()], rhs: vec![target.len()] }.into());
    }
    let mse = pred.iter().zip(target).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Mean of per-sequence RMSE values.
pub fn mean_rmse(preds: &[Vec<f64>], targets: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Config(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let total = preds.iter().zip(targets).map(|(p, t)| rmse(p, t)).sum::<Result<f64>>()?;
    Ok(total / preds.len() as f64)
}

/// Empirical quantile with linear interpolation between order statistics
/// (`h = (n − 1)·q`). `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-step lower and upper quantiles of `|error|` across a population.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileBand {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub q_lo: f64,
    pub q_hi: f64,
    pub population: usize,
}

impl QuantileBand {
    pub fn len(&self) -> usize {
        self.lo.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lo.is_empty()
    }

    /// Median over steps of the band midpoint.
    pub fn median_mid(&self) -> f64 {
        let mut mid: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(a, b)| 0.5 * (a + b)).collect();
        mid.sort_by(f64::total_cmp);
        quantile_sorted(&mid, 0.5)
    }
}

/// `errors` is `population × n`; each row is one sequence's error over time.
pub fn abs_error_quantiles(errors: &[Vec<f64>], q_lo: f64, q_hi: f64) -> Result<QuantileBand> {
    if errors.len() < 2 {
        return Err(Error::Config(format!("quantile band needs a population of at least 2, got {}", errors.len())));
    }
    if !(0.0..=1.0).contains(&q_lo) || !(q_lo..=1.0).contains(&q_hi) {
        return Err(Error::Config(format!("quantiles ({q_lo}, {q_hi}) must satisfy 0 <= lo <= hi <= 1")));
    }
    let n = errors[0].len();
    if errors.iter().any(|e| e.len() != n) {
        return Err(Error::Config("error sequences differ in length".into()));
    }
    let (mut lo, mut hi) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut column = vec![0.0; errors.len()];
    for k in 0..n {
        for (c, e) in column.iter_mut().zip(errors) {
            *c = e[k].abs();
        }
        column.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&column, q_lo));
        hi.push(quantile_sorted(&column, q_hi));
    }
    Ok(QuantileBand { lo, hi, q_lo, q_hi, population: errors.len() })
}

/// `step,q25_pre,q75_pre,q25_post,q75_post` rows.
pub fn band_csv(pre: &QuantileBand, post: &QuantileBand) -> String {
    let mut out = String::from("step,q25_pre,q75_pre,q25_post,q75_post\n");
    for k in 0..pre.len().min(post.len()) {
        out.push_str(&format!("{},{},{},{},{}\n", k + 1, pre.lo[k], pre.hi[k], post.lo[k], post.hi[k]));
    }
    out
}

/// Query-segment predictions and errors for a set of sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceEval {
    pub predictions: Vec<Vec<f64>>,
    pub errors: Vec<Vec<f64>>,
    pub rmse: Vec<f64>,
}

impl SequenceEval {
    pub fn mean_rmse(&self) -> f64 {
        self.rmse.iter().sum::<f64>() / self.rmse.len().max(1) as f64
    }
}

/// Runs the meta-model on each sequence (context = first `m` steps).
pub fn evaluate_sequences<T: Real>(params: &TransformerParams<T>, seqs: &[Sequence], m: usize) -> Result<SequenceEval> {
    let mut out = SequenceEval { predictions: Vec::new(), errors: Vec::new(), rmse: Vec::new() };
    for part in seqs.chunks(16) {
        let batch = SequenceBatch::from_sequences(&part.iter().collect::<Vec<_>>(), m)?;
        let pred = predict(params, &batch)?.to_f64_vec();
        let n = batch.query_len();
        for (i, s) in part.iter().enumerate() {
            let p = pred[i * n..(i + 1) * n].to_vec();
            let e: Vec<f64> = s.y[m..].iter().zip(&p).map(|(y, yh)| y - yh).collect();
            out.rmse.push(rmse(&p, &s.y[m..])?);
            out.predictions.push(p);
            out.errors.push(e);
        }
    }
    Ok(out)
}

/// Geometry of a stream evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StreamEval {
    pub n_batches: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub ctx_len: usize,
    pub seed: u64,
}

/// Mean loss over `n_batches` seed-pinned batches of fresh systems.
pub fn eval_on_stream<T: Real>(params: &TransformerParams<T>, spec: &ClassSpec, cfg: &StreamEval) -> Result<f64> {
    if cfg.n_batches == 0 {
        return Err(Error::Config("n_batches must be >= 1".into()));
    }
    let mut rng = rng_stream(cfg.seed, STREAM_EVAL);
    let mut total = 0.0;
    for _ in 0..cfg.n_batches {
        let batch = make_batch(spec, cfg.batch_size, cfg.seq_len, cfg.ctx_len, &mut rng)?;
        total += mse_loss(&predict(params, &batch)?, &batch.y_query.cast::<T>())?;
    }
    Ok(total / cfg.n_batches as f64)
}

/// Loss of the constant-zero predictor on the same seed-pinned stream.
pub fn zero_predictor_on_stream(spec: &ClassSpec, cfg: &StreamEval) -> Result<f64> {
    let mut rng = rng_stream(cfg.seed, STREAM_EVAL);
    let mut total = 0.0;
    for _ in 0..cfg.n_batches.max(1) {
        let batch = make_batch(spec, cfg.batch_size, cfg.seq_len, cfg.ctx_len, &mut rng)?;
        let zeros = crate::autodiff::Tensor::zeros(batch.y_query.shape());
        total += mse_loss(&zeros, &batch.y_query)?;
    }
    Ok(total / cfg.n_batches.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.5, -0.5, 1.5], &[0.0, -1.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        let m = mean_rmse(&[vec![1.0, 1.0], vec![0.0]], &[vec![0.0, 0.0], vec![3.0]]).unwrap();
        assert!((m - 2.0).abs() < 1e-15);
    }

    #[test]
    fn two_member_population_interpolates() {
        let errs = vec![vec![0.1; 5], vec![-0.3; 5]];
        let band = abs_error_quantiles(&errs, 0.25, 0.75).unwrap();
        for k in 0..5 {
            assert!((band.lo[k] - 0.15).abs() < 1e-15);
            assert!((band.hi[k] - 0.25).abs() < 1e-15);
        }
        let same = abs_error_quantiles(&[vec![0.2, 0.4], vec![0.2, 0.4]], 0.25, 0.75).unwrap();
        assert_eq!(same.lo, same.hi);
        assert!(abs_error_quantiles(&[vec![1.0]], 0.25, 0.75).is_err());
    }

    #[test]
    fn band_csv_layout() {
        let b = abs_error_quantiles(&[vec![0.0, 1.0], vec![1.0, 1.0]], 0.25, 0.75).unwrap();
        let csv = band_csv(&b, &b);
        assert_eq!(csv, "step,q25_pre,q75_pre,q25_post,q75_post\n1,0.25,0.75,0.25,0.75\n2,1,1,1,1\n");
    }

    proptest! {
        #[test]
        fn wider_quantiles_contain_narrower(errs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 2..12)) {
            let inner = abs_error_quantiles(&errs, 0.25, 0.75).unwrap();
            let outer = abs_error_quantiles(&errs, 0.1, 0.9).unwrap();
            for k in 0..6 {
                prop_assert!(inner.lo[k] <= inner.hi[k]);
                prop_assert!(inner.lo[k] >= 0.0);
                prop_assert!(outer.lo[k] <= inner.lo[k] && inner.hi[k] <= outer.hi[k]);
            }
        }

        #[test]
        fn rmse_squared_is_mse(p in prop::collection::vec(-3.0f64..3.0, 1..40), seed in 0u64..100) {
            let t: Vec<f64> = p.iter().enumerate().map(|(i, x)| x * 0.3 + (i as f64 + seed as f64).sin()).collect();
            let r = rmse(&p, &t).unwrap();
            let pt = crate::autodiff::Tensor::new(&[p.len()], p.clone()).unwrap();
            let tt = crate::autodiff::Tensor::new(&[t.len()], t).unwrap();
            prop_assert!((r * r - mse_loss(&pt, &tt).unwrap()).abs() < 1e-12);
        }
    }
}
