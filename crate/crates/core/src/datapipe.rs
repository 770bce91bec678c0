//! Normalized context/query sequences drawn from system classes.
//!
//! Outputs are normalized per sequence to zero mean and unit (population)
//! variance over the full length `N`; inputs are white standard normal and
//! left as generated.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::sysgen::{sample_from_class, ClassSpec, SystemInstance};

/// Outputs with a standard deviation below this are resampled.
pub const DEGENERATE_STD: f64 = 1e-12;
const MAX_ATTEMPTS: usize = 100;

/// One SISO input/output trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// `b` trajectories split at `m` into context and query segments, each
/// tensor shaped `[b, steps, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub u_ctx: Tensor<f64>,
    pub y_ctx: Tensor<f64>,
    pub u_query: Tensor<f64>,
    pub y_query: Tensor<f64>,
}

impl SequenceBatch {
    /// Splits equal-length sequences at `m`.
    pub fn from_sequences(seqs: &[&Sequence], m: usize) -> Result<Self> {
        let first = seqs.first().ok_or_else(|| Error::Config("empty batch".into()))?;
        let n_total = first.len();
        if m == 0 || m >= n_total {
            return Err(Error::Config(format!("context length {m} must satisfy 1 <= m < N = {n_total}")));
        }
        if seqs.iter().any(|s| s.len() != n_total || s.y.len() != n_total) {
            return Err(Error::Config("sequences in a batch must share one length".into()));
        }
        let b = seqs.len();
        let n = n_total - m;
        let gather = |f: &dyn Fn(&Sequence) -> &[f64]| -> Vec<f64> { seqs.iter().flat_map(|s| f(s).to_vec()).collect() };
        Ok(Self {
            u_ctx: Tensor::new(&[b, m, 1], gather(&|s| &s.u[..m]))?,
            y_ctx: Tensor::new(&[b, m, 1], gather(&|s| &s.y[..m]))?,
            u_query: Tensor::new(&[b, n, 1], gather(&|s| &s.u[m..]))?,
            y_query: Tensor::new(&[b, n, 1], gather(&|s| &s.y[m..]))?,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.u_ctx.shape()[0]
    }

    pub fn ctx_len(&self) -> usize {
        self.u_ctx.shape()[1]
    }

    pub fn query_len(&self) -> usize {
        self.u_query.shape()[1]
    }

    /// Sequence `i` reassembled from its context and query parts.
    pub fn sequence(&self, i: usize) -> Sequence {
        let (m, n) = (self.ctx_len(), self.query_len());
        let join = |ctx: &Tensor<f64>, query: &Tensor<f64>| {
            let mut v = ctx.data()[i * m..(i + 1) * m].to_vec();
            v.extend_from_slice(&query.data()[i * n..(i + 1) * n]);
            v
        };
        Sequence { u: join(&self.u_ctx, &self.u_query), y: join(&self.y_ctx, &self.y_query) }
    }
}

/// Train/validation/test partitions of sequences from one system.
#[derive(Clone, Debug, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Sequence>,
    pub val: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

/// White standard-normal excitation, `n_steps × n_u` row-major.
pub fn excite<R: Rng + ?Sized>(n_steps: usize, n_u: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n_steps == 0 || n_u == 0 {
        return Err(Error::Config(format!("excitation size {n_steps}x{n_u}")));
    }
    Ok((0..n_steps * n_u).map(|_| rng.sample(StandardNormal)).collect())
}

/// Mean and population standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Zero-mean, unit-variance copy, or `None` for a (near-)constant signal.
pub fn normalize(x: &[f64]) -> Option<Vec<f64>> {
    let (mean, std) = mean_std(x);
    if !(std >= DEGENERATE_STD) {
        return None;
    }
    Some(x.iter().map(|v| (v - mean) / std).collect())
}

/// Excites `system` from zero state and returns the normalized trajectory,
/// or `None` when the output is degenerate.
fn simulate_normalized<R: Rng + ?Sized>(
    system: &mut SystemInstance,
    n_steps: usize,
    rng: &mut R,
) -> Result<Option<Sequence>> {
    let u = excite(n_steps, 1, rng)?;
    system.reset();
    let y = system.simulate(&u)?;
    Ok(normalize(&y).map(|y| Sequence { u, y }))
}

/// Samples one fresh system from `spec` and returns its normalized response.
pub fn sample_sequence<R: Rng + ?Sized>(spec: &ClassSpec, n_steps: usize, rng: &mut R) -> Result<Sequence> {
    sample_traced(spec, n_steps, rng).map(|(seq, _)| seq)
}

fn sample_traced<R: Rng + ?Sized>(spec: &ClassSpec, n_steps: usize, rng: &mut R) -> Result<(Sequence, u64)> {
    for _ in 0..MAX_ATTEMPTS {
        let mut system = sample_from_class(spec, rng)?;
        if let Some(seq) = simulate_normalized(&mut system, n_steps, rng)? {
            return Ok((seq, system.fingerprint()));
        }
    }
    Err(Error::Numeric(format!("degenerate outputs in {MAX_ATTEMPTS} consecutive sampled systems")))
}

/// `b` fresh systems, each excited, simulated, normalized and split at `m`.
pub fn make_batch<R: Rng + ?Sized>(spec: &ClassSpec, b: usize, n_steps: usize, m: usize, rng: &mut R) -> Result<SequenceBatch> {
    make_batch_traced(spec, b, n_steps, m, rng).map(|(batch, _)| batch)
}

/// [`make_batch`] that also returns the fingerprint of each system used.
pub fn make_batch_traced<R: Rng + ?Sized>(
    spec: &ClassSpec,
    b: usize,
    n_steps: usize,
    m: usize,
    rng: &mut R,
) -> Result<(SequenceBatch, Vec<u64>)> {
    if b == 0 {
        return Err(Error::Config("batch size must be >= 1".into()));
    }
    if m == 0 || m >= n_steps {
        return Err(Error::Config(format!("context length {m} must satisfy 1 <= m < N = {n_steps}")));
    }
    let (seqs, ids): (Vec<_>, Vec<_>) = (0..b).map(|_| sample_traced(spec, n_steps, rng)).collect::<Result<Vec<_>>>()?.into_iter().unzip();
    Ok((SequenceBatch::from_sequences(&seqs.iter().collect::<Vec<_>>(), m)?, ids))
}

/// `n_seq` independent excitations of one system, partitioned in order.
pub fn make_split_dataset<R: Rng + ?Sized>(
    system: &SystemInstance,
    n_seq: usize,
    n_steps: usize,
    split: (usize, usize, usize),
    rng: &mut R,
) -> Result<SplitDataset> {
    let (n_train, n_val, n_test) = split;
    if n_train + n_val + n_test != n_seq {
        return Err(Error::Config(format!("split {split:?} does not add up to {n_seq} sequences")));
    }
    let mut sys = system.clone();
    let mut seqs = Vec::with_capacity(n_seq);
    for _ in 0..n_seq {
        let mut found = None;
        for _ in 0..MAX_ATTEMPTS {
            if let Some(seq) = simulate_normalized(&mut sys, n_steps, rng)? {
                found = Some(seq);
                break;
            }
        }
        seqs.push(found.ok_or_else(|| Error::Numeric("system output is degenerate for every excitation".into()))?);
    }
    let test = seqs.split_off(n_train + n_val);
    let val = seqs.split_off(n_train);
    Ok(SplitDataset { train: seqs, val, test })
}

/// Endless stream of fresh batches from one class, driven by a single
/// advancing random source.
pub struct BatchStream<R> {
    spec: ClassSpec,
    b: usize,
    n_steps: usize,
    m: usize,
    rng: R,
}

impl<R: Rng> BatchStream<R> {
    pub fn new(spec: ClassSpec, b: usize, n_steps: usize, m: usize, rng: R) -> Self {
        Self { spec, b, n_steps, m, rng }
    }
}

impl<R: Rng> Iterator for BatchStream<R> {
    type Item = Result<SequenceBatch>;

    fn next(&mut self) -> Option<Self::Item> {
        Some(make_batch(&self.spec, self.b, self.n_steps, self.m, &mut self.rng))
    }
}
