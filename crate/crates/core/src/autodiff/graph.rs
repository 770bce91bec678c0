//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its forward value and enough cached
//! state to produce the exact adjoint. [`Graph::backward`] walks the tape in
//! reverse and accumulates gradients into leaves created with
//! [`Graph::param`].

use rand::Rng;

use super::real::{gemm, MatRef};
use super::{Real, Tensor};
use crate::error::TensorError;

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul { a: Var, b: Var, trans_b: bool, shared_b: bool, batch: usize, r: usize, k: usize, c: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Tanh(Var),
    Gelu(Var),
    Softmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, xhat: Vec<T>, rstd: Vec<T> },
    Dropout { a: Var, mask: Vec<T> },
    Reshape(Var),
    TransposeLast2(Var),
    SwapAxes12(Var),
    Concat(Vec<Var>),
    Sum(Var),
    Mean(Var),
    Mse(Var, Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
    grad: Option<Vec<T>>,
}

/// Computation tape. One graph per forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn shape_err(op: &'static str, lhs: &[usize], rhs: &[usize]) -> TensorError {
    TensorError::Shape { op, lhs: lhs.to_vec(), rhs: rhs.to_vec() }
}

fn accumulate<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant input; receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf; its gradient is available after [`Graph::backward`].
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, `None` before any backward pass
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        let node = &self.nodes[v.0];
        node.grad.as_ref().map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    /// Clears accumulated leaf gradients.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// Batched matrix product `a · b`.
    ///
    /// `a` is `[batch.., r, k]`; `b` is either a shared `[k, c]` matrix or has
    /// the same batch dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// Batched `a · bᵀ` where `b` is `[.., c, k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var, TensorError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let err = || shape_err("matmul", &sa, &sb);
        if sa.len() < 2 || sb.len() < 2 {
            return Err(err());
        }
        let (r, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, c) = if trans_b {
            (sb[sb.len() - 1], sb[sb.len() - 2])
        } else {
            (sb[sb.len() - 2], sb[sb.len() - 1])
        };
        if kb != k {
            return Err(err());
        }
        let shared_b = sb.len() == 2;
        if !shared_b && sb[..sb.len() - 2] != sa[..sa.len() - 2] {
            return Err(err());
        }
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let mut out_shape = sa[..sa.len() - 2].to_vec();
        out_shape.extend([r, c]);
        let mut out = vec![T::zero(); batch * r * c];
        {
            let av = self.value(a).data();
            let bv = self.value(b).data();
            if shared_b {
                gemm(MatRef::new(av, batch * r, k), MatRef::with_trans(bv, k, c, trans_b), &mut out, T::zero());
            } else {
                for i in 0..batch {
                    gemm(
                        MatRef::new(&av[i * r * k..(i + 1) * r * k], r, k),
                        MatRef::with_trans(&bv[i * k * c..(i + 1) * k * c], k, c, trans_b),
                        &mut out[i * r * c..(i + 1) * r * c],
                        T::zero(),
                    );
                }
            }
        }
        let needs = self.needs(a) || self.needs(b);
        let value = Tensor::new(&out_shape, out)?;
        Ok(self.push(value, Op::MatMul { a, b, trans_b, shared_b, batch, r, k, c }, needs))
    }

    fn check_broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        let sa = self.shape(a);
        let sb = self.shape(b);
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err(op, sa, sb));
        }
        Ok(())
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<Tensor<T>, TensorError> {
        self.check_broadcast(op, a, b)?;
        let av = self.value(a);
        let bv = self.value(b).data();
        let mut data = Vec::with_capacity(av.len());
        if !bv.is_empty() {
            for chunk in av.data().chunks(bv.len()) {
                data.extend(chunk.iter().zip(bv).map(|(&x, &y)| f(x, y)));
            }
        }
        Tensor::new(av.shape(), data)
    }

    /// `a + b`, with `b` broadcast when its shape is a suffix of `a`'s.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.binary("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), needs))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let src = self.value(a);
        let v = Tensor::new(src.shape(), src.data().iter().map(|&x| x * c).collect()).expect("same shape");
        let needs = self.needs(a);
        self.push(v, Op::Scale(a, c), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let v = Tensor::new(src.shape(), src.data().iter().map(|x| x.tanh()).collect()).expect("same shape");
        let needs = self.needs(a);
        self.push(v, Op::Tanh(a), needs)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let (half, one, c, s) = (T::of(0.5), T::one(), T::of(GELU_C), T::of(SQRT_2_OVER_PI));
        let src = self.value(a);
        let data = src.data().iter().map(|&x| half * x * (one + (s * (x + c * x * x * x)).fast_tanh())).collect();
        let v = Tensor::new(src.shape(), data).expect("same shape");
        let needs = self.needs(a);
        self.push(v, Op::Gelu(a), needs)
    }

    /// Softmax over the last dimension. With `causal`, the input is read as
    /// `[.., t, s]` and entry `(i, j)` is masked out for `j > i`; masked
    /// entries are exactly zero.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Result<Var, TensorError> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if shape.is_empty() || (causal && shape.len() < 2) {
            return Err(TensorError::Usage { op: "softmax", msg: format!("unsupported shape {shape:?}") });
        }
        let s = shape[shape.len() - 1];
        let t = if causal { shape[shape.len() - 2] } else { 1 };
        let mut out = vec![T::zero(); src.len()];
        for (row_idx, (row, dst)) in src.data().chunks(s).zip(out.chunks_mut(s)).enumerate() {
            let allowed = if causal { ((row_idx % t) + 1).min(s) } else { s };
            let max = row[..allowed].iter().copied().fold(T::neg_infinity(), T::max);
            for (d, &x) in dst[..allowed].iter_mut().zip(&row[..allowed]) {
                *d = (x - max).fast_exp();
            }
            let total: T = dst[..allowed].iter().copied().sum();
            let inv = T::one() / total;
            for x in dst[..allowed].iter_mut() {
                *x *= inv;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&shape, out)?, Op::Softmax(a), needs))
    }

    /// Layer normalization over the last dimension with learnable gain and
    /// bias of shape `[d]`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TensorError> {
        let src = self.value(x);
        let d = src.last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", src.shape(), self.shape(gain)));
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = src.len() / d;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); src.len()];
        let inv_d = T::one() / T::of(d as f64);
        let eps = T::of(eps);
        for (r, row) in src.data().chunks(d).enumerate() {
            let mean = row.iter().copied().sum::<T>() * inv_d;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                out[r * d + j] = h * g[j] + b[j];
            }
        }
        let needs = self.needs(x) || self.needs(gain) || self.needs(bias);
        let v = Tensor::new(src.shape(), out)?;
        Ok(self.push(v, Op::LayerNorm { x, gain, bias, xhat, rstd }, needs))
    }

    /// Inverted dropout. Identity (no new node) when `rate == 0`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::Usage { op: "dropout", msg: format!("rate {rate} outside [0, 1)") });
        }
        if rate == 0.0 {
            return Ok(a);
        }
        let keep = T::of(1.0 / (1.0 - rate));
        let src = self.value(a);
        let mask: Vec<T> = (0..src.len()).map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep }).collect();
        let data = src.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let v = Tensor::new(src.shape(), data)?;
        let needs = self.needs(a);
        Ok(self.push(v, Op::Dropout { a, mask }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(a).clone().reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(v, Op::Reshape(a), needs))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if shape.len() < 2 {
            return Err(TensorError::Usage { op: "transpose", msg: format!("rank {} < 2", shape.len()) });
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let data = transpose_last2(src.data(), r, c);
        let mut out_shape = shape;
        let n = out_shape.len();
        out_shape.swap(n - 2, n - 1);
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&out_shape, data)?, Op::TransposeLast2(a), needs))
    }

    /// `[p, q, r, s] -> [p, r, q, s]`; splits/merges attention heads.
    pub fn swap_axes12(&mut self, a: Var) -> Result<Var, TensorError> {
        let src = self.value(a);
        let shape = src.shape().to_vec();
        if shape.len() != 4 {
            return Err(TensorError::Usage { op: "swap_axes12", msg: format!("expected rank 4, got {shape:?}") });
        }
        let data = swap12(src.data(), &shape);
        let needs = self.needs(a);
        let v = Tensor::new(&[shape[0], shape[2], shape[1], shape[3]], data)?;
        Ok(self.push(v, Op::SwapAxes12(a), needs))
    }

    /// Concatenation along the last dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = parts.first().ok_or(TensorError::Usage { op: "concat", msg: "no inputs".into() })?;
        let lead = self.shape(*first)[..self.shape(*first).len() - 1].to_vec();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err("concat", self.shape(*first), s));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p).data()[r * w..(r + 1) * w]);
            }
        }
        let mut shape = lead;
        shape.push(total);
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(&shape, out)?, Op::Concat(parts.to_vec()), needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let s = src.data().iter().copied().sum::<T>() / T::of(src.len() as f64);
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("mse", sa, sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let s = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / T::of(av.len() as f64);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::scalar(s), Op::Mse(a, b), needs))
    }

    /// Reverse pass from a scalar. Leaf gradients accumulate across calls
    /// until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Usage {
                op: "backward",
                msg: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_updates = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            if matches!(self.nodes[i].op, Op::Leaf) {
                leaf_updates.push((i, g));
            }
        }
        for (i, g) in leaf_updates {
            match &mut self.nodes[i].grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, trans_b, shared_b, batch, r, k, c } => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                if self.needs(a) {
                    let ga = accumulate(grads, a, av.len());
                    // dA = dC · B_effᵀ
                    if shared_b {
                        gemm(MatRef::new(g, batch * r, c), MatRef::with_trans(bv, c, k, !trans_b), ga, T::one());
                    } else {
                        for n in 0..batch {
                            gemm(
                                MatRef::new(&g[n * r * c..(n + 1) * r * c], r, c),
                                MatRef::with_trans(&bv[n * k * c..(n + 1) * k * c], c, k, !trans_b),
                                &mut ga[n * r * k..(n + 1) * r * k],
                                T::one(),
                            );
                        }
                    }
                }
                if self.needs(b) {
                    let gb = accumulate(grads, b, bv.len());
                    let rows = if shared_b { batch * r } else { r };
                    let count = if shared_b { 1 } else { batch };
                    for n in 0..count {
                        let a_blk = &av[n * rows * k..(n + 1) * rows * k];
                        let g_blk = &g[n * rows * c..(n + 1) * rows * c];
                        let gb_blk = &mut gb[n * k * c..(n + 1) * k * c];
                        if trans_b {
                            // dB (c×k) = dCᵀ · A
                            gemm(MatRef::transposed(g_blk, c, rows), MatRef::new(a_blk, rows, k), gb_blk, T::one());
                        } else {
                            // dB (k×c) = Aᵀ · dC
                            gemm(MatRef::transposed(a_blk, k, rows), MatRef::new(g_blk, rows, c), gb_blk, T::one());
                        }
                    }
                }
            }
            &Op::Add(a, b) | &Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if self.needs(a) {
                    let ga = accumulate(grads, a, g.len());
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
                }
                if self.needs(b) {
                    let n = self.value(b).len();
                    let gb = accumulate(grads, b, n);
                    for chunk in g.chunks(n.max(1)) {
                        gb.iter_mut().zip(chunk).for_each(|(x, &y)| *x += sign * y);
                    }
                }
            }
            &Op::Mul(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let n = bv.len();
                if self.needs(a) {
                    let ga = accumulate(grads, a, g.len());
                    for (dst, gc) in ga.chunks_mut(n.max(1)).zip(g.chunks(n.max(1))) {
                        dst.iter_mut().zip(gc).zip(bv).for_each(|((x, &y), &w)| *x += y * w);
                    }
                }
                if self.needs(b) {
                    let gb = accumulate(grads, b, n);
                    for (gc, ac) in g.chunks(n.max(1)).zip(av.chunks(n.max(1))) {
                        gb.iter_mut().zip(gc).zip(ac).for_each(|((x, &y), &v)| *x += y * v);
                    }
                }
            }
            &Op::Scale(a, c) => {
                let ga = accumulate(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += c * y);
            }
            &Op::Tanh(a) => {
                let out = node.value.data();
                let ga = accumulate(grads, a, g.len());
                for j in 0..g.len() {
                    ga[j] += g[j] * (T::one() - out[j] * out[j]);
                }
            }
            &Op::Gelu(a) => {
                let (half, one, c, s) = (T::of(0.5), T::one(), T::of(GELU_C), T::of(SQRT_2_OVER_PI));
                let three_c = T::of(3.0 * GELU_C);
                let xv = self.value(a).data();
                let ga = accumulate(grads, a, g.len());
                for j in 0..g.len() {
                    let x = xv[j];
                    let t = (s * (x + c * x * x * x)).fast_tanh();
                    let d = half * (one + t) + half * x * (one - t * t) * s * (one + three_c * x * x);
                    ga[j] += g[j] * d;
                }
            }
            &Op::Softmax(a) => {
                let y = node.value.data();
                let s = node.value.last_dim();
                let ga = accumulate(grads, a, g.len());
                for ((yr, gr), dst) in y.chunks(s).zip(g.chunks(s)).zip(ga.chunks_mut(s)) {
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for j in 0..s {
                        dst[j] += yr[j] * (gr[j] - dot);
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let d = node.value.last_dim();
                let gv = self.value(*gain).data();
                if self.needs(*x) {
                    let gx = accumulate(grads, *x, g.len());
                    let inv_d = T::one() / T::of(d as f64);
                    for (r, &rs) in rstd.iter().enumerate() {
                        let row = r * d..(r + 1) * d;
                        let (gr, hr) = (&g[row.clone()], &xhat[row.clone()]);
                        let mut mean_dh = T::zero();
                        let mut mean_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hr[j];
                        }
                        mean_dh *= inv_d;
                        mean_dh_h *= inv_d;
                        let dst = &mut gx[row];
                        for j in 0..d {
                            dst[j] += rs * (gr[j] * gv[j] - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                }
                if self.needs(*gain) {
                    let gg = accumulate(grads, *gain, d);
                    for (gc, hc) in g.chunks(d).zip(xhat.chunks(d)) {
                        gg.iter_mut().zip(gc).zip(hc).for_each(|((x, &y), &h)| *x += y * h);
                    }
                }
                if self.needs(*bias) {
                    let gb = accumulate(grads, *bias, d);
                    for gc in g.chunks(d) {
                        gb.iter_mut().zip(gc).for_each(|(x, &y)| *x += y);
                    }
                }
            }
            Op::Dropout { a, mask } => {
                let ga = accumulate(grads, *a, g.len());
                for j in 0..g.len() {
                    ga[j] += g[j] * mask[j];
                }
            }
            &Op::Reshape(a) => {
                let ga = accumulate(grads, a, g.len());
                ga.iter_mut().zip(g).for_each(|(x, &y)| *x += y);
            }
            &Op::TransposeLast2(a) => {
                let shape = node.value.shape();
                let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
                let back = transpose_last2(g, r, c);
                let ga = accumulate(grads, a, g.len());
                ga.iter_mut().zip(&back).for_each(|(x, &y)| *x += y);
            }
            &Op::SwapAxes12(a) => {
                let back = swap12(g, node.value.shape());
                let ga = accumulate(grads, a, g.len());
                ga.iter_mut().zip(&back).for_each(|(x, &y)| *x += y);
            }
            Op::Concat(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    if self.needs(p) {
                        let gp = accumulate(grads, p, rows * w);
                        for r in 0..rows {
                            for j in 0..w {
                                gp[r * w + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            &Op::Sum(a) | &Op::Mean(a) => {
                let n = self.value(a).len();
                let scale = if matches!(node.op, Op::Mean(_)) { T::one() / T::of(n as f64) } else { T::one() };
                let ga = accumulate(grads, a, n);
                ga.iter_mut().for_each(|x| *x += g[0] * scale);
            }
            &Op::Mse(a, b) => {
                let av = self.value(a).data();
                let bv = self.value(b).data();
                let k = g[0] * T::of(2.0 / av.len() as f64);
                if self.needs(a) {
                    let ga = accumulate(grads, a, av.len());
                    for j in 0..av.len() {
                        ga[j] += k * (av[j] - bv[j]);
                    }
                }
                if self.needs(b) {
                    let gb = accumulate(grads, b, bv.len());
                    for j in 0..bv.len() {
                        gb[j] -= k * (av[j] - bv[j]);
                    }
                }
            }
        }
    }
}

fn transpose_last2<T: Real>(src: &[T], r: usize, c: usize) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let blk = r * c;
    for (s, d) in src.chunks(blk).zip(out.chunks_mut(blk)) {
        for i in 0..r {
            for j in 0..c {
                d[j * r + i] = s[i * c + j];
            }
        }
    }
    out
}

/// `[p, q, r, s] -> [p, r, q, s]` for a tensor of the given (input) shape.
fn swap12<T: Real>(src: &[T], shape: &[usize]) -> Vec<T> {
    let (p, q, r, s) = (shape[0], shape[1], shape[2], shape[3]);
    let mut out = vec![T::zero(); src.len()];
    for a in 0..p {
        for i in 0..q {
            for j in 0..r {
                let from = ((a * q + i) * r + j) * s;
                let to = ((a * r + j) * q + i) * s;
                out[to..to + s].copy_from_slice(&src[from..from + s]);
            }
        }
    }
    out
}
