use rand_chacha::ChaCha8Rng;

use super::params::{Attention, Linear, Mlp, Norm};
use super::{TransformerParams, LAYER_NORM_EPS};
use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Result, TensorError};

/// Encoder output ζ, shape `[b, m, d_model]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderMemory<T>(pub Tensor<T>);

impl<T: Real> EncoderMemory<T> {
    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn zeroed(&self) -> Self {
        Self(Tensor::zeros(self.0.shape()))
    }
}

/// One forward (and optionally backward) pass over a fresh tape.
pub struct Session<'p, T: Real> {
    pub graph: Graph<T>,
    params: &'p TransformerParams<T>,
    vars: Vec<Var>,
    dropout: Option<ChaCha8Rng>,
}

impl<'p, T: Real> Session<'p, T> {
    /// Parameters bound as trainable leaves.
    pub fn new(params: &'p TransformerParams<T>) -> Self {
        let mut graph = Graph::new();
        let vars = params.tensors().iter().map(|t| graph.param(t.clone())).collect();
        Self { graph, params, vars, dropout: None }
    }

    /// Parameters bound as constants; no gradients are tracked.
    pub fn inference(params: &'p TransformerParams<T>) -> Self {
        let mut graph = Graph::new();
        let vars = params.tensors().iter().map(|t| graph.constant(t.clone())).collect();
        Self { graph, params, vars, dropout: None }
    }

    /// Enables dropout at the configured rate, drawing masks from `rng`.
    pub fn with_dropout(mut self, rng: ChaCha8Rng) -> Self {
        if self.params.config().dropout > 0.0 {
            self.dropout = Some(rng);
        }
        self
    }

    pub fn param_vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradient of every learned tensor, zeros where none flowed.
    pub fn param_grads(&self) -> Vec<Tensor<T>> {
        self.vars
            .iter()
            .zip(self.params.tensors())
            .map(|(&v, t)| self.graph.grad(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.graph.constant(t)
    }

    fn shape_err(&self, op: &'static str, got: &[usize], want: Vec<usize>) -> crate::Error {
        TensorError::Shape { op, lhs: got.to_vec(), rhs: want }.into()
    }

    fn check_seq(&self, op: &'static str, v: Var, channels: usize, cap: usize) -> Result<(usize, usize)> {
        let s = self.graph.shape(v);
        if s.len() != 3 || s[2] != channels || s[1] == 0 {
            return Err(self.shape_err(op, s, vec![s.first().copied().unwrap_or(0), cap, channels]));
        }
        if s[1] > cap {
            return Err(TensorError::Usage { op, msg: format!("length {} exceeds capacity {cap}", s[1]) }.into());
        }
        Ok((s[0], s[1]))
    }

    fn linear(&mut self, x: Var, l: Linear) -> Result<Var> {
        let h = self.graph.matmul(x, self.vars[l.w])?;
        Ok(self.graph.add(h, self.vars[l.b])?)
    }

    fn norm(&mut self, x: Var, n: Norm) -> Result<Var> {
        Ok(self.graph.layer_norm(x, self.vars[n.gain], self.vars[n.bias], LAYER_NORM_EPS)?)
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        match self.dropout.as_mut() {
            Some(rng) => Ok(self.graph.dropout(x, self.params.config().dropout, rng)?),
            None => Ok(x),
        }
    }

    fn heads(&mut self, x: Var, b: usize, t: usize) -> Result<Var> {
        let cfg = self.params.config();
        let (h, dh) = (cfg.n_heads, cfg.d_head());
        let x = self.graph.reshape(x, &[b, t, h, dh])?;
        Ok(self.graph.swap_axes12(x)?)
    }

    /// Multi-head attention of `xq` over `xkv`, including the output projection.
    fn attention(&mut self, a: Attention, xq: Var, xkv: Var, causal: bool) -> Result<Var> {
        let (b, tq) = (self.graph.shape(xq)[0], self.graph.shape(xq)[1]);
        let tk = self.graph.shape(xkv)[1];
        let d = self.params.config().d_model;
        let dh = self.params.config().d_head();
        let q = self.linear(xq, a.q)?;
        let q = self.heads(q, b, tq)?;
        let k = self.linear(xkv, a.k)?;
        let k = self.heads(k, b, tk)?;
        let v = self.linear(xkv, a.v)?;
        let v = self.heads(v, b, tk)?;
        let s = self.graph.matmul_t(q, k)?;
        let s = self.graph.scale(s, T::of(1.0 / (dh as f64).sqrt()));
        let p = self.graph.softmax(s, causal)?;
        let o = self.graph.matmul(p, v)?;
        let o = self.graph.swap_axes12(o)?;
        let o = self.graph.reshape(o, &[b, tq, d])?;
        self.linear(o, a.o)
    }

    fn mlp(&mut self, x: Var, m: Mlp) -> Result<Var> {
        let h = self.linear(x, m.fc)?;
        let h = self.graph.gelu(h);
        self.linear(h, m.proj)
    }

    fn residual(&mut self, x: Var, branch: Var) -> Result<Var> {
        let branch = self.drop(branch)?;
        Ok(self.graph.add(x, branch)?)
    }

    fn embed(&mut self, x: Var, proj: Linear, table: &Tensor<T>, t: usize) -> Result<Var> {
        let d = self.params.config().d_model;
        let h = self.linear(x, proj)?;
        let pos = Tensor::new(&[t, d], table.data()[..t * d].to_vec())?;
        let pos = self.graph.constant(pos);
        let h = self.graph.add(h, pos)?;
        self.drop(h)
    }

    /// `[b, m, n_u]`, `[b, m, n_y]` → ζ `[b, m, d_model]`.
    pub fn encode(&mut self, u_ctx: Var, y_ctx: Var) -> Result<Var> {
        let cfg = self.params.config().clone();
        let (b, m) = self.check_seq("encode", u_ctx, cfg.n_u, cfg.n_ctx_enc)?;
        let (by, my) = self.check_seq("encode", y_ctx, cfg.n_y, cfg.n_ctx_enc)?;
        if (b, m) != (by, my) {
            return Err(self.shape_err("encode", self.graph.shape(y_ctx), vec![b, m, cfg.n_y]));
        }
        let params = self.params;
        let layout = &params.layout;
        let x = self.graph.concat(&[u_ctx, y_ctx])?;
        let mut x = self.embed(x, layout.enc_in, params.pos_encoder(), m)?;
        for layer in &layout.enc_layers {
            let h = self.norm(x, layer.ln1)?;
            let h = self.attention(layer.attn, h, h, false)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, layer.ln2)?;
            let h = self.mlp(h, layer.mlp)?;
            x = self.residual(x, h)?;
        }
        self.norm(x, layout.enc_norm)
    }

    /// ζ and `[b, n, n_u]` → ŷ `[b, n, n_y]`.
    pub fn decode(&mut self, memory: Var, u_query: Var) -> Result<Var> {
        let cfg = self.params.config().clone();
        let (b, _) = self.check_seq("decode", u_query, cfg.n_u, cfg.n_ctx_dec)?;
        let ms = self.graph.shape(memory);
        if ms.len() != 3 || ms[0] != b || ms[2] != cfg.d_model || ms[1] == 0 {
            return Err(self.shape_err("decode", ms, vec![b, cfg.n_ctx_enc, cfg.d_model]));
        }
        self.decode_impl(Some(memory), u_query)
    }

    /// Decoder with each cross-attention replaced by the constant it returns
    /// for an all-zero memory (`b_v·W_o + b_o`).
    pub fn decode_detached(&mut self, u_query: Var) -> Result<Var> {
        let cfg = self.params.config();
        self.check_seq("decode", u_query, cfg.n_u, cfg.n_ctx_dec)?;
        self.decode_impl(None, u_query)
    }

    fn decode_impl(&mut self, memory: Option<Var>, u_query: Var) -> Result<Var> {
        let n = self.graph.shape(u_query)[1];
        let params = self.params;
        let layout = &params.layout;
        let mut x = self.embed(u_query, layout.dec_in, params.pos_decoder(), n)?;
        for layer in &layout.dec_layers {
            let h = self.norm(x, layer.ln1)?;
            let h = self.attention(layer.self_attn, h, h, true)?;
            x = self.residual(x, h)?;
            let h = self.norm(x, layer.ln2)?;
            let h = match memory {
                Some(mem) => self.attention(layer.cross_attn, h, mem, false)?,
                None => {
                    let d = params.config().d_model;
                    let bv = self.graph.reshape(self.vars[layer.cross_attn.v.b], &[1, d])?;
                    let c = self.linear(bv, layer.cross_attn.o)?;
                    let c = self.graph.reshape(c, &[d])?;
                    let zero = self.graph.scale(h, T::zero());
                    self.graph.add(zero, c)?
                }
            };
            x = self.residual(x, h)?;
            let h = self.norm(x, layer.ln3)?;
            let h = self.mlp(h, layer.mlp)?;
            x = self.residual(x, h)?;
        }
        let x = self.norm(x, layout.dec_norm)?;
        self.linear(x, layout.head)
    }

    pub fn forward(&mut self, u_ctx: Var, y_ctx: Var, u_query: Var) -> Result<Var> {
        let mem = self.encode(u_ctx, y_ctx)?;
        self.decode(mem, u_query)
    }
}

pub fn encode<T: Real>(params: &TransformerParams<T>, u_ctx: &Tensor<T>, y_ctx: &Tensor<T>) -> Result<EncoderMemory<T>> {
    let mut s = Session::inference(params);
    let (u, y) = (s.input(u_ctx.clone()), s.input(y_ctx.clone()));
    let z = s.encode(u, y)?;
    Ok(EncoderMemory(s.graph.value(z).clone()))
}

pub fn decode<T: Real>(params: &TransformerParams<T>, memory: &EncoderMemory<T>, u_query: &Tensor<T>) -> Result<Tensor<T>> {
    let mut s = Session::inference(params);
    let (z, u) = (s.input(memory.0.clone()), s.input(u_query.clone()));
    let y = s.decode(z, u)?;
    Ok(s.graph.value(y).clone())
}

pub fn forward<T: Real>(
    params: &TransformerParams<T>,
    u_ctx: &Tensor<T>,
    y_ctx: &Tensor<T>,
    u_query: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut s = Session::inference(params);
    let (u, y, q) = (s.input(u_ctx.clone()), s.input(y_ctx.clone()), s.input(u_query.clone()));
    let out = s.forward(u, y, q)?;
    Ok(s.graph.value(out).clone())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;
    use crate::model::TransformerConfig;

    fn tiny() -> TransformerConfig {
        TransformerConfig { n_layers: 2, d_model: 8, n_heads: 2, n_ctx_enc: 12, n_ctx_dec: 10, n_u: 1, n_y: 1, d_ff: 16, dropout: 0.0 }
    }

    fn inputs(b: usize, m: usize, n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (Tensor::randn(&[b, m, 1], 1.0, &mut rng), Tensor::randn(&[b, m, 1], 1.0, &mut rng), Tensor::randn(&[b, n, 1], 1.0, &mut rng))
    }

    fn params(seed: u64) -> TransformerParams<f64> {
        let mut p = TransformerParams::init(&tiny(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        // larger weights so the checks are not dominated by near-identity blocks
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for t in p.tensors_mut() {
            let noise = Tensor::<f64>::randn(t.shape(), 0.3, &mut rng);
            t.data_mut().iter_mut().zip(noise.data()).for_each(|(x, n)| *x += n);
        }
        p
    }

    #[test]
    fn shapes_and_minimal_context() {
        let p = params(0);
        let (u, y, q) = inputs(3, 1, 10, 1);
        let z = encode(&p, &u, &y).unwrap();
        assert_eq!(z.tensor().shape(), &[3, 1, 8]);
        let out = decode(&p, &z, &q).unwrap();
        assert_eq!(out.shape(), &[3, 10, 1]);
        assert!(out.all_finite());
    }

    #[test]
    fn capacity_is_enforced() {
        let p = params(0);
        let (u, y, q) = inputs(1, 13, 4, 2);
        assert!(forward(&p, &u, &y, &q).is_err());
        let (u, y, q) = inputs(1, 12, 11, 2);
        assert!(forward(&p, &u, &y, &q).is_err());
        let (u, _, q) = inputs(1, 5, 4, 2);
        let (_, y, _) = inputs(1, 6, 4, 2);
        assert!(forward(&p, &u, &y, &q).is_err());
    }

    #[test]
    fn decoder_is_causal_bit_for_bit() {
        let p = params(3);
        let (u, y, q) = inputs(2, 7, 10, 4);
        let base = forward(&p, &u, &y, &q).unwrap();
        for k in 0..10 {
            let mut q2 = q.clone();
            for b in 0..2 {
                for j in k..10 {
                    q2.data_mut()[b * 10 + j] += 1.5;
                }
            }
            let out = forward(&p, &u, &y, &q2).unwrap();
            for b in 0..2 {
                assert_eq!(&out.data()[b * 10..b * 10 + k], &base.data()[b * 10..b * 10 + k]);
                assert_ne!(out.data()[b * 10 + k], base.data()[b * 10 + k]);
            }
        }
    }

    #[test]
    fn zeroed_memory_matches_decoder_only_path() {
        let p = params(5);
        let (_, _, q) = inputs(2, 3, 9, 6);
        let mut reference = Session::inference(&p);
        let qv = reference.input(q.clone());
        let detached = reference.decode_detached(qv).unwrap();
        let detached = reference.graph.value(detached).clone();
        for m in [1, 4, 12] {
            let (u, y, _) = inputs(2, m, 9, 7 + m as u64);
            let zero = encode(&p, &u, &y).unwrap().zeroed();
            let out = decode(&p, &zero, &q).unwrap();
            for (a, b) in out.data().iter().zip(detached.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn inference_and_training_sessions_agree() {
        let p = params(8);
        let (u, y, q) = inputs(2, 5, 6, 9);
        let a = forward(&p, &u, &y, &q).unwrap();
        let mut s = Session::new(&p);
        let (uv, yv, qv) = (s.input(u), s.input(y), s.input(q));
        let out = s.forward(uv, yv, qv).unwrap();
        assert_eq!(s.graph.value(out), &a);
    }

    #[test]
    fn untrained_full_scale_output_is_finite() {
        let cfg = TransformerConfig { n_ctx_enc: 40, n_ctx_dec: 20, ..TransformerConfig::desk() };
        let p = TransformerParams::<f32>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = Tensor::<f32>::randn(&[2, 40, 1], 100.0, &mut rng);
        let q = Tensor::<f32>::randn(&[2, 20, 1], 100.0, &mut rng);
        let out = forward(&p, &u, &u, &q).unwrap();
        assert!(out.all_finite());
    }

    #[test]
    fn dropout_changes_output_only_when_enabled() {
        let cfg = TransformerConfig { dropout: 0.2, ..tiny() };
        let p = TransformerParams::<f64>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let (u, y, q) = inputs(1, 4, 5, 1);
        let run = |seed: Option<u64>| {
            let mut s = Session::inference(&p);
            if let Some(seed) = seed {
                s = s.with_dropout(ChaCha8Rng::seed_from_u64(seed));
            }
            let (uv, yv, qv) = (s.input(u.clone()), s.input(y.clone()), s.input(q.clone()));
            let o = s.forward(uv, yv, qv).unwrap();
            s.graph.value(o).clone()
        };
        assert_eq!(run(None), forward(&p, &u, &y, &q).unwrap());
        assert_eq!(run(Some(3)), run(Some(3)));
        assert_ne!(run(Some(3)), run(None));
    }
}
