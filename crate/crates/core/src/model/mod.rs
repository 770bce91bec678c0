//! Encoder-decoder Transformer over real-valued input/output sequences.
//!
//! The encoder reads the context `(u_1..m, y_1..m)` and produces a memory
//! sequence; the decoder reads the query input `u_{m+1..N}` under a causal
//! mask, cross-attends to the memory and emits `ŷ_{m+1..N}` in one pass.
//! Blocks are pre-norm with GELU MLPs; positional encodings are fixed
//! sinusoidal tables added after the input projections.

mod forward;
mod params;

pub use forward::{decode, encode, forward, EncoderMemory, Session};
pub use params::{ParamKind, ParamSpec, TransformerParams, POS_DECODER, POS_ENCODER};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Longest context the encoder accepts.
    pub n_ctx_enc: usize,
    /// Longest query the decoder accepts.
    pub n_ctx_dec: usize,
    #[serde(default = "one")]
    pub n_u: usize,
    #[serde(default = "one")]
    pub n_y: usize,
    pub d_ff: usize,
    #[serde(default)]
    pub dropout: f64,
}

fn one() -> usize {
    1
}

impl TransformerConfig {
    /// Laptop-scale architecture: 4 layers, width 64, 4 heads, m=100, n=50.
    pub fn desk() -> Self {
        Self { n_layers: 4, d_model: 64, n_heads: 4, n_ctx_enc: 100, n_ctx_dec: 50, n_u: 1, n_y: 1, d_ff: 256, dropout: 0.0 }
    }

    /// The large WH meta-model: 12 layers, width 128, 4 heads, m=400, n=100.
    pub fn full_scale() -> Self {
        Self { n_layers: 12, d_model: 128, n_heads: 4, n_ctx_enc: 400, n_ctx_dec: 100, n_u: 1, n_y: 1, d_ff: 512, dropout: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad(format!("layer/width/head counts must be positive: {self:?}"));
        }
        if self.d_model % self.n_heads != 0 {
            return bad(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.n_ctx_enc == 0 || self.n_ctx_dec == 0 {
            return bad("context capacities must be >= 1".into());
        }
        if self.n_u == 0 || self.n_y == 0 {
            return bad("channel counts must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form count of learned weights.
    pub fn param_count(&self) -> usize {
        let (d, ff) = (self.d_model, self.d_ff);
        let linear = |i: usize, o: usize| i * o + o;
        let norm = 2 * d;
        let attn = 4 * linear(d, d);
        let mlp = linear(d, ff) + linear(ff, d);
        let encoder = linear(self.n_u + self.n_y, d) + self.n_layers * (2 * norm + attn + mlp) + norm;
        let decoder = linear(self.n_u, d) + self.n_layers * (3 * norm + 2 * attn + mlp) + norm;
        encoder + decoder + linear(d, self.n_y)
    }

    /// Same architecture with different positional capacities.
    pub fn with_capacity(&self, n_ctx_enc: usize, n_ctx_dec: usize) -> Self {
        Self { n_ctx_enc, n_ctx_dec, ..self.clone() }
    }

    /// True when two configs describe the same learned tensors.
    pub fn same_architecture(&self, other: &Self) -> bool {
        self.with_capacity(0, 0) == other.with_capacity(0, 0)
    }
}

/// Sinusoidal table `[len, d]`: `sin(pos/10000^(2i/d))` at even columns and
/// the matching cosine at odd columns.
pub fn sinusoidal_table(len: usize, d: usize) -> Vec<f64> {
    let mut table = vec![0.0; len * d];
    for pos in 0..len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10_000f64.powf(i as f64 / d as f64);
            table[pos * d + i] = angle.sin();
            if i + 1 < d {
                table[pos * d + i + 1] = angle.cos();
            }
        }
    }
    table
}
