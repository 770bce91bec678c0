use rand::Rng;

use super::{sinusoidal_table, TransformerConfig, INIT_STD};
use crate::autodiff::{Real, Tensor};
use crate::error::{Error, Result};

/// Role of a learned tensor; decides initialization and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
    /// Output projection feeding a residual stream (scaled-down init).
    pub residual_out: bool,
}

impl ParamSpec {
    /// Matmul weights are decayed; biases and norm parameters are not.
    pub fn decays(&self) -> bool {
        self.kind == ParamKind::Weight
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Linear {
    pub w: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Norm {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Mlp {
    pub fc: Linear,
    pub proj: Linear,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct EncoderLayer {
    pub ln1: Norm,
    pub attn: Attention,
    pub ln2: Norm,
    pub mlp: Mlp,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct DecoderLayer {
    pub ln1: Norm,
    pub self_attn: Attention,
    pub ln2: Norm,
    pub cross_attn: Attention,
    pub ln3: Norm,
    pub mlp: Mlp,
}

/// Index of every learned tensor, built once per config.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub specs: Vec<ParamSpec>,
    pub enc_in: Linear,
    pub enc_layers: Vec<EncoderLayer>,
    pub enc_norm: Norm,
    pub dec_in: Linear,
    pub dec_layers: Vec<DecoderLayer>,
    pub dec_norm: Norm,
    pub head: Linear,
}

struct Builder {
    specs: Vec<ParamSpec>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, kind: ParamKind, residual_out: bool) -> usize {
        self.specs.push(ParamSpec { name, shape, kind, residual_out });
        self.specs.len() - 1
    }

    fn linear(&mut self, prefix: &str, i: usize, o: usize, residual_out: bool) -> Linear {
        Linear {
            w: self.push(format!("{prefix}.weight"), vec![i, o], ParamKind::Weight, residual_out),
            b: self.push(format!("{prefix}.bias"), vec![o], ParamKind::Bias, false),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Norm {
        Norm {
            gain: self.push(format!("{prefix}.gain"), vec![d], ParamKind::NormGain, false),
            bias: self.push(format!("{prefix}.bias"), vec![d], ParamKind::NormBias, false),
        }
    }

    fn attention(&mut self, prefix: &str, d: usize) -> Attention {
        Attention {
            q: self.linear(&format!("{prefix}.q"), d, d, false),
            k: self.linear(&format!("{prefix}.k"), d, d, false),
            v: self.linear(&format!("{prefix}.v"), d, d, false),
            o: self.linear(&format!("{prefix}.o"), d, d, true),
        }
    }

    fn mlp(&mut self, prefix: &str, d: usize, ff: usize) -> Mlp {
        Mlp { fc: self.linear(&format!("{prefix}.fc"), d, ff, false), proj: self.linear(&format!("{prefix}.proj"), ff, d, true) }
    }
}

impl Layout {
    pub fn new(cfg: &TransformerConfig) -> Self {
        let (d, ff) = (cfg.d_model, cfg.d_ff);
        let mut b = Builder { specs: Vec::new() };
        let enc_in = b.linear("encoder.in_proj", cfg.n_u + cfg.n_y, d, false);
        let enc_layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("encoder.layers.{i}");
                EncoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    attn: b.attention(&format!("{p}.self_attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    mlp: b.mlp(&format!("{p}.mlp"), d, ff),
                }
            })
            .collect();
        let enc_norm = b.norm("encoder.norm", d);
        let dec_in = b.linear("decoder.in_proj", cfg.n_u, d, false);
        let dec_layers = (0..cfg.n_layers)
            .map(|i| {
                let p = format!("decoder.layers.{i}");
                DecoderLayer {
                    ln1: b.norm(&format!("{p}.ln1"), d),
                    self_attn: b.attention(&format!("{p}.self_attn"), d),
                    ln2: b.norm(&format!("{p}.ln2"), d),
                    cross_attn: b.attention(&format!("{p}.cross_attn"), d),
                    ln3: b.norm(&format!("{p}.ln3"), d),
                    mlp: b.mlp(&format!("{p}.mlp"), d, ff),
                }
            })
            .collect();
        let dec_norm = b.norm("decoder.norm", d);
        let head = b.linear("head", d, cfg.n_y, false);
        Self { specs: b.specs, enc_in, enc_layers, enc_norm, dec_in, dec_layers, dec_norm, head }
    }
}

/// Names of the fixed positional tables in the checkpoint container.
pub const POS_ENCODER: &str = "pos.encoder";
pub const POS_DECODER: &str = "pos.decoder";

/// Every learned tensor of the meta-model plus its fixed positional tables.
#[derive(Clone, Debug)]
pub struct TransformerParams<T> {
    config: TransformerConfig,
    pub(crate) layout: Layout,
    tensors: Vec<Tensor<T>>,
    pos_enc: Tensor<T>,
    pos_dec: Tensor<T>,
}

impl<T: Real> PartialEq for TransformerParams<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.tensors == other.tensors
            && self.pos_enc == other.pos_enc
            && self.pos_dec == other.pos_dec
    }
}

fn table<T: Real>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_f64(&[len, d], &sinusoidal_table(len, d)).expect("table shape")
}

impl<T: Real> TransformerParams<T> {
    /// Normal(0, 0.02) weights, residual output projections further scaled
    /// by `1/√(2·n_layers)`, zero biases, unit norm gains.
    pub fn init<R: Rng + ?Sized>(config: &TransformerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let resid = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
        let tensors = layout
            .specs
            .iter()
            .map(|s| match s.kind {
                ParamKind::Weight => Tensor::randn(&s.shape, if s.residual_out { resid } else { INIT_STD }, rng),
                ParamKind::Bias | ParamKind::NormBias => Tensor::zeros(&s.shape),
                ParamKind::NormGain => Tensor::full(&s.shape, T::one()),
            })
            .collect();
        Ok(Self {
            layout,
            tensors,
            pos_enc: table(config.n_ctx_enc, config.d_model),
            pos_dec: table(config.n_ctx_dec, config.d_model),
            config: config.clone(),
        })
    }

    /// Assembles parameters from named tensors. Positional tables are always
    /// regenerated from the config.
    pub fn from_named(config: &TransformerConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut by_name: std::collections::HashMap<String, Tensor<T>> =
            named.into_iter().filter(|(n, _)| n != POS_ENCODER && n != POS_DECODER).collect();
        let mut tensors = Vec::with_capacity(layout.specs.len());
        for spec in &layout.specs {
            let t = by_name.remove(&spec.name).ok_or_else(|| Error::Config(format!("missing tensor {}", spec.name)))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Config(format!("tensor {} has shape {:?}, expected {:?}", spec.name, t.shape(), spec.shape)));
            }
            tensors.push(t);
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Config(format!("unexpected tensor {extra}")));
        }
        Ok(Self {
            layout,
            tensors,
            pos_enc: table(config.n_ctx_enc, config.d_model),
            pos_dec: table(config.n_ctx_dec, config.d_model),
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.layout.specs
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.layout.specs.iter().position(|s| s.name == name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.layout.specs.iter().position(|s| s.name == name).map(move |i| &mut self.tensors[i])
    }

    /// Learned tensors, then the two positional tables, by name.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<T>)> {
        self.layout
            .specs
            .iter()
            .map(|s| s.name.as_str())
            .zip(&self.tensors)
            .chain([(POS_ENCODER, &self.pos_enc), (POS_DECODER, &self.pos_dec)])
            .collect()
    }

    pub fn pos_encoder(&self) -> &Tensor<T> {
        &self.pos_enc
    }

    pub fn pos_decoder(&self) -> &Tensor<T> {
        &self.pos_dec
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Copies every learned weight and regenerates the positional tables at
    /// the new capacities.
    pub fn with_capacity(&self, n_ctx_enc: usize, n_ctx_dec: usize) -> Result<Self> {
        let config = self.config.with_capacity(n_ctx_enc, n_ctx_dec);
        config.validate()?;
        Ok(Self {
            layout: self.layout.clone(),
            tensors: self.tensors.clone(),
            pos_enc: table(n_ctx_enc, config.d_model),
            pos_dec: table(n_ctx_dec, config.d_model),
            config,
        })
    }

    pub fn cast<U: Real>(&self) -> TransformerParams<U> {
        TransformerParams {
            config: self.config.clone(),
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            pos_enc: table(self.config.n_ctx_enc, self.config.d_model),
            pos_dec: table(self.config.n_ctx_dec, self.config.d_model),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }
}
