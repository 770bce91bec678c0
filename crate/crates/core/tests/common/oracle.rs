//! Loop-based reference implementation of the meta-model, one sequence at a
//! time, reading weights by name.
#![allow(dead_code)]

use sysid_core::model::TransformerParams;

pub type Mat = Vec<Vec<f64>>;

pub struct Oracle<'a> {
    pub p: &'a TransformerParams<f64>,
}

impl<'a> Oracle<'a> {
    fn t(&self, name: &str) -> &'a [f64] {
        self.p.get(name).unwrap_or_else(|| panic!("no tensor {name}")).data()
    }

    fn linear(&self, x: &Mat, prefix: &str) -> Mat {
        let w = self.t(&format!("{prefix}.weight"));
        let b = self.t(&format!("{prefix}.bias"));
        let o = b.len();
        x.iter()
            .map(|row| {
                (0..o)
                    .map(|j| b[j] + row.iter().enumerate().map(|(i, xi)| xi * w[i * o + j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn norm(&self, x: &Mat, prefix: &str) -> Mat {
        let g = self.t(&format!("{prefix}.gain"));
        let b = self.t(&format!("{prefix}.bias"));
        x.iter()
            .map(|row| {
                let d = row.len() as f64;
                let mean = row.iter().sum::<f64>() / d;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d;
                row.iter().enumerate().map(|(j, v)| (v - mean) / (var + 1e-5).sqrt() * g[j] + b[j]).collect()
            })
            .collect()
    }

    fn attention(&self, xq: &Mat, xkv: &Mat, prefix: &str, causal: bool) -> Mat {
        let cfg = self.p.config();
        let (h, dh) = (cfg.n_heads, cfg.d_head());
        let q = self.linear(xq, &format!("{prefix}.q"));
        let k = self.linear(xkv, &format!("{prefix}.k"));
        let v = self.linear(xkv, &format!("{prefix}.v"));
        let mut out = vec![vec![0.0; cfg.d_model]; xq.len()];
        for head in 0..h {
            let cols = head * dh..(head + 1) * dh;
            for i in 0..xq.len() {
                let allowed = if causal { i + 1 } else { xkv.len() };
                let scores: Vec<f64> = (0..allowed)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (dh as f64).sqrt())
                    .collect();
                let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    out[i][c] = (0..allowed).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        self.linear(&out, &format!("{prefix}.o"))
    }

    fn mlp(&self, x: &Mat, prefix: &str) -> Mat {
        let h = self.linear(x, &format!("{prefix}.fc"));
        let gelu = |x: f64| 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
        let h: Mat = h.iter().map(|r| r.iter().map(|&v| gelu(v)).collect()).collect();
        self.linear(&h, &format!("{prefix}.proj"))
    }

    fn add(a: &Mat, b: &Mat) -> Mat {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    fn positions(x: &Mat) -> Mat {
        let d = x[0].len();
        x.iter()
            .enumerate()
            .map(|(pos, row)| {
                row.iter()
                    .enumerate()
                    .map(|(c, v)| {
                        let i = c - c % 2;
                        let angle = pos as f64 / 10_000f64.powf(i as f64 / d as f64);
                        v + if c % 2 == 0 { angle.sin() } else { angle.cos() }
                    })
                    .collect()
            })
            .collect()
    }

    /// `u`, `y`: `[m][channels]` → ζ `[m][d_model]`.
    pub fn encode(&self, u: &Mat, y: &Mat) -> Mat {
        let inp: Mat = u.iter().zip(y).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
        let mut x = Self::positions(&self.linear(&inp, "encoder.in_proj"));
        for l in 0..self.p.config().n_layers {
            let p = format!("encoder.layers.{l}");
            let h = self.norm(&x, &format!("{p}.ln1"));
            x = Self::add(&x, &self.attention(&h, &h, &format!("{p}.self_attn"), false));
            let h = self.norm(&x, &format!("{p}.ln2"));
            x = Self::add(&x, &self.mlp(&h, &format!("{p}.mlp")));
        }
        self.norm(&x, "encoder.norm")
    }

    /// ζ `[m][d_model]`, `u_query` `[n][n_u]` → ŷ `[n][n_y]`.
    pub fn decode(&self, zeta: &Mat, uq: &Mat) -> Mat {
        let mut x = Self::positions(&self.linear(uq, "decoder.in_proj"));
        for l in 0..self.p.config().n_layers {
            let p = format!("decoder.layers.{l}");
            let h = self.norm(&x, &format!("{p}.ln1"));
            x = Self::add(&x, &self.attention(&h, &h, &format!("{p}.self_attn"), true));
            let h = self.norm(&x, &format!("{p}.ln2"));
            x = Self::add(&x, &self.attention(&h, zeta, &format!("{p}.cross_attn"), false));
            let h = self.norm(&x, &format!("{p}.ln3"));
            x = Self::add(&x, &self.mlp(&h, &format!("{p}.mlp")));
        }
        self.linear(&self.norm(&x, "decoder.norm"), "head")
    }
}

/// Splits batch element `i` of a `[b, t, c]` buffer into rows.
pub fn rows(data: &[f64], shape: &[usize], i: usize) -> Mat {
    let (t, c) = (shape[1], shape[2]);
    (0..t).map(|s| data[(i * t + s) * c..(i * t + s + 1) * c].to_vec()).collect()
}
