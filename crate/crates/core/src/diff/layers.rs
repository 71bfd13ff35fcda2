use ndarray::Array2;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use crate::error::{Error, Result};

/// `y = x W + b` applied row-wise; `W` is `in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, bias: bool) -> Self {
        let weight = store.add(format!("{name}.weight"), (input, output), Init::FanIn(input));
        let bias = bias.then(|| store.add(format!("{name}.bias"), (1, output), Init::Zeros));
        Self {
            weight,
            bias,
            input,
            output,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.weight);
        let y = g.matmul(x, w);
        match self.bias {
            Some(b) => {
                let b = g.param(b);
                g.add_row(y, b)
            }
            None => y,
        }
    }

    /// Applies the map to a single vector outside any graph.
    pub fn apply(&self, store: &ParamStore, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.input {
            return Err(Error::Shape(format!(
                "linear expects {} inputs, got {}",
                self.input,
                input.len()
            )));
        }
        let x = Array2::from_shape_vec((1, self.input), input.to_vec()).expect("row shape");
        let mut y = x.dot(store.value(self.weight));
        if let Some(b) = self.bias {
            y += store.value(b);
        }
        Ok(y.into_raw_vec_and_offset().0)
    }
}

/// Layer normalisation with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), (1, width), Init::Ones),
            shift: store.add(format!("{name}.shift"), (1, width), Init::Zeros),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let n = g.layer_norm(x);
        let gain = g.param(self.gain);
        let shift = g.param(self.shift);
        let y = g.mul_row(n, gain);
        g.add_row(y, shift)
    }
}

/// Feed-forward stack with GELU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `hidden` lists the widths of the hidden layers in order.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: &[usize], output: usize) -> Self {
        let mut widths = vec![input];
        widths.extend_from_slice(hidden);
        widths.push(output);
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers }
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Var {
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x);
            if i < last {
                x = g.gelu(x);
            }
        }
        x
    }
}

/// Pre-norm transformer block: multi-head scaled dot-product self-attention
/// and a GELU feed-forward, each wrapped in a residual connection. No
/// positional information enters, so the block is permutation-equivariant
/// over its input rows.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub width: usize,
    pub heads: usize,
    norm_attn: LayerNorm,
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
    norm_ff: LayerNorm,
    ff: Mlp,
}

impl AttentionBlock {
    pub fn new(store: &mut ParamStore, name: &str, width: usize, heads: usize, ff_hidden: usize) -> Result<Self> {
        if heads == 0 || width % heads != 0 {
            return Err(Error::Config(format!(
                "attention width {width} not divisible into {heads} heads"
            )));
        }
        Ok(Self {
            width,
            heads,
            norm_attn: LayerNorm::new(store, &format!("{name}.norm_attn"), width),
            query: Linear::new(store, &format!("{name}.query"), width, width, true),
            key: Linear::new(store, &format!("{name}.key"), width, width, true),
            value: Linear::new(store, &format!("{name}.value"), width, width, true),
            out: Linear::new(store, &format!("{name}.out"), width, width, true),
            norm_ff: LayerNorm::new(store, &format!("{name}.norm_ff"), width),
            ff: Mlp::new(store, &format!("{name}.ff"), width, &[ff_hidden], width),
        })
    }

    /// `tokens` is `n x width` with `n >= 1`.
    pub fn forward(&self, g: &mut Graph, tokens: Var) -> Result<Var> {
        let (n, w) = g.shape(tokens);
        if n == 0 {
            return Err(Error::Shape("attention over zero tokens".into()));
        }
        if w != self.width {
            return Err(Error::Shape(format!("attention expects width {}, got {w}", self.width)));
        }
        let h = self.norm_attn.forward(g, tokens);
        let q = self.query.forward(g, h);
        let k = self.key.forward(g, h);
        let v = self.value.forward(g, h);
        let head_dim = self.width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let (a, b) = (head * head_dim, (head + 1) * head_dim);
            let qh = g.slice_cols(q, a, b);
            let kh = g.slice_cols(k, a, b);
            let vh = g.slice_cols(v, a, b);
            let kt = g.transpose(kh);
            let scores = g.matmul(qh, kt);
            let scores = g.scale(scores, scale);
            let attn = g.softmax_rows(scores);
            outs.push(g.matmul(attn, vh));
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat_cols(&outs) };
        let attended = self.out.forward(g, merged);
        let x = g.add(tokens, attended);
        let h = self.norm_ff.forward(g, x);
        let f = self.ff.forward(g, h);
        Ok(g.add(x, f))
    }
}

/// Fixed sinusoidal position codes, `n x width`.
pub fn sinusoidal_positions(n: usize, width: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, width), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10_000f64.powf(2.0 * pair / width as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
