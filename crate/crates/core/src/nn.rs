//! Network blocks built on the tape: affine layers, MLPs, the LSTM cell,
//! multi-head self-attention and a pre-norm transformer encoder.

use rand::Rng;

use crate::error::{shape_err, Result};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `y = W x + b` with `W: [out, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let weight = store.add_uniform(format!("{name}.w"), &[out_dim, in_dim], in_dim, rng)?;
        let bias = store.add_uniform(format!("{name}.b"), &[out_dim], in_dim, rng)?;
        Ok(Self {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        tape.affine(x, w, Some(b))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    /// Multiply-add FLOPs for one input row: `2 * in * out`.
    pub fn flops(&self) -> u64 {
        2 * (self.in_dim * self.out_dim) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

/// Stack of linear layers with an activation between consecutive layers
/// and none after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `dims = [in, hidden.., out]` builds `dims.len() - 1` layers.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return shape_err("mlp", format!("need at least two dims, got {dims:?}"));
        }
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers, activation)
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return shape_err("mlp", "no layers");
        }
        for w in layers.windows(2) {
            if w[0].out_dim != w[1].in_dim {
                return shape_err("mlp", format!("layer dims {} -> {}", w[0].out_dim, w[1].in_dim));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h)?;
            if i + 1 < self.layers.len() {
                h = self.activation.apply(tape, h)?;
            }
        }
        Ok(h)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }

    /// Affine FLOPs plus one per hidden activation.
    pub fn flops(&self) -> u64 {
        let affine: u64 = self.layers.iter().map(Linear::flops).sum();
        let act: u64 = self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.out_dim as u64)
            .sum();
        affine + act
    }
}

/// LSTM cell with fused gate weights `[4H, in + H]` in input, forget,
/// cell, output order.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmCell {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        let width = input_dim + hidden_dim;
        let weight = store.add_uniform(format!("{name}.w"), &[4 * hidden_dim, width], hidden_dim, rng)?;
        let bias = store.add_uniform(format!("{name}.b"), &[4 * hidden_dim], hidden_dim, rng)?;
        Ok(Self {
            weight,
            bias,
            input_dim,
            hidden_dim,
        })
    }

    /// One step; returns `(h, c)`.
    pub fn step(&self, tape: &mut Tape, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        if tape.shape(x) != [self.input_dim] || tape.shape(h_prev) != [hd] || tape.shape(c_prev) != [hd] {
            return shape_err(
                "lstm_step",
                format!(
                    "x {:?} h {:?} c {:?} for in {} hidden {hd}",
                    tape.shape(x),
                    tape.shape(h_prev),
                    tape.shape(c_prev),
                    self.input_dim
                ),
            );
        }
        let xh = tape.concat(&[x, h_prev])?;
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let z = tape.affine(xh, w, Some(b))?;
        let zi = tape.slice(z, 0, hd)?;
        let zf = tape.slice(z, hd, hd)?;
        let zg = tape.slice(z, 2 * hd, hd)?;
        let zo = tape.slice(z, 3 * hd, hd)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let fc = tape.mul(f, c_prev)?;
        let ig = tape.mul(i, g)?;
        let c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        Ok((h, c))
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.weight, self.bias]
    }

    /// `8 (in + H) H + 24 H` per step.
    pub fn flops(&self) -> u64 {
        let (i, h) = (self.input_dim as u64, self.hidden_dim as u64);
        8 * (i + h) * h + 24 * h
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: store.add_filled(format!("{name}.g"), &[dim], 1.0)?,
            bias: store.add_filled(format!("{name}.b"), &[dim], 0.0)?,
            dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b, LAYER_NORM_EPS)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.gain, self.bias]
    }
}

/// Scaled dot-product self-attention over the rows of `[n, d]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub model_dim: usize,
}

/// Output rows plus the per-head `[n, n]` attention weights.
pub struct Attended {
    pub out: Var,
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, model_dim: usize, heads: usize, rng: &mut R) -> Result<Self> {
        if heads == 0 || model_dim % heads != 0 {
            return shape_err("mhsa", format!("model_dim {model_dim} not divisible by {heads} heads"));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), model_dim, model_dim, rng)?,
            key: Linear::new(store, &format!("{name}.k"), model_dim, model_dim, rng)?,
            value: Linear::new(store, &format!("{name}.v"), model_dim, model_dim, rng)?,
            output: Linear::new(store, &format!("{name}.o"), model_dim, model_dim, rng)?,
            heads,
            model_dim,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Attended> {
        let s = tape.shape(x);
        if s.len() != 2 || s[1] != self.model_dim || s[0] == 0 {
            return shape_err("mhsa", format!("input {s:?} for model dim {}", self.model_dim));
        }
        let dh = self.model_dim / self.heads;
        let q = self.query.forward(tape, x)?;
        let k = self.key.forward(tape, x)?;
        let v = self.value.forward(tape, x)?;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale)?;
            let a = tape.softmax(scores)?;
            outs.push(tape.matmul(a, vh)?);
            weights.push(a);
        }
        let cat = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs)? };
        let out = self.output.forward(tape, cat)?;
        Ok(Attended { out, weights })
    }

    pub fn params(&self) -> Vec<ParamId> {
        [&self.query, &self.key, &self.value, &self.output]
            .iter()
            .flat_map(|l| l.params())
            .collect()
    }

    /// Projections `4 * 2 n d^2`, scores and weighted sums `2 * 2 n^2 d`,
    /// softmax `n^2` per head.
    pub fn flops(&self, n: usize) -> u64 {
        let (n, d, h) = (n as u64, self.model_dim as u64, self.heads as u64);
        8 * n * d * d + 4 * n * n * d + n * n * h
    }
}

/// Pre-norm encoder block:
/// `x + MHSA(LN(x))`, then `x + FFN(LN(x))` with a ReLU feed-forward.
#[derive(Debug, Clone)]
pub struct EncoderBlock {
    pub norm1: LayerNorm,
    pub attention: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
}

impl EncoderBlock {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, model_dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            norm1: LayerNorm::new(store, &format!("{name}.ln1"), model_dim)?,
            attention: MultiHeadAttention::new(store, &format!("{name}.attn"), model_dim, heads, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.ln2"), model_dim)?,
            ff1: Linear::new(store, &format!("{name}.ff1"), model_dim, ff_dim, rng)?,
            ff2: Linear::new(store, &format!("{name}.ff2"), ff_dim, model_dim, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n1 = self.norm1.forward(tape, x)?;
        let att = self.attention.forward(tape, n1)?;
        let x1 = tape.add(x, att.out)?;
        let n2 = self.norm2.forward(tape, x1)?;
        let f = self.ff1.forward(tape, n2)?;
        let f = tape.relu(f)?;
        let f = self.ff2.forward(tape, f)?;
        tape.add(x1, f)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.norm1.params();
        p.extend(self.attention.params());
        p.extend(self.norm2.params());
        p.extend(self.ff1.params());
        p.extend(self.ff2.params());
        p
    }

    pub fn flops(&self, n: usize) -> u64 {
        let nn = n as u64;
        let d = self.attention.model_dim as u64;
        let ff = self.ff1.out_dim as u64;
        // layer norms ~5 per element, two residual adds, ReLU
        self.attention.flops(n) + nn * (self.ff1.flops() + self.ff2.flops()) + nn * ff + 2 * 5 * nn * d + 2 * nn * d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TransformerConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    /// Rows of the learned position table; 0 disables position embeddings.
    pub max_positions: usize,
}

/// Stack of encoder blocks with optional learned position embeddings
/// and a final layer norm.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub blocks: Vec<EncoderBlock>,
    pub final_norm: LayerNorm,
    pub positions: Option<ParamId>,
    pub config: TransformerConfig,
}

impl TransformerEncoder {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, config: TransformerConfig, rng: &mut R) -> Result<Self> {
        if config.heads == 0 || config.model_dim % config.heads != 0 {
            return shape_err(
                "transformer",
                format!("model_dim {} not divisible by {} heads", config.model_dim, config.heads),
            );
        }
        let blocks = (0..config.layers)
            .map(|i| EncoderBlock::new(store, &format!("{name}.b{i}"), config.model_dim, config.heads, config.ff_dim, rng))
            .collect::<Result<Vec<_>>>()?;
        let final_norm = LayerNorm::new(store, &format!("{name}.ln_f"), config.model_dim)?;
        let positions = if config.max_positions > 0 {
            // small init so position does not swamp content at the start
            let n = config.max_positions * config.model_dim;
            let values = (0..n).map(|_| rng.random_range(-0.02..=0.02)).collect();
            Some(store.add(
                format!("{name}.pos"),
                crate::tensor::Tensor::new(vec![config.max_positions, config.model_dim], values)?,
            )?)
        } else {
            None
        };
        Ok(Self {
            blocks,
            final_norm,
            positions,
            config,
        })
    }

    /// `units: [n, model_dim] -> [n, model_dim]`.
    pub fn forward(&self, tape: &mut Tape, units: Var) -> Result<Var> {
        let s = tape.shape(units).to_vec();
        if s.len() != 2 || s[1] != self.config.model_dim || s[0] == 0 {
            return shape_err("transformer", format!("input {s:?} for model dim {}", self.config.model_dim));
        }
        let n = s[0];
        let mut x = units;
        if let Some(pos) = self.positions {
            if n > self.config.max_positions {
                return shape_err(
                    "transformer",
                    format!("{n} units exceed {} positions", self.config.max_positions),
                );
            }
            let table = tape.param(pos);
            let flat = tape.reshape(table, &[self.config.max_positions * self.config.model_dim])?;
            let first = tape.slice(flat, 0, n * self.config.model_dim)?;
            let first = tape.reshape(first, &[n, self.config.model_dim])?;
            x = tape.add(x, first)?;
        }
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        self.final_norm.forward(tape, x)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.blocks.iter().flat_map(EncoderBlock::params).collect();
        p.extend(self.final_norm.params());
        p.extend(self.positions);
        p
    }

    pub fn flops(&self, n: usize) -> u64 {
        let d = self.config.model_dim as u64;
        let pos = if self.positions.is_some() { n as u64 * d } else { 0 };
        self.blocks.iter().map(|b| b.flops(n)).sum::<u64>() + 5 * n as u64 * d + pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero(store: &mut ParamStore, ids: &[ParamId]) {
        for &id in ids {
            store.get_mut(id).values_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn linear_degenerate_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 3, 3, &mut rng).unwrap();
        zero(&mut store, &[l.weight]);
        store.get_mut(l.bias).values_mut().copy_from_slice(&[1.0, 2.0, 3.0]);
        let mut t = Tape::inference(&store);
        let x = t.constant_vec(vec![5.0, -1.0, 0.5]);
        let y = l.forward(&mut t, x).unwrap();
        assert_eq!(t.value(y), &[1.0, 2.0, 3.0]);

        let mut store = ParamStore::new();
        let l = Linear::new(&mut store, "l", 3, 3, &mut rng).unwrap();
        store.get_mut(l.weight).values_mut().copy_from_slice(&[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        zero(&mut store, &[l.bias]);
        let mut t = Tape::inference(&store);
        let x = t.constant_vec(vec![5.0, -1.0, 0.5]);
        let y = l.forward(&mut t, x).unwrap();
        assert_eq!(t.value(y), &[5.0, -1.0, 0.5]);
        let bad = t.constant_vec(vec![1.0; 2]);
        assert!(l.forward(&mut t, bad).is_err());
    }

    #[test]
    fn lstm_zero_weights_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "c", 3, 2, &mut rng).unwrap();
        zero(&mut store, &cell.params());
        let mut t = Tape::inference(&store);
        let x = t.constant_vec(vec![0.3, -0.2, 0.9]);
        let h0 = t.constant_vec(vec![0.0; 2]);
        let (h, c) = cell.step(&mut t, x, h0, h0).unwrap();
        assert_eq!(t.value(h), &[0.0, 0.0]);
        assert_eq!(t.value(c), &[0.0, 0.0]);

        let cp = t.constant_vec(vec![0.8, -2.0]);
        let (h, c) = cell.step(&mut t, x, h0, cp).unwrap();
        for (k, &cv) in [0.8f64, -2.0].iter().enumerate() {
            assert!((t.value(c)[k] - 0.5 * cv).abs() < 1e-15);
            assert!((t.value(h)[k] - 0.5 * (0.5 * cv).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_rejects_mismatched_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let a = Linear::new(&mut store, "a", 2, 3, &mut rng).unwrap();
        let b = Linear::new(&mut store, "b", 4, 1, &mut rng).unwrap();
        assert!(Mlp::from_layers(vec![a, b], Activation::Relu).is_err());
        assert!(MultiHeadAttention::new(&mut store, "m", 10, 4, &mut rng).is_err());
    }

    #[test]
    fn single_token_attention_is_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mha = MultiHeadAttention::new(&mut store, "m", 8, 4, &mut rng).unwrap();
        let mut t = Tape::inference(&store);
        let x = t.constant(Tensor::matrix(1, 8, (0..8).map(|i| i as f64 * 0.1).collect()).unwrap());
        let att = mha.forward(&mut t, x).unwrap();
        for w in &att.weights {
            assert_eq!(t.value(*w), &[1.0]);
        }
        let v = mha.value.forward(&mut t, x).unwrap();
        let expect = mha.output.forward(&mut t, v).unwrap();
        assert_eq!(t.value(att.out), t.value(expect));
    }
}
