//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every primitive applied to tracked values. Calling
//! [`Tape::backward`] on a scalar walks the records in reverse order and
//! returns a [`Gradients`] holding d(loss)/d(x) for every parameter and
//! gradient-requiring leaf that the loss depends on.
//!
//! Values that do not depend on anything trainable are stored as constants
//! and cost nothing on the way back.

use std::collections::HashMap;

use crate::error::{shape_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{check_finite, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

enum Op {
    Const,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Max(Var, Var),
    Min(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Affine { x: Var, w: Var, b: Option<Var> },
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    MaxRows(Var, Vec<usize>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    StackRows(Vec<Var>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Gather(Var, Vec<usize>),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
    Reshape(Var),
}

struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Elementwise unary primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Unary {
    Tanh,
    Sigmoid,
    Relu,
    Exp,
    Log,
}

/// Elementwise binary primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// Record of primitive applications for one forward pass.
pub struct Tape<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    recording: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    params: Vec<(ParamId, Vec<f64>)>,
    leaves: HashMap<Var, Vec<f64>>,
}

impl Gradients {
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        self.params
            .iter()
            .find(|(p, _)| *p == id)
            .map(|(_, g)| g.as_slice())
    }

    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.leaves.get(&v).map(Vec::as_slice)
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.params.iter().map(|(p, _)| *p)
    }

    /// Adds every parameter gradient into the store's gradient slots.
    pub fn accumulate_into(&self, store: &mut ParamStore) -> Result<()> {
        for (id, g) in &self.params {
            store.get_mut(*id).accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Splits a shape into (rows, last-dim) for row-wise operations.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape.len() {
        0 => (1, 1),
        1 => (1, shape[0]),
        _ => (numel(&shape[..shape.len() - 1]), shape[shape.len() - 1]),
    }
}

impl<'p> Tape<'p> {
    /// Recording tape reading parameters from `store`.
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            recording: true,
        }
    }

    /// Tape that computes values only; `backward` yields no gradients.
    pub fn inference(store: &'p ParamStore) -> Self {
        Self {
            recording: false,
            ..Self::new(store)
        }
    }

    /// Recording tape with no parameter store, for free-standing math.
    pub fn standalone() -> Tape<'static> {
        Tape {
            store: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            recording: true,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn store(&self) -> Option<&'p ParamStore> {
        self.store
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match &self.nodes[v.0].value {
            Value::Owned(x) => x,
            Value::Param(id) => self
                .store
                .expect("param node without store")
                .get(*id)
                .values(),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn numel(&self, v: Var) -> usize {
        numel(&self.nodes[v.0].shape)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
            .expect("tape values are always consistent")
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op, name: &str) -> Result<Var> {
        check_finite(name, &values)?;
        let needs_grad = self.recording && !matches!(op, Op::Const);
        let op = if needs_grad { op } else { Op::Const };
        self.nodes.push(Node {
            shape,
            value: Value::Owned(values),
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Pushes `op` when any input is tracked, otherwise a constant.
    fn derived(&mut self, inputs: &[Var], shape: Vec<usize>, values: Vec<f64>, op: Op, name: &str) -> Result<Var> {
        let op = if self.any_grad(inputs) { op } else { Op::Const };
        self.push(shape, values, op, name)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_values()),
            op: Op::Const,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant_vec(&mut self, values: Vec<f64>) -> Var {
        self.constant(Tensor::vector(values))
    }

    pub fn constant_scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Input leaf; its gradient is reported by [`Gradients::wrt`] when `requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let track = t.requires_grad() && self.recording;
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            shape,
            value: Value::Owned(t.into_values()),
            op: if track { Op::Leaf } else { Op::Const },
            needs_grad: track,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf reading a parameter in place; repeated calls return the same handle.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let store = self.store.expect("tape has no parameter store");
        let t = store.get(id);
        let track = self.recording && t.requires_grad();
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Value::Param(id),
            op: if track { Op::Param(id) } else { Op::Const },
            needs_grad: track,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    /// Copy of `v` with gradient flow blocked.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.tensor(v);
        self.constant(t)
    }

    // ---- elementwise --------------------------------------------------

    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (na, nb) = (numel(&sa), numel(&sb));
        let shape = if sa == sb {
            sa
        } else if na == 1 {
            sb
        } else if nb == 1 {
            sa
        } else {
            return shape_err("elementwise", format!("{sa:?} vs {sb:?}"));
        };
        let n = numel(&shape);
        let (va, vb) = (self.value(a), self.value(b));
        let ga = |i: usize| if na == 1 { va[0] } else { va[i] };
        let gb = |i: usize| if nb == 1 { vb[0] } else { vb[i] };
        let values: Vec<f64> = match op {
            Binary::Add => (0..n).map(|i| ga(i) + gb(i)).collect(),
            Binary::Sub => (0..n).map(|i| ga(i) - gb(i)).collect(),
            Binary::Mul => (0..n).map(|i| ga(i) * gb(i)).collect(),
        };
        let rec = match op {
            Binary::Add => Op::Add(a, b),
            Binary::Sub => Op::Sub(a, b),
            Binary::Mul => Op::Mul(a, b),
        };
        self.derived(&[a, b], shape, values, rec, "elementwise")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(Binary::Mul, a, b)
    }

    fn pick(&mut self, a: Var, b: Var, take_max: bool) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return shape_err(
                if take_max { "max" } else { "min" },
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            );
        }
        let values = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| if take_max { x.max(y) } else { x.min(y) })
            .collect();
        let shape = self.shape(a).to_vec();
        let op = if take_max { Op::Max(a, b) } else { Op::Min(a, b) };
        self.derived(&[a, b], shape, values, op, "minmax")
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pick(a, b, true)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.pick(a, b, false)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let values = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.derived(&[x], shape, values, Op::Scale(x, c), "scale")
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        let values = self.value(x).iter().map(|v| v + c).collect();
        let shape = self.shape(x).to_vec();
        self.derived(&[x], shape, values, Op::Shift(x), "add_const")
    }

    pub fn unary(&mut self, op: Unary, x: Var) -> Result<Var> {
        let src = self.value(x);
        let values: Vec<f64> = match op {
            Unary::Tanh => src.iter().map(|v| v.tanh()).collect(),
            Unary::Sigmoid => src.iter().map(|&v| sigmoid(v)).collect(),
            Unary::Relu => src.iter().map(|&v| v.max(0.0)).collect(),
            Unary::Exp => src.iter().map(|v| v.exp()).collect(),
            Unary::Log => {
                if let Some(&bad) = src.iter().find(|&&v| v <= 0.0) {
                    return Err(Error::LogDomain(bad));
                }
                src.iter().map(|v| v.ln()).collect()
            }
        };
        let rec = match op {
            Unary::Tanh => Op::Tanh(x),
            Unary::Sigmoid => Op::Sigmoid(x),
            Unary::Relu => Op::Relu(x),
            Unary::Exp => Op::Exp(x),
            Unary::Log => Op::Log(x),
        };
        let shape = self.shape(x).to_vec();
        self.derived(&[x], shape, values, rec, "unary")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Relu, x)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Exp, x)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Log, x)
    }

    // ---- linear algebra -----------------------------------------------

    /// `a[m,k] * b[k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return shape_err("matmul", format!("{sa:?} x {sb:?}"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = va[i * k + p];
                if s != 0.0 {
                    axpy(s, &vb[p * n..(p + 1) * n], row);
                }
            }
        }
        self.derived(&[a, b], vec![m, n], out, Op::MatMul(a, b), "matmul")
    }

    /// `a[m,k] * b[n,k]^T`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return shape_err("matmul_nt", format!("{sa:?} x {sb:?}^T"));
        }
        let (m, k, n) = (sa[0], sa[1], sb[0]);
        let (va, vb) = (self.value(a), self.value(b));
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = dot(&va[i * k..(i + 1) * k], &vb[j * k..(j + 1) * k]);
            }
        }
        self.derived(&[a, b], vec![m, n], out, Op::MatMulNt(a, b), "matmul_nt")
    }

    /// `x W^T + b` for `x` of shape `[in]` or `[rows, in]` and `W` of shape `[out, in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        let sx = self.shape(x).to_vec();
        if sw.len() != 2 {
            return shape_err("affine", format!("weight must be rank 2, got {sw:?}"));
        }
        let (out_dim, in_dim) = (sw[0], sw[1]);
        let rows = match sx.as_slice() {
            [n] if *n == in_dim => 1,
            [r, n] if *n == in_dim => *r,
            _ => return shape_err("affine", format!("input {sx:?} vs weight {sw:?}")),
        };
        if let Some(b) = b {
            if self.shape(b) != [out_dim] {
                return shape_err("affine", format!("bias {:?} vs out {out_dim}", self.shape(b)));
            }
        }
        let (vx, vw) = (self.value(x), self.value(w));
        let vb = b.map(|b| self.value(b));
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xr = &vx[r * in_dim..(r + 1) * in_dim];
            for o in 0..out_dim {
                let bias = vb.map_or(0.0, |bb| bb[o]);
                out[r * out_dim + o] = dot(xr, &vw[o * in_dim..(o + 1) * in_dim]) + bias;
            }
        }
        let shape = if sx.len() == 1 { vec![out_dim] } else { vec![rows, out_dim] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.derived(&inputs, shape, out, Op::Affine { x, w, b }, "affine")
    }

    // ---- normalisation ------------------------------------------------

    /// Softmax over the last dimension (row-wise for matrices), max-shifted.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if cols == 0 {
            return shape_err("softmax", "empty last dimension");
        }
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            softmax_into(&v[r * cols..(r + 1) * cols], &mut out[r * cols..(r + 1) * cols]);
        }
        let shape = self.shape(x).to_vec();
        self.derived(&[x], shape, out, Op::Softmax(x), "softmax")
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if cols == 0 {
            return shape_err("log_softmax", "empty last dimension");
        }
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let lse = log_sum_exp(row);
            for c in 0..cols {
                out[r * cols + c] = row[c] - lse;
            }
        }
        let shape = self.shape(x).to_vec();
        self.derived(&[x], shape, out, Op::LogSoftmax(x), "log_softmax")
    }

    /// Layer normalisation over the last dimension with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = rows_cols(self.shape(x));
        if self.shape(gain) != [cols] || self.shape(bias) != [cols] {
            return shape_err("layer_norm", format!("gain/bias must be [{cols}]"));
        }
        let (v, g, b) = (self.value(x), self.value(gain), self.value(bias));
        let mut xhat = vec![0.0; v.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; v.len()];
        for r in 0..rows {
            let row = &v[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let xh = (row[c] - mean) * rs;
                xhat[r * cols + c] = xh;
                out[r * cols + c] = xh * g[c] + b[c];
            }
        }
        let shape = self.shape(x).to_vec();
        self.derived(
            &[x, gain, bias],
            shape,
            out,
            Op::LayerNorm { x, gain, bias, xhat, rstd },
            "layer_norm",
        )
    }

    /// `-log softmax(logits)[label]` for a logit vector.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let shape = self.shape(logits);
        if shape.len() != 1 {
            return shape_err("cross_entropy", format!("logits must be rank 1, got {shape:?}"));
        }
        let c = shape[0];
        if label >= c {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        let v = self.value(logits);
        let mut probs = vec![0.0; c];
        softmax_into(v, &mut probs);
        let loss = log_sum_exp(v) - v[label];
        self.derived(
            &[logits],
            Vec::new(),
            vec![loss],
            Op::CrossEntropy { logits, label, probs },
            "cross_entropy",
        )
    }

    // ---- reductions ---------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).iter().sum();
        self.derived(&[x], Vec::new(), vec![s], Op::Sum(x), "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.numel(x);
        if n == 0 {
            return Err(Error::Empty("mean"));
        }
        let s = self.value(x).iter().sum::<f64>() / n as f64;
        self.derived(&[x], Vec::new(), vec![s], Op::Mean(x), "mean")
    }

    /// Mean over the rows of a matrix: `[n, d] -> [d]`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] == 0 {
            return shape_err("mean_rows", format!("{s:?}"));
        }
        let (n, d) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; d];
        for r in 0..n {
            axpy(1.0, &v[r * d..(r + 1) * d], &mut out);
        }
        out.iter_mut().for_each(|o| *o /= n as f64);
        self.derived(&[x], vec![d], out, Op::MeanRows(x), "mean_rows")
    }

    /// Columnwise maximum over rows: `[n, d] -> [d]`; ties pick the earliest row.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] == 0 {
            return shape_err("max_rows", format!("{s:?}"));
        }
        let (n, d) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = v[..d].to_vec();
        let mut arg = vec![0usize; d];
        for r in 1..n {
            for c in 0..d {
                if v[r * d + c] > out[c] {
                    out[c] = v[r * d + c];
                    arg[c] = r;
                }
            }
        }
        self.derived(&[x], vec![d], out, Op::MaxRows(x, arg), "max_rows")
    }

    /// Selects `x[r, idx[r]]` for each row: `[b, a] -> [b]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || s[0] != idx.len() {
            return shape_err("gather", format!("{s:?} with {} indices", idx.len()));
        }
        let cols = s[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= cols) {
            return shape_err("gather", format!("index {bad} >= {cols}"));
        }
        let v = self.value(x);
        let out = idx.iter().enumerate().map(|(r, &i)| v[r * cols + i]).collect();
        self.derived(&[x], vec![idx.len()], out, Op::Gather(x, idx.to_vec()), "gather")
    }

    // ---- layout -------------------------------------------------------

    /// Concatenates rank-1 tensors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat"));
        }
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() > 1 {
                return shape_err("concat", format!("part {:?} is not rank 1", self.shape(p)));
            }
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        self.derived(parts, vec![n], out, Op::Concat(parts.to_vec()), "concat")
    }

    /// `x[start..start+len]` of a rank-1 tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        if self.shape(x).len() != 1 || start + len > self.numel(x) {
            return shape_err("slice", format!("{:?}[{start}..{}]", self.shape(x), start + len));
        }
        let out = self.value(x)[start..start + len].to_vec();
        self.derived(&[x], vec![len], out, Op::Slice(x, start), "slice")
    }

    /// Stacks equal-length rank-1 tensors into a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(Error::Empty("stack_rows"));
        }
        let d = self.numel(rows[0]);
        let mut out = Vec::with_capacity(d * rows.len());
        for &r in rows {
            if self.shape(r).len() != 1 || self.numel(r) != d {
                return shape_err("stack_rows", format!("row {:?} vs width {d}", self.shape(r)));
            }
            out.extend_from_slice(self.value(r));
        }
        let n = rows.len();
        self.derived(rows, vec![n, d], out, Op::StackRows(rows.to_vec()), "stack_rows")
    }

    /// Row `i` of a matrix as a rank-1 tensor.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || i >= s[0] {
            return shape_err("row", format!("row {i} of {s:?}"));
        }
        let d = s[1];
        let x1 = self.reshape(x, &[s[0] * d])?;
        self.slice(x1, i * d, d)
    }

    /// Columns `start..start+len` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || start + len > s[1] {
            return shape_err("slice_cols", format!("{s:?}[:, {start}..{}]", start + len));
        }
        let (n, d) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = Vec::with_capacity(n * len);
        for r in 0..n {
            out.extend_from_slice(&v[r * d + start..r * d + start + len]);
        }
        self.derived(&[x], vec![n, len], out, Op::SliceCols(x, start), "slice_cols")
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Empty("concat_cols"));
        }
        let n = self.shape(parts[0])[0];
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != n {
                return shape_err("concat_cols", format!("{s:?} with {n} rows"));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; n * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for r in 0..n {
                out[r * total + off..r * total + off + w].copy_from_slice(&v[r * w..(r + 1) * w]);
            }
            off += w;
        }
        self.derived(parts, vec![n, total], out, Op::ConcatCols(parts.to_vec()), "concat_cols")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != self.numel(x) {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape(x)));
        }
        let out = self.value(x).to_vec();
        self.derived(&[x], shape.to_vec(), out, Op::Reshape(x), "reshape")
    }

    // ---- backward -----------------------------------------------------

    /// Reverse pass from a scalar `loss`. Visits nodes in reverse recording
    /// order, which is a reverse topological order by construction.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.numel(loss) != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        let mut out = Gradients::default();
        if !self.nodes[loss.0].needs_grad {
            return Ok(out);
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Const => {}
                Op::Leaf => {
                    check_finite("gradient", &g)?;
                    out.leaves.insert(Var(i), g);
                }
                Op::Param(id) => {
                    check_finite("gradient", &g)?;
                    out.params.push((*id, g));
                }
                op => self.propagate(op, Var(i), &g, &mut grads),
            }
        }
        out.params.sort_by_key(|(id, _)| *id);
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let n = self.numel(v);
        let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    fn acc_broadcast(&self, grads: &mut [Option<Vec<f64>>], v: Var, out_n: usize, contrib: impl Fn(usize) -> f64) {
        let n = self.numel(v);
        self.acc(grads, v, |s| {
            if n == out_n {
                for (k, sk) in s.iter_mut().enumerate() {
                    *sk += contrib(k);
                }
            } else {
                s[0] += (0..out_n).map(contrib).sum::<f64>();
            }
        });
    }

    fn propagate(&self, op: &Op, me: Var, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = self.value(me);
        let n = g.len();
        match op {
            Op::Const | Op::Leaf | Op::Param(_) => unreachable!(),
            Op::Add(a, b) => {
                self.acc_broadcast(grads, *a, n, |k| g[k]);
                self.acc_broadcast(grads, *b, n, |k| g[k]);
            }
            Op::Sub(a, b) => {
                self.acc_broadcast(grads, *a, n, |k| g[k]);
                self.acc_broadcast(grads, *b, n, |k| -g[k]);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let at = |v: &[f64], k: usize| if v.len() == 1 { v[0] } else { v[k] };
                self.acc_broadcast(grads, *a, n, |k| g[k] * at(vb, k));
                self.acc_broadcast(grads, *b, n, |k| g[k] * at(va, k));
            }
            Op::Max(a, b) | Op::Min(a, b) => {
                let take_max = matches!(op, Op::Max(..));
                let (va, vb) = (self.value(*a), self.value(*b));
                let first = |k: usize| {
                    if take_max {
                        va[k] >= vb[k]
                    } else {
                        va[k] <= vb[k]
                    }
                };
                self.acc(grads, *a, |s| {
                    for k in 0..n {
                        if first(k) {
                            s[k] += g[k];
                        }
                    }
                });
                self.acc(grads, *b, |s| {
                    for k in 0..n {
                        if !first(k) {
                            s[k] += g[k];
                        }
                    }
                });
            }
            Op::Scale(x, c) => self.acc(grads, *x, |s| axpy(*c, g, s)),
            Op::Shift(x) => self.acc(grads, *x, |s| axpy(1.0, g, s)),
            Op::Reshape(x) => self.acc(grads, *x, |s| axpy(1.0, g, s)),
            Op::Tanh(x) => self.acc(grads, *x, |s| {
                for k in 0..n {
                    s[k] += g[k] * (1.0 - y[k] * y[k]);
                }
            }),
            Op::Sigmoid(x) => self.acc(grads, *x, |s| {
                for k in 0..n {
                    s[k] += g[k] * y[k] * (1.0 - y[k]);
                }
            }),
            Op::Relu(x) => self.acc(grads, *x, |s| {
                for k in 0..n {
                    if y[k] > 0.0 {
                        s[k] += g[k];
                    }
                }
            }),
            Op::Exp(x) => self.acc(grads, *x, |s| {
                for k in 0..n {
                    s[k] += g[k] * y[k];
                }
            }),
            Op::Log(x) => {
                let vx = self.value(*x);
                self.acc(grads, *x, |s| {
                    for k in 0..n {
                        s[k] += g[k] / vx[k];
                    }
                })
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, nn) = (sa[0], sa[1], sb[1]);
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G B^T
                self.acc(grads, *a, |s| {
                    for i in 0..m {
                        for p in 0..k {
                            s[i * k + p] += dot(&g[i * nn..(i + 1) * nn], &vb[p * nn..(p + 1) * nn]);
                        }
                    }
                });
                // dB = A^T G
                self.acc(grads, *b, |s| {
                    for i in 0..m {
                        for p in 0..k {
                            let a_ip = va[i * k + p];
                            if a_ip != 0.0 {
                                axpy(a_ip, &g[i * nn..(i + 1) * nn], &mut s[p * nn..(p + 1) * nn]);
                            }
                        }
                    }
                });
            }
            Op::MatMulNt(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, nn) = (sa[0], sa[1], sb[0]);
                let (va, vb) = (self.value(*a), self.value(*b));
                // dA = G B
                self.acc(grads, *a, |s| {
                    for i in 0..m {
                        for j in 0..nn {
                            let gij = g[i * nn + j];
                            if gij != 0.0 {
                                axpy(gij, &vb[j * k..(j + 1) * k], &mut s[i * k..(i + 1) * k]);
                            }
                        }
                    }
                });
                // dB = G^T A
                self.acc(grads, *b, |s| {
                    for i in 0..m {
                        for j in 0..nn {
                            let gij = g[i * nn + j];
                            if gij != 0.0 {
                                axpy(gij, &va[i * k..(i + 1) * k], &mut s[j * k..(j + 1) * k]);
                            }
                        }
                    }
                });
            }
            Op::Affine { x, w, b } => {
                let sw = self.shape(*w);
                let (out_dim, in_dim) = (sw[0], sw[1]);
                let rows = n / out_dim;
                let (vx, vw) = (self.value(*x), self.value(*w));
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let sr = &mut s[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go != 0.0 {
                                axpy(go, &vw[o * in_dim..(o + 1) * in_dim], sr);
                            }
                        }
                    }
                });
                self.acc(grads, *w, |s| {
                    for r in 0..rows {
                        let xr = &vx[r * in_dim..(r + 1) * in_dim];
                        for o in 0..out_dim {
                            let go = g[r * out_dim + o];
                            if go != 0.0 {
                                axpy(go, xr, &mut s[o * in_dim..(o + 1) * in_dim]);
                            }
                        }
                    }
                });
                if let Some(b) = b {
                    self.acc(grads, *b, |s| {
                        for r in 0..rows {
                            axpy(1.0, &g[r * out_dim..(r + 1) * out_dim], s);
                        }
                    });
                }
            }
            Op::Softmax(x) => {
                let (rows, cols) = rows_cols(self.shape(me));
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let (yr, gr) = (&y[r * cols..(r + 1) * cols], &g[r * cols..(r + 1) * cols]);
                        let inner = dot(yr, gr);
                        for c in 0..cols {
                            s[r * cols + c] += yr[c] * (gr[c] - inner);
                        }
                    }
                });
            }
            Op::LogSoftmax(x) => {
                let (rows, cols) = rows_cols(self.shape(me));
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        let gsum: f64 = g[r * cols..(r + 1) * cols].iter().sum();
                        for c in 0..cols {
                            let p = y[r * cols + c].exp();
                            s[r * cols + c] += g[r * cols + c] - p * gsum;
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let (rows, cols) = rows_cols(self.shape(me));
                let gv = self.value(*gain);
                self.acc(grads, *x, |s| {
                    let mut dxhat = vec![0.0; cols];
                    for r in 0..rows {
                        let xh = &xhat[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dxhat[c] = g[r * cols + c] * gv[c];
                        }
                        let m1 = dxhat.iter().sum::<f64>() / cols as f64;
                        let m2 = dot(&dxhat, xh) / cols as f64;
                        for c in 0..cols {
                            s[r * cols + c] += rstd[r] * (dxhat[c] - m1 - xh[c] * m2);
                        }
                    }
                });
                self.acc(grads, *gain, |s| {
                    for r in 0..rows {
                        for c in 0..cols {
                            s[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                });
                self.acc(grads, *bias, |s| {
                    for r in 0..rows {
                        axpy(1.0, &g[r * cols..(r + 1) * cols], s);
                    }
                });
            }
            Op::CrossEntropy { logits, label, probs } => {
                let g0 = g[0];
                self.acc(grads, *logits, |s| {
                    for (c, p) in probs.iter().enumerate() {
                        let t = if c == *label { 1.0 } else { 0.0 };
                        s[c] += g0 * (p - t);
                    }
                });
            }
            Op::Sum(x) => {
                let g0 = g[0];
                self.acc(grads, *x, |s| s.iter_mut().for_each(|v| *v += g0));
            }
            Op::Mean(x) => {
                let m = self.numel(*x) as f64;
                let g0 = g[0] / m;
                self.acc(grads, *x, |s| s.iter_mut().for_each(|v| *v += g0));
            }
            Op::MeanRows(x) => {
                let rows = self.shape(*x)[0];
                let inv = 1.0 / rows as f64;
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        axpy(inv, g, &mut s[r * n..(r + 1) * n]);
                    }
                });
            }
            Op::MaxRows(x, arg) => self.acc(grads, *x, |s| {
                for c in 0..n {
                    s[arg[c] * n + c] += g[c];
                }
            }),
            Op::Gather(x, idx) => {
                let cols = self.shape(*x)[1];
                self.acc(grads, *x, |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        s[r * cols + i] += g[r];
                    }
                });
            }
            Op::Concat(parts) | Op::StackRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.numel(p);
                    self.acc(grads, p, |s| axpy(1.0, &g[off..off + len], s));
                    off += len;
                }
            }
            Op::Slice(x, start) => self.acc(grads, *x, |s| axpy(1.0, g, &mut s[*start..*start + n])),
            Op::SliceCols(x, start) => {
                let sx = self.shape(*x);
                let (rows, d) = (sx[0], sx[1]);
                let len = n / rows;
                self.acc(grads, *x, |s| {
                    for r in 0..rows {
                        axpy(1.0, &g[r * len..(r + 1) * len], &mut s[r * d + start..r * d + start + len]);
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = self.shape(me)[1];
                let rows = self.shape(me)[0];
                let mut off = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    self.acc(grads, p, |s| {
                        for r in 0..rows {
                            axpy(1.0, &g[r * total + off..r * total + off + w], &mut s[r * w..(r + 1) * w]);
                        }
                    });
                    off += w;
                }
            }
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, x) in out.iter_mut().zip(v) {
        *o = (x - m).exp();
        z += *o;
    }
    out.iter_mut().for_each(|o| *o /= z);
}

/// Softmax of a plain slice, max-shifted.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    softmax_into(v, &mut out);
    out
}
