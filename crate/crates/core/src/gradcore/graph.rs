use super::kernels;
use super::{GradError, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation defined outside the built-in set.
///
/// `forward` sees the input values and returns the output; `backward`
/// returns one gradient per input (same shapes as the inputs).
pub trait CustomOp {
    fn name(&self) -> &'static str;
    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor, GradError>;
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Vec<Tensor>;
}

/// Elementwise operations supported by [`Graph::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Gelu,
    Tanh,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, xhat: Vec<f64>, rstd: Vec<f64> },
    GatherRows { x: usize, idx: Vec<Option<usize>> },
    ConcatCols(Vec<usize>),
    ColAffine { x: usize, scale: Vec<f64> },
    Sum(usize),
    Mean(usize),
    Attention { q: usize, k: usize, v: usize, heads: usize, block: usize, probs: Vec<f64> },
    Custom { op: Box<dyn CustomOp>, inputs: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Gelu(_) => "gelu",
            Op::Tanh(_) => "tanh",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::ConcatCols(_) => "concat_cols",
            Op::ColAffine { .. } => "col_affine",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Attention { .. } => "attention",
            Op::Custom { op, .. } => op.name(),
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Epsilon added to the variance inside layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Define-by-run computation tape.
///
/// Nodes are appended in evaluation order, which is therefore a valid
/// topological order for the reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`; panics if `v` was not a gradient-carrying leaf.
    pub fn wrt(&self, v: Var) -> &Tensor {
        self.get(v).expect("no gradient recorded for this variable")
    }
}

fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn binary_shapes(a: &Tensor, b: &Tensor, what: &str) -> Result<(), GradError> {
    if a.shape() == b.shape() || a.numel() == 1 || b.numel() == 1 {
        Ok(())
    } else {
        Err(GradError::Shape(format!("{what}: incompatible shapes {:?} and {:?}", a.shape(), b.shape())))
    }
}

fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        return a.zip_map(b, f).expect("shapes checked");
    }
    if a.numel() == 1 {
        let s = a.data()[0];
        b.map(|y| f(s, y))
    } else {
        let s = b.data()[0];
        a.map(|x| f(x, s))
    }
}

fn softmax_rows_values(x: &Tensor) -> Tensor {
    let (r, c) = (x.rows(), x.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        let row = x.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let o = &mut out[i * c..(i + 1) * c];
        let mut s = 0.0;
        for (oj, &xj) in o.iter_mut().zip(row) {
            *oj = (xj - m).exp();
            s += *oj;
        }
        for oj in o.iter_mut() {
            *oj /= s;
        }
    }
    Tensor::matrix(r, c, out)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, GradError> {
        if !value.is_finite() {
            return Err(GradError::NonFinite(op.name()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, a: usize) -> bool {
        self.nodes[a].requires_grad
    }

    /// Adds a leaf. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        assert!(value.is_finite(), "leaf values must be finite");
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let v = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::MatMul(a.0, b.0), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let v = self.value(a).matmul_t(self.value(b))?;
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::MatMulT(a.0, b.0), rg)
    }

    pub fn elementwise(&mut self, op: Elementwise, args: &[Var]) -> Result<Var, GradError> {
        let arity = match op {
            Elementwise::Add | Elementwise::Sub | Elementwise::Mul => 2,
            Elementwise::Gelu | Elementwise::Tanh => 1,
        };
        if args.len() != arity {
            return Err(GradError::Shape(format!("{op:?} takes {arity} arguments, got {}", args.len())));
        }
        match op {
            Elementwise::Add => self.add(args[0], args[1]),
            Elementwise::Sub => self.sub(args[0], args[1]),
            Elementwise::Mul => self.mul(args[0], args[1]),
            Elementwise::Gelu => self.gelu(args[0]),
            Elementwise::Tanh => self.tanh(args[0]),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        binary_shapes(self.value(a), self.value(b), "add")?;
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Add(a.0, b.0), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        binary_shapes(self.value(a), self.value(b), "sub")?;
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Sub(a.0, b.0), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        binary_shapes(self.value(a), self.value(b), "mul")?;
        let v = broadcast_zip(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a.0) || self.rg(b.0);
        self.push(v, Op::Mul(a.0, b.0), rg)
    }

    /// Multiplies by a fixed constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, GradError> {
        let v = self.value(a).scale(c);
        let rg = self.rg(a.0);
        self.push(v, Op::Scale(a.0, c), rg)
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(gelu);
        let rg = self.rg(a.0);
        self.push(v, Op::Gelu(a.0), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, GradError> {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a.0);
        self.push(v, Op::Tanh(a.0), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, GradError> {
        let x = self.value(a);
        if !x.is_matrix() {
            return Err(GradError::Shape("softmax_rows expects a matrix".into()));
        }
        let v = softmax_rows_values(x);
        let rg = self.rg(a.0);
        self.push(v, Op::SoftmaxRows(a.0), rg)
    }

    /// Per-row normalization followed by an elementwise affine map.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, GradError> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(GradError::Shape("layer_norm expects a matrix".into()));
        }
        let (r, c) = (xv.rows(), xv.cols());
        if c < 2 {
            return Err(GradError::Shape("layer_norm needs at least 2 columns".into()));
        }
        let (g, b) = (self.value(gain), self.value(bias));
        if g.numel() != c || b.numel() != c {
            return Err(GradError::Shape(format!("layer_norm gain/bias must have {c} entries")));
        }
        let mut xhat = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / c as f64;
            let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let rg = self.rg(x.0) || self.rg(gain.0) || self.rg(bias.0);
        self.push(
            Tensor::matrix(r, c, out),
            Op::LayerNorm { x: x.0, gain: gain.0, bias: bias.0, xhat, rstd },
            rg,
        )
    }

    /// Gathers rows; `None` entries produce zero rows.
    pub fn gather_rows(&mut self, x: Var, idx: Vec<Option<usize>>) -> Result<Var, GradError> {
        let xv = self.value(x);
        if !xv.is_matrix() {
            return Err(GradError::Shape("gather_rows expects a matrix".into()));
        }
        if idx.is_empty() {
            return Err(GradError::Shape("gather_rows with no rows".into()));
        }
        let (r, c) = (xv.rows(), xv.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for i in &idx {
            match *i {
                Some(i) if i < r => out.extend_from_slice(xv.row(i)),
                Some(i) => return Err(GradError::Shape(format!("row {i} out of range for {r} rows"))),
                None => out.extend(std::iter::repeat_n(0.0, c)),
            }
        }
        let rg = self.rg(x.0);
        self.push(Tensor::matrix(idx.len(), c, out), Op::GatherRows { x: x.0, idx }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        if tensors.iter().any(|t| !t.is_matrix()) {
            return Err(GradError::Shape("concat_cols expects matrices".into()));
        }
        let v = Tensor::hstack(&tensors)?;
        let rg = parts.iter().any(|p| self.rg(p.0));
        self.push(v, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), rg)
    }

    /// `y[i, j] = (x[i, j] - shift[j]) * scale[j]` with constant `shift`/`scale`.
    pub fn col_affine(&mut self, x: Var, shift: &[f64], scale: &[f64]) -> Result<Var, GradError> {
        let xv = self.value(x);
        let c = xv.cols();
        if shift.len() != c || scale.len() != c {
            return Err(GradError::Shape(format!("col_affine expects {c} shifts and scales")));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - shift[j]) * scale[j];
            }
        }
        let rg = self.rg(x.0);
        self.push(out, Op::ColAffine { x: x.0, scale: scale.to_vec() }, rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, GradError> {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a.0);
        self.push(v, Op::Sum(a.0), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var, GradError> {
        let x = self.value(a);
        let v = Tensor::scalar(x.sum() / x.numel() as f64);
        let rg = self.rg(a.0);
        self.push(v, Op::Mean(a.0), rg)
    }

    /// Multi-head scaled dot-product attention applied independently to
    /// consecutive blocks of `block` rows (one block per sequence).
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize, block: usize) -> Result<Var, GradError> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        if qv.shape() != kv.shape() || qv.shape() != vv.shape() || !qv.is_matrix() {
            return Err(GradError::Shape("attention q/k/v must be equal-shape matrices".into()));
        }
        let (n, d) = (qv.rows(), qv.cols());
        if heads == 0 || d % heads != 0 || block == 0 || n % block != 0 {
            return Err(GradError::Shape(format!(
                "attention: {n}x{d} with {heads} heads and block {block}"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let nb = n / block;
        let (q_d, k_d, v_d) = (qv.data(), kv.data(), vv.data());
        let mut probs = vec![0.0; nb * heads * block * block];
        let mut out = vec![0.0; n * d];
        let mut scores = vec![0.0; block];
        for b in 0..nb {
            let r0 = b * block;
            for h in 0..heads {
                let c0 = h * dh;
                let pbase = (b * heads + h) * block * block;
                for i in 0..block {
                    let qi = &q_d[(r0 + i) * d + c0..(r0 + i) * d + c0 + dh];
                    let mut m = f64::NEG_INFINITY;
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &k_d[(r0 + j) * d + c0..(r0 + j) * d + c0 + dh];
                        *s = scale * kernels::dot(qi, kj);
                        m = m.max(*s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - m).exp();
                        z += *s;
                    }
                    let prow = &mut probs[pbase + i * block..pbase + (i + 1) * block];
                    for (p, s) in prow.iter_mut().zip(&scores) {
                        *p = s / z;
                    }
                    let orow = &mut out[(r0 + i) * d + c0..(r0 + i) * d + c0 + dh];
                    for (j, &p) in prow.iter().enumerate() {
                        let vj = &v_d[(r0 + j) * d + c0..(r0 + j) * d + c0 + dh];
                        for (o, &x) in orow.iter_mut().zip(vj) {
                            *o += p * x;
                        }
                    }
                }
            }
        }
        let rg = self.rg(q.0) || self.rg(k.0) || self.rg(v.0);
        self.push(
            Tensor::matrix(n, d, out),
            Op::Attention { q: q.0, k: k.0, v: v.0, heads, block, probs },
            rg,
        )
    }

    pub fn custom(&mut self, mut op: Box<dyn CustomOp>, inputs: &[Var]) -> Result<Var, GradError> {
        let vals: Vec<&Tensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let v = op.forward(&vals)?;
        let rg = inputs.iter().any(|i| self.rg(i.0));
        self.push(v, Op::Custom { op, inputs: inputs.iter().map(|i| i.0).collect() }, rg)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every leaf created with `requires_grad` gets an entry; leaves the
    /// loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(GradError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if !matches!(n.op, Op::Leaf) || !n.requires_grad {
                    return None;
                }
                let data = grads[i].take().unwrap_or_else(|| vec![0.0; n.value.numel()]);
                Some(Tensor::new(n.value.shape().to_vec(), data).expect("gradient shape"))
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let val = |i: usize| &self.nodes[i].value;
        let mut acc = |i: usize, contrib: Vec<f64>| {
            if !self.nodes[i].requires_grad {
                return;
            }
            match &mut grads[i] {
                Some(existing) => {
                    for (e, c) in existing.iter_mut().zip(contrib) {
                        *e += c;
                    }
                }
                slot @ None => *slot = Some(contrib),
            }
        };
        // Reduces a full-shape gradient onto a possibly-scalar operand.
        let reduce_to = |operand: &Tensor, full: Vec<f64>| -> Vec<f64> {
            if operand.numel() == full.len() {
                full
            } else {
                vec![full.iter().sum()]
            }
        };

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.rg(*a) {
                    acc(*a, kernels::matmul_nt(g, bv.data(), m, n, k));
                }
                if self.rg(*b) {
                    acc(*b, kernels::matmul_tn(av.data(), g, m, k, n));
                }
            }
            Op::MatMulT(a, b) => {
                // out = a · bᵀ, a: m×k, b: n×k
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.rows());
                if self.rg(*a) {
                    acc(*a, kernels::matmul_nn(g, bv.data(), m, n, k));
                }
                if self.rg(*b) {
                    acc(*b, kernels::matmul_tn(g, av.data(), m, n, k));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if self.rg(*a) {
                    acc(*a, reduce_to(val(*a), g.to_vec()));
                }
                if self.rg(*b) {
                    acc(*b, reduce_to(val(*b), g.iter().map(|x| sign * x).collect()));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = g.len();
                let at = |t: &Tensor, i: usize| if t.numel() == 1 { t.data()[0] } else { t.data()[i] };
                if self.rg(*a) {
                    let full: Vec<f64> = (0..n).map(|i| g[i] * at(bv, i)).collect();
                    acc(*a, reduce_to(av, full));
                }
                if self.rg(*b) {
                    let full: Vec<f64> = (0..n).map(|i| g[i] * at(av, i)).collect();
                    acc(*b, reduce_to(bv, full));
                }
            }
            Op::Scale(a, c) => acc(*a, g.iter().map(|x| x * c).collect()),
            Op::Gelu(a) => {
                let x = val(*a).data();
                acc(*a, g.iter().zip(x).map(|(gi, &xi)| gi * gelu_grad(xi)).collect());
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, g.iter().zip(y).map(|(gi, &yi)| gi * (1.0 - yi * yi)).collect());
            }
            Op::SoftmaxRows(a) => {
                let p = &node.value;
                let c = p.cols();
                let mut out = vec![0.0; g.len()];
                for (i, (prow, grow)) in p.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let s: f64 = prow.iter().zip(grow).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        out[i * c + j] = prow[j] * (grow[j] - s);
                    }
                }
                acc(*a, out);
            }
            Op::LayerNorm { x, gain, bias, xhat, rstd } => {
                let c = node.value.cols();
                let gv = val(*gain).data();
                if self.rg(*x) {
                    let mut dx = vec![0.0; g.len()];
                    for (i, &rs) in rstd.iter().enumerate() {
                        let grow = &g[i * c..(i + 1) * c];
                        let hrow = &xhat[i * c..(i + 1) * c];
                        let mut m1 = 0.0;
                        let mut m2 = 0.0;
                        for j in 0..c {
                            let dh = grow[j] * gv[j];
                            m1 += dh;
                            m2 += dh * hrow[j];
                        }
                        m1 /= c as f64;
                        m2 /= c as f64;
                        for j in 0..c {
                            let dh = grow[j] * gv[j];
                            dx[i * c + j] = rs * (dh - m1 - hrow[j] * m2);
                        }
                    }
                    acc(*x, dx);
                }
                if self.rg(*gain) {
                    let mut dg = vec![0.0; c];
                    for (grow, hrow) in g.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += grow[j] * hrow[j];
                        }
                    }
                    acc(*gain, dg);
                }
                if self.rg(*bias) {
                    let mut db = vec![0.0; c];
                    for grow in g.chunks(c) {
                        for j in 0..c {
                            db[j] += grow[j];
                        }
                    }
                    acc(*bias, db);
                }
            }
            Op::GatherRows { x, idx } => {
                let xv = val(*x);
                let c = xv.cols();
                let mut dx = vec![0.0; xv.numel()];
                for (r, src) in idx.iter().enumerate() {
                    if let Some(s) = src {
                        for j in 0..c {
                            dx[s * c + j] += g[r * c + j];
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let rows = node.value.rows();
                let mut off = 0;
                for &p in parts {
                    let pc = val(p).cols();
                    if self.rg(p) {
                        let mut dp = Vec::with_capacity(rows * pc);
                        for i in 0..rows {
                            dp.extend_from_slice(&g[i * total + off..i * total + off + pc]);
                        }
                        acc(p, dp);
                    }
                    off += pc;
                }
            }
            Op::ColAffine { x, scale } => {
                let c = scale.len();
                let mut dx = g.to_vec();
                for row in dx.chunks_mut(c) {
                    for j in 0..c {
                        row[j] *= scale[j];
                    }
                }
                acc(*x, dx);
            }
            Op::Sum(a) => acc(*a, vec![g[0]; val(*a).numel()]),
            Op::Mean(a) => {
                let n = val(*a).numel();
                acc(*a, vec![g[0] / n as f64; n]);
            }
            Op::Attention { q, k, v, heads, block, probs } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (n, d) = (qv.rows(), qv.cols());
                let (heads, block) = (*heads, *block);
                let dh = d / heads;
                let scale = 1.0 / (dh as f64).sqrt();
                let (q_d, k_d, v_d) = (qv.data(), kv.data(), vv.data());
                let mut dq = vec![0.0; n * d];
                let mut dk = vec![0.0; n * d];
                let mut dv = vec![0.0; n * d];
                let mut dp = vec![0.0; block];
                for b in 0..n / block {
                    let r0 = b * block;
                    for h in 0..heads {
                        let c0 = h * dh;
                        let pbase = (b * heads + h) * block * block;
                        for i in 0..block {
                            let gi = &g[(r0 + i) * d + c0..(r0 + i) * d + c0 + dh];
                            let prow = &probs[pbase + i * block..pbase + (i + 1) * block];
                            let mut s = 0.0;
                            for j in 0..block {
                                let vj = &v_d[(r0 + j) * d + c0..(r0 + j) * d + c0 + dh];
                                dp[j] = kernels::dot(gi, vj);
                                s += dp[j] * prow[j];
                                let dvj = &mut dv[(r0 + j) * d + c0..(r0 + j) * d + c0 + dh];
                                for (o, &x) in dvj.iter_mut().zip(gi) {
                                    *o += prow[j] * x;
                                }
                            }
                            for j in 0..block {
                                let ds = prow[j] * (dp[j] - s) * scale;
                                if ds == 0.0 {
                                    continue;
                                }
                                for c in 0..dh {
                                    dq[(r0 + i) * d + c0 + c] += ds * k_d[(r0 + j) * d + c0 + c];
                                    dk[(r0 + j) * d + c0 + c] += ds * q_d[(r0 + i) * d + c0 + c];
                                }
                            }
                        }
                    }
                }
                acc(*q, dq);
                acc(*k, dk);
                acc(*v, dv);
            }
            Op::Custom { op, inputs } => {
                let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
                let gt = Tensor::new(node.value.shape().to_vec(), g.to_vec()).expect("grad shape");
                let ins = op.backward(&vals, &node.value, &gt);
                for (&i, gi) in inputs.iter().zip(ins) {
                    acc(i, gi.into_data());
                }
            }
        }
    }
}
