//! Record-on-forward reverse-mode tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward rule. Inputs always precede outputs, so a single
//! reverse sweep over the node list is a valid topological traversal.

use crate::error::{DataError, Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Map {
        x: Var,
        deriv: Vec<f64>,
    },
    Conv1d {
        x: Var,
        w: Var,
        b: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        /// Train mode differentiates through the batch statistics.
        batch_stats: bool,
    },
    SelectStep {
        x: Var,
        step: usize,
    },
    Stack(Vec<Var>),
    Concat(Var, Var),
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    batch: usize,
    in_ch: usize,
    len: usize,
    out_ch: usize,
    kernel: usize,
    padding: usize,
    out_len: usize,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Elementwise operation selector for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
    Tanh,
}

/// Per-channel batch statistics computed by a train-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance.
    pub var: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that needed one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `c = beta * c + a · b` for row/column-strided `m×k` and `k×n` operands.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
    c_strides: (usize, usize),
) {
    let last = |rows: usize, cols: usize, (rs, cs): (usize, usize)| {
        (rows.saturating_sub(1)) * rs + (cols.saturating_sub(1)) * cs
    };
    assert!(m == 0 || k == 0 || last(m, k, a_strides) < a.len());
    assert!(k == 0 || n == 0 || last(k, n, b_strides) < b.len());
    assert!(m == 0 || n == 0 || last(m, n, c_strides) < c.len());
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            c_strides.0 as isize,
            c_strides.1 as isize,
        );
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: impl IntoIterator<Item = f64>, len: usize) {
    let buf = dst.get_or_insert_with(|| vec![0.0; len]);
    buf.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Tape {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Records a leaf; gradients flow to it when `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        let needs = t.requires_grad();
        let mut value = t.clone();
        value.clear_grad();
        self.push(value, Op::Leaf, needs)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let mut value = t.with_requires_grad(false);
        value.clear_grad();
        self.push(value, Op::Leaf, false)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::dim("matmul", sa, sb));
        }
        let (m, k, p) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * p];
        gemm(
            m,
            k,
            p,
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (p, 1),
            0.0,
            &mut out,
            (p, 1),
        );
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[m, p], out)?, Op::MatMul(a, b), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::dim("transpose", s, &[0, 0]));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(&[c, r], out)?, Op::Transpose(a), needs))
    }

    /// `x · wᵀ + b` for `x: [batch × in]`, `w: [out × in]`, `b: [out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let wt = self.transpose(w)?;
        let y = self.matmul(x, wt)?;
        self.add_bias(y, b)
    }

    // ── Elementwise ──────────────────────────────────────────────────

    pub fn elementwise(&mut self, op: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        match (op, b) {
            (Elementwise::Add, Some(b)) => self.add(a, b),
            (Elementwise::Sub, Some(b)) => self.sub(a, b),
            (Elementwise::Mul, Some(b)) => self.mul(a, b),
            (Elementwise::Relu, None) => Ok(self.relu(a)),
            (Elementwise::Sigmoid, None) => Ok(self.sigmoid(a)),
            (Elementwise::Tanh, None) => Ok(self.tanh(a)),
            (op, _) => Err(Error::Contract(format!(
                "wrong operand count for elementwise {op:?}"
            ))),
        }
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<Tensor> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(Error::dim(name, va.shape(), vb.shape()));
        }
        let data = va.data().iter().zip(vb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(va.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("add", a, b, |x, y| x + y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("sub", a, b, |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Sub(a, b), needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary("mul", a, b, |x, y| x * y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(t, Op::Mul(a, b), needs))
    }

    /// Adds a bias vector across the last axis.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(bias));
        let last = *va.shape().last().unwrap();
        if vb.numel() != last || vb.shape().len() != 1 {
            return Err(Error::dim("add_bias", va.shape(), vb.shape()));
        }
        let bd = vb.data();
        let data = va
            .data()
            .chunks(last)
            .flat_map(|row| row.iter().zip(bd).map(|(x, b)| x + b))
            .collect();
        let t = Tensor::new(va.shape(), data)?;
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(t, Op::AddBias(a, bias), needs))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let v = self.value(a);
        let data = v.data().iter().map(|&x| f(x)).collect();
        Tensor::new(v.shape(), data).expect("same shape")
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.unary(a, |x| if x > 0.0 { x } else { 0.0 });
        let needs = self.needs(a);
        self.push(t, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.unary(a, sigmoid);
        let needs = self.needs(a);
        self.push(t, Op::Sigmoid(a), needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.unary(a, f64::tanh);
        let needs = self.needs(a);
        self.push(t, Op::Tanh(a), needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.unary(a, |x| c * x);
        let needs = self.needs(a);
        self.push(t, Op::Scale(a, c), needs)
    }

    /// Custom elementwise function with a caller-supplied derivative.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let t = self.unary(a, f);
        let deriv = self.value(a).data().iter().map(|&x| df(x)).collect();
        let needs = self.needs(a);
        self.push(t, Op::Map { x: a, deriv }, needs)
    }

    // ── Reductions and reshaping ─────────────────────────────────────

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum(a), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.numel() as f64;
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Mean(a), needs)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).reshape(shape)?;
        let needs = self.needs(a);
        Ok(self.push(t, Op::Reshape(a), needs))
    }

    /// `[batch × steps × feat]` → `[batch × feat]` at one step.
    pub fn select_step(&mut self, x: Var, step: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 || step >= s[1] {
            return Err(Error::dim("select_step", &s, &[step]));
        }
        let (b, t, f) = (s[0], s[1], s[2]);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(b * f);
        for bi in 0..b {
            let off = (bi * t + step) * f;
            out.extend_from_slice(&src[off..off + f]);
        }
        let needs = self.needs(x);
        Ok(self.push(Tensor::new(&[b, f], out)?, Op::SelectStep { x, step }, needs))
    }

    /// Stacks `[batch × feat]` steps into `[batch × steps × feat]`.
    pub fn stack_steps(&mut self, steps: &[Var]) -> Result<Var> {
        let first = steps
            .first()
            .ok_or_else(|| Error::Contract("stack of zero steps".into()))?;
        let s0 = self.shape(*first).to_vec();
        if s0.len() != 2 {
            return Err(Error::dim("stack_steps", &s0, &[]));
        }
        for v in steps {
            if self.shape(*v) != s0.as_slice() {
                return Err(Error::dim("stack_steps", &s0, self.shape(*v)));
            }
        }
        let (b, f, t) = (s0[0], s0[1], steps.len());
        let mut out = vec![0.0; b * t * f];
        for (ti, v) in steps.iter().enumerate() {
            let src = self.value(*v).data();
            for bi in 0..b {
                out[(bi * t + ti) * f..(bi * t + ti + 1) * f]
                    .copy_from_slice(&src[bi * f..(bi + 1) * f]);
            }
        }
        let needs = steps.iter().any(|v| self.needs(*v));
        Ok(self.push(Tensor::new(&[b, t, f], out)?, Op::Stack(steps.to_vec()), needs))
    }

    /// Concatenates two `[batch × _]` tensors along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[0] != sb[0] {
            return Err(Error::dim("concat", &sa, &sb));
        }
        let (rows, fa, fb) = (sa[0], sa[1], sb[1]);
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(rows * (fa + fb));
        for r in 0..rows {
            out.extend_from_slice(&da[r * fa..(r + 1) * fa]);
            out.extend_from_slice(&db[r * fb..(r + 1) * fb]);
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(&[rows, fa + fb], out)?, Op::Concat(a, b), needs))
    }

    // ── Layers with fused rules ──────────────────────────────────────

    /// 1-D cross-correlation, stride 1, zero padding on both sides.
    /// `x: [batch × in_ch × len]`, `w: [out_ch × in_ch × kernel]`, `b: [out_ch]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, padding: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.shape(x).to_vec(),
            self.shape(w).to_vec(),
            self.shape(b).to_vec(),
        );
        if sx.len() != 3 || sw.len() != 3 || sx[1] != sw[1] {
            return Err(Error::dim("conv1d", &sx, &sw));
        }
        if sb != [sw[0]] {
            return Err(Error::dim("conv1d bias", &sw, &sb));
        }
        let (batch, in_ch, len) = (sx[0], sx[1], sx[2]);
        let (out_ch, kernel) = (sw[0], sw[2]);
        if len + 2 * padding < kernel {
            return Err(Error::dim("conv1d length", &sx, &sw));
        }
        let out_len = len + 2 * padding - kernel + 1;
        let geom = ConvGeom {
            batch,
            in_ch,
            len,
            out_ch,
            kernel,
            padding,
            out_len,
        };
        let ck = in_ch * kernel;
        let xd = self.value(x).data();
        // im2col: row (b, l) holds the receptive field of output position l.
        let mut cols = vec![0.0; batch * out_len * ck];
        for bi in 0..batch {
            for l in 0..out_len {
                let row = &mut cols[(bi * out_len + l) * ck..(bi * out_len + l + 1) * ck];
                for c in 0..in_ch {
                    for k in 0..kernel {
                        let pos = l + k;
                        if pos >= padding && pos - padding < len {
                            row[c * kernel + k] = xd[(bi * in_ch + c) * len + pos - padding];
                        }
                    }
                }
            }
        }
        let rows = batch * out_len;
        let mut flat = vec![0.0; rows * out_ch];
        gemm(
            rows,
            ck,
            out_ch,
            &cols,
            (ck, 1),
            self.value(w).data(),
            (1, ck),
            0.0,
            &mut flat,
            (out_ch, 1),
        );
        let bd = self.value(b).data();
        let mut out = vec![0.0; batch * out_ch * out_len];
        for bi in 0..batch {
            for l in 0..out_len {
                let src = &flat[(bi * out_len + l) * out_ch..(bi * out_len + l + 1) * out_ch];
                for (o, v) in src.iter().enumerate() {
                    out[(bi * out_ch + o) * out_len + l] = v + bd[o];
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        let t = Tensor::new(&[batch, out_ch, out_len], out)?;
        Ok(self.push(
            t,
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            },
            needs,
        ))
    }

    /// Train-mode batch norm over `[batch × ch × len]`, normalizing each
    /// channel across (batch, len) with the biased variance.
    pub fn batch_norm_train(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchStats)> {
        let s = self.shape(x).to_vec();
        self.check_bn_shapes(&s, gamma, beta)?;
        let (batch, ch, len) = (s[0], s[1], s[2]);
        let count = batch * len;
        if count < 2 {
            return Err(DataError::DegenerateBatch(count).into());
        }
        let xd = self.value(x).data();
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        for c in 0..ch {
            let mut acc = 0.0;
            for bi in 0..batch {
                acc += xd[(bi * ch + c) * len..(bi * ch + c + 1) * len].iter().sum::<f64>();
            }
            mean[c] = acc / count as f64;
            let mut sq = 0.0;
            for bi in 0..batch {
                for v in &xd[(bi * ch + c) * len..(bi * ch + c + 1) * len] {
                    sq += (v - mean[c]) * (v - mean[c]);
                }
            }
            var[c] = sq / count as f64;
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let node = self.bn_apply(x, gamma, beta, &s, &mean, inv_std, true)?;
        Ok((node, BatchStats { mean, var }))
    }

    /// Eval-mode batch norm using fixed running statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[f64],
        running_var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let s = self.shape(x).to_vec();
        self.check_bn_shapes(&s, gamma, beta)?;
        if running_mean.len() != s[1] || running_var.len() != s[1] {
            return Err(Error::dim("batch_norm running stats", &s, &[running_mean.len()]));
        }
        let inv_std = running_var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, &s, running_mean, inv_std, false)
    }

    fn check_bn_shapes(&self, s: &[usize], gamma: Var, beta: Var) -> Result<()> {
        if s.len() != 3 {
            return Err(Error::dim("batch_norm", s, &[]));
        }
        for p in [gamma, beta] {
            if self.shape(p) != [s[1]] {
                return Err(Error::dim("batch_norm affine", s, self.shape(p)));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn bn_apply(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        s: &[usize],
        mean: &[f64],
        inv_std: Vec<f64>,
        batch_stats: bool,
    ) -> Result<Var> {
        let (batch, ch, len) = (s[0], s[1], s[2]);
        let xd = self.value(x).data();
        let (g, bt) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for bi in 0..batch {
            for c in 0..ch {
                for i in (bi * ch + c) * len..(bi * ch + c + 1) * len {
                    xhat[i] = (xd[i] - mean[c]) * inv_std[c];
                    out[i] = xhat[i] * g[c] + bt[c];
                }
            }
        }
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        let t = Tensor::new(s, out)?;
        Ok(self.push(
            t,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            needs,
        ))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar `loss`, visiting each node once.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let n = g.len();
        let want = |v: Var| self.nodes[v.0].needs_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, p) = (sa[0], sa[1], sb[1]);
                if want(*a) {
                    // dA = dY · Bᵀ
                    let buf = grads[a.0].get_or_insert_with(|| vec![0.0; m * k]);
                    gemm(m, p, k, g, (p, 1), self.value(*b).data(), (1, p), 1.0, buf, (k, 1));
                }
                if want(*b) {
                    // dB = Aᵀ · dY
                    let buf = grads[b.0].get_or_insert_with(|| vec![0.0; k * p]);
                    gemm(k, m, p, self.value(*a).data(), (1, k), g, (p, 1), 1.0, buf, (p, 1));
                }
            }
            Op::Transpose(a) => {
                let s = self.shape(*a);
                let (r, c) = (s[0], s[1]);
                let buf = grads[a.0].get_or_insert_with(|| vec![0.0; r * c]);
                for i in 0..r {
                    for j in 0..c {
                        buf[i * c + j] += g[j * r + i];
                    }
                }
            }
            Op::Add(a, b) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g.iter().copied(), n);
                }
                if want(*b) {
                    add_into(&mut grads[b.0], g.iter().copied(), n);
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g.iter().copied(), n);
                }
                if want(*b) {
                    add_into(&mut grads[b.0], g.iter().map(|v| -v), n);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if want(*a) {
                    add_into(&mut grads[a.0], g.iter().zip(vb).map(|(g, y)| g * y), n);
                }
                if want(*b) {
                    add_into(&mut grads[b.0], g.iter().zip(va).map(|(g, x)| g * x), n);
                }
            }
            Op::AddBias(a, bias) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g.iter().copied(), n);
                }
                if want(*bias) {
                    let last = self.value(*bias).numel();
                    let buf = grads[bias.0].get_or_insert_with(|| vec![0.0; last]);
                    for row in g.chunks(last) {
                        buf.iter_mut().zip(row).for_each(|(b, v)| *b += v);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                add_into(
                    &mut grads[a.0],
                    g.iter().zip(x).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                    n,
                );
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                add_into(&mut grads[a.0], g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)), n);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                add_into(&mut grads[a.0], g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)), n);
            }
            Op::Scale(a, c) => {
                add_into(&mut grads[a.0], g.iter().map(|g| g * c), n);
            }
            Op::Map { x, deriv } => {
                add_into(&mut grads[x.0], g.iter().zip(deriv).map(|(g, d)| g * d), n);
            }
            Op::Sum(a) => {
                let len = self.value(*a).numel();
                add_into(&mut grads[a.0], std::iter::repeat(g[0]), len);
            }
            Op::Mean(a) => {
                let len = self.value(*a).numel();
                add_into(&mut grads[a.0], std::iter::repeat(g[0] / len as f64), len);
            }
            Op::Reshape(a) => {
                add_into(&mut grads[a.0], g.iter().copied(), n);
            }
            Op::SelectStep { x, step } => {
                let s = self.shape(*x);
                let (b, t, f) = (s[0], s[1], s[2]);
                let buf = grads[x.0].get_or_insert_with(|| vec![0.0; b * t * f]);
                for bi in 0..b {
                    let off = (bi * t + step) * f;
                    buf[off..off + f]
                        .iter_mut()
                        .zip(&g[bi * f..(bi + 1) * f])
                        .for_each(|(d, v)| *d += v);
                }
            }
            Op::Stack(steps) => {
                let s = node.value.shape();
                let (b, t, f) = (s[0], s[1], s[2]);
                for (ti, v) in steps.iter().enumerate() {
                    if !want(*v) {
                        continue;
                    }
                    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; b * f]);
                    for bi in 0..b {
                        let off = (bi * t + ti) * f;
                        buf[bi * f..(bi + 1) * f]
                            .iter_mut()
                            .zip(&g[off..off + f])
                            .for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Concat(a, b) => {
                let (fa, fb) = (self.shape(*a)[1], self.shape(*b)[1]);
                let rows = self.shape(*a)[0];
                for (v, off, width) in [(*a, 0, fa), (*b, fa, fb)] {
                    if !want(v) {
                        continue;
                    }
                    let buf = grads[v.0].get_or_insert_with(|| vec![0.0; rows * width]);
                    for r in 0..rows {
                        let src = &g[r * (fa + fb) + off..r * (fa + fb) + off + width];
                        buf[r * width..(r + 1) * width]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, s)| *d += s);
                    }
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                geom,
                cols,
            } => self.conv1d_backward(g, *x, *w, *b, geom, cols, grads),
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let s = node.value.shape();
                let (batch, ch, len) = (s[0], s[1], s[2]);
                let gd = self.value(*gamma).data();
                let mut sum_dy = vec![0.0; ch];
                let mut sum_dy_xhat = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        for i in (bi * ch + c) * len..(bi * ch + c + 1) * len {
                            sum_dy[c] += g[i];
                            sum_dy_xhat[c] += g[i] * xhat[i];
                        }
                    }
                }
                if want(*gamma) {
                    add_into(&mut grads[gamma.0], sum_dy_xhat.iter().copied(), ch);
                }
                if want(*beta) {
                    add_into(&mut grads[beta.0], sum_dy.iter().copied(), ch);
                }
                if want(*x) {
                    let count = (batch * len) as f64;
                    let buf = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
                    for bi in 0..batch {
                        for c in 0..ch {
                            let scale = gd[c] * inv_std[c];
                            for i in (bi * ch + c) * len..(bi * ch + c + 1) * len {
                                buf[i] += if *batch_stats {
                                    scale
                                        * (g[i]
                                            - sum_dy[c] / count
                                            - xhat[i] * sum_dy_xhat[c] / count)
                                } else {
                                    scale * g[i]
                                };
                            }
                        }
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        geom: &ConvGeom,
        cols: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let ConvGeom {
            batch,
            in_ch,
            len,
            out_ch,
            kernel,
            padding,
            out_len,
        } = *geom;
        let ck = in_ch * kernel;
        let rows = batch * out_len;
        // Upstream gradient laid out as [(batch, pos) × out_ch].
        let mut gflat = vec![0.0; rows * out_ch];
        for bi in 0..batch {
            for o in 0..out_ch {
                for l in 0..out_len {
                    gflat[(bi * out_len + l) * out_ch + o] = g[(bi * out_ch + o) * out_len + l];
                }
            }
        }
        if self.nodes[w.0].needs_grad {
            let buf = grads[w.0].get_or_insert_with(|| vec![0.0; out_ch * ck]);
            gemm(out_ch, rows, ck, &gflat, (1, out_ch), cols, (ck, 1), 1.0, buf, (ck, 1));
        }
        if self.nodes[b.0].needs_grad {
            let buf = grads[b.0].get_or_insert_with(|| vec![0.0; out_ch]);
            for row in gflat.chunks(out_ch) {
                buf.iter_mut().zip(row).for_each(|(d, v)| *d += v);
            }
        }
        if self.nodes[x.0].needs_grad {
            let mut dcols = vec![0.0; rows * ck];
            gemm(
                rows,
                out_ch,
                ck,
                &gflat,
                (out_ch, 1),
                self.value(w).data(),
                (ck, 1),
                0.0,
                &mut dcols,
                (ck, 1),
            );
            let buf = grads[x.0].get_or_insert_with(|| vec![0.0; batch * in_ch * len]);
            for bi in 0..batch {
                for l in 0..out_len {
                    let row = &dcols[(bi * out_len + l) * ck..(bi * out_len + l + 1) * ck];
                    for c in 0..in_ch {
                        for k in 0..kernel {
                            let pos = l + k;
                            if pos >= padding && pos - padding < len {
                                buf[(bi * in_ch + c) * len + pos - padding] += row[c * kernel + k];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn param(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).unwrap().with_requires_grad(true)
    }

    #[test]
    fn matmul_identity_and_dot() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let i = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
        let y = tape.matmul(a, i).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

        let r = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap());
        let c = tape.constant(Tensor::from_rows(&[vec![3.0], vec![4.0]]).unwrap());
        let d = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(d).shape(), &[1, 1]);
        assert_eq!(tape.value(d).data(), &[11.0]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(err.to_string(), "dimension mismatch in matmul: [2, 3] vs [2, 3]");
    }

    #[test]
    fn relu_and_sigmoid_values() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::vector(&[-1.0, 0.0, 2.0]));
        let y = tape.elementwise(Elementwise::Relu, x, None).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
        let z = tape.constant(Tensor::vector(&[0.0]));
        let s = tape.elementwise(Elementwise::Sigmoid, z, None).unwrap();
        assert_eq!(tape.value(s).data(), &[0.5]);
        assert!(tape.elementwise(Elementwise::Add, x, None).is_err());
    }

    #[test]
    fn relu_gradient_is_zero_at_and_below_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(&param(&[3], vec![-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn add_passes_upstream_gradient_to_both() {
        let mut tape = Tape::new();
        let a = tape.leaf(&param(&[2, 3], vec![0.3, -1.0, 2.0, 0.1, 0.0, 5.0]));
        let b = tape.leaf(&param(&[2, 3], vec![1.0; 6]));
        let y = tape.add(a, b).unwrap();
        let w = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let yw = tape.mul(y, w).unwrap();
        let l = tape.sum(yw);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.wrt(a).unwrap(), tape.value(w).data());
        assert_eq!(g.wrt(b).unwrap(), tape.value(w).data());
    }

    #[test]
    fn sum_and_half_square_gradients() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[2, 2], vec![3.0, -1.0, 0.5, 7.0]));
        let l = tape.sum(w);
        assert_eq!(tape.backward(l).unwrap().wrt(w).unwrap(), &[1.0; 4]);

        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[3], vec![1.0, 2.0, 3.0]));
        let sq = tape.mul(w, w).unwrap();
        let s = tape.sum(sq);
        let l = tape.scale(s, 0.5);
        assert_eq!(tape.backward(l).unwrap().wrt(w).unwrap(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.leaf(&param(&[3], vec![1.0, 2.0, 3.0]));
        assert!(matches!(tape.backward(w), Err(Error::Contract(_))));
    }

    #[test]
    fn conv1d_hand_example() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1, 5], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap());
        let w = tape.constant(Tensor::new(&[1, 1, 3], vec![1.0, 0.0, -1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv1d(x, w, b, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0, -2.0, -2.0, 4.0]);
    }

    #[test]
    fn conv1d_identity_kernel() {
        let mut tape = Tape::new();
        let data = vec![0.5, -1.5, 2.0, 9.0];
        let x = tape.constant(Tensor::new(&[2, 1, 2], data.clone()).unwrap());
        let w = tape.constant(Tensor::new(&[1, 1, 1], vec![1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv1d(x, w, b, 0).unwrap();
        assert_eq!(tape.value(y).data(), data.as_slice());
    }

    #[test]
    fn conv1d_rejects_channel_mismatch() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 5]));
        let w = tape.constant(Tensor::zeros(&[4, 1, 3]));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(matches!(tape.conv1d(x, w, b, 1), Err(Error::Dimension { .. })));
    }

    #[test]
    fn batch_norm_rejects_single_element_channels() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 1]));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        assert!(matches!(
            tape.batch_norm_train(x, g, b, 1e-5),
            Err(Error::Data(DataError::DegenerateBatch(1)))
        ));
    }

    #[test]
    fn stack_and_select_are_inverse() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap());
        let b = tape.constant(Tensor::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]).unwrap());
        let s = tape.stack_steps(&[a, b]).unwrap();
        assert_eq!(tape.shape(s), &[2, 2, 2]);
        let back = tape.select_step(s, 1).unwrap();
        assert_eq!(tape.value(back).data(), tape.value(b).data());
        let c = tape.concat(a, b).unwrap();
        assert_eq!(tape.value(c).data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
    }
}
