//! Reverse-mode differentiation over a recorded sequence of tensor operations.
//!
//! A [`Graph`] is built fresh for every forward pass. Each primitive appends a
//! node holding its output value and whatever it needs for the pullback;
//! [`Graph::backward`] then walks the nodes in reverse insertion order, which
//! is a valid reverse topological order because operands always precede the
//! node that consumes them.

use crate::error::{Error, Result};
use crate::nn::tensor::{matmul, Real, Tensor};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddRow { x: Var, bias: Var },
    Scale(Var, F),
    Relu(Var),
    Log(Var),
    Exp(Var),
    SoftmaxRows(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<F>, inv_std: Vec<F> },
    Conv1d { x: Var, w: Var, b: Var, cols: Tensor<F>, stride: usize, pad: usize, kernel: usize, in_len: usize },
    MeanRows(Var),
    RowSelect { x: Var, rows: Vec<usize> },
    L1 { pred: Var, target: Var, weights: Vec<F>, denom: F },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Sum(Var),
    NtXent { z: Var, dz: Tensor<F> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Grads<F> {
    slots: Vec<Option<Tensor<F>>>,
}

impl<F: Real> Grads<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.slots.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<F>> {
        self.slots.get_mut(v.0).and_then(Option::take)
    }
}

pub struct Graph<F> {
    nodes: Vec<Node<F>>,
    check_finite: bool,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn ensure_same(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, a, b))
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: cfg!(debug_assertions),
        }
    }

    /// Turns the non-finite check on every recorded value on or off.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::Numeric(format!(
                "non-finite value produced by node {}",
                self.nodes.len()
            )));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// `op(a) · op(b)`.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var> {
        let out = matmul(self.value(a), ta, self.value(b), tb)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul { a, b, ta, tb }, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_same("add", self.shape(a), self.shape(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    /// Adds a length-`cols` bias to every row of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(bias);
        if bv.len() != xv.cols() {
            return Err(Error::shape("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        let c = xv.cols();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        let ng = self.ng(x) || self.ng(bias);
        self.push(out, Op::AddRow { x, bias }, ng)
    }

    pub fn scale(&mut self, x: Var, s: F) -> Result<Var> {
        let out = self.value(x).map(|v| v * s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(|v| if v > F::zero() { v } else { F::zero() });
        let ng = self.ng(x);
        self.push(out, Op::Relu(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.data().iter().any(|&v| v <= F::zero()) {
            return Err(Error::Numeric("log of non-positive value".into()));
        }
        let out = xv.map(F::ln);
        let ng = self.ng(x);
        self.push(out, Op::Log(x), ng)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(F::exp);
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    /// Row-wise softmax over the last axis, max-subtracted.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let mut out = self.value(x).clone();
        let c = out.cols();
        for row in out.data_mut().chunks_mut(c) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut s = F::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::SoftmaxRows(x), ng)
    }

    /// Per-row normalization to zero mean / unit variance, then `gamma ⊙ · + beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::shape("layer_norm", xv.shape(), self.value(gamma).shape()));
        }
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xv.rows();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        let mut out = vec![F::zero(); xv.len()];
        let n = F::of(c as f64);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let is = F::one() / (var + F::of(eps)).sqrt();
            inv_std[r] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[r * c + j] = h;
                out[r * c + j] = h * g[j] + b[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            ng,
        )
    }

    /// 1-D convolution over time. `x` is `T×C_in`, `w` is `C_out×(kernel·C_in)`
    /// laid out tap-major, `b` has `C_out` entries. Zero padding of `pad` frames
    /// on both ends. Output is `T_out×C_out`, `T_out = (T + 2·pad − kernel)/stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let xv = self.value(x);
        let (t, cin) = (xv.rows(), xv.cols());
        let wv = self.value(w);
        let cout = wv.rows();
        if wv.cols() != kernel * cin || self.value(b).len() != cout || stride == 0 {
            return Err(Error::shape("conv1d", xv.shape(), wv.shape()));
        }
        if t + 2 * pad < kernel {
            return Err(Error::shape("conv1d", xv.shape(), &[kernel]));
        }
        let t_out = (t + 2 * pad - kernel) / stride + 1;
        let kc = kernel * cin;
        let mut cols = vec![F::zero(); t_out * kc];
        for o in 0..t_out {
            for k in 0..kernel {
                let src = (o * stride + k) as isize - pad as isize;
                if src >= 0 && (src as usize) < t {
                    let dst = &mut cols[o * kc + k * cin..o * kc + (k + 1) * cin];
                    dst.copy_from_slice(xv.row(src as usize));
                }
            }
        }
        let cols = Tensor::new(&[t_out, kc], cols)?;
        let mut out = matmul(&cols, false, wv, true)?;
        let bd = self.value(b).data();
        for row in out.data_mut().chunks_mut(cout) {
            for (o, &bb) in row.iter_mut().zip(bd) {
                *o += bb;
            }
        }
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        self.push(
            out,
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                stride,
                pad,
                kernel,
                in_len: t,
            },
            ng,
        )
    }

    /// Mean over rows: `T×C → 1×C`.
    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        if r == 0 {
            return Err(Error::shape("mean_rows", xv.shape(), &[1, c]));
        }
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for (o, &v) in out.iter_mut().zip(xv.row(i)) {
                *o += v;
            }
        }
        let inv = F::one() / F::of(r as f64);
        out.iter_mut().for_each(|o| *o *= inv);
        let out = Tensor::new(&[1, c], out)?;
        let ng = self.ng(x);
        self.push(out, Op::MeanRows(x), ng)
    }

    /// Gathers the listed rows of `x` (in order, repeats allowed).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if let Some(&bad) = rows.iter().find(|&&r| r >= xv.rows()) {
            return Err(Error::shape("select_rows", xv.shape(), &[bad]));
        }
        let mut out = Vec::with_capacity(rows.len() * c);
        for &r in rows {
            out.extend_from_slice(xv.row(r));
        }
        let out = Tensor::new(&[rows.len(), c], out)?;
        let ng = self.ng(x);
        self.push(out, Op::RowSelect { x, rows: rows.to_vec() }, ng)
    }

    /// Mean absolute error. With a mask, only cells where it is true count.
    pub fn l1_loss(&mut self, pred: Var, target: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        ensure_same("l1_loss", p.shape(), t.shape())?;
        let weights: Vec<F> = match mask {
            Some(m) => {
                if m.len() != p.len() {
                    return Err(Error::shape("l1_loss mask", p.shape(), &[m.len()]));
                }
                m.iter().map(|&b| if b { F::one() } else { F::zero() }).collect()
            }
            None => vec![F::one(); p.len()],
        };
        let count = weights.iter().filter(|w| **w > F::zero()).count();
        if count == 0 {
            return Err(Error::arg("L1 loss over an empty mask is undefined"));
        }
        let denom = F::of(count as f64);
        let total: F = p
            .data()
            .iter()
            .zip(t.data())
            .zip(&weights)
            .map(|((&a, &b), &w)| w * (a - b).abs())
            .sum();
        let ng = self.ng(pred) || self.ng(target);
        self.push(
            Tensor::scalar(total / denom),
            Op::L1 {
                pred,
                target,
                weights,
                denom,
            },
            ng,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of nothing"))?;
        let c = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != c {
                return Err(Error::shape("concat_rows", self.shape(*first), v.shape()));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let out = Tensor::new(&[rows, c], data)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::arg("concat of nothing"))?;
        let r = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        for &p in parts {
            if self.value(p).rows() != r {
                return Err(Error::shape("concat_cols", self.shape(*first), self.shape(p)));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = vec![F::zero(); r * total];
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let v = self.value(p);
            for i in 0..r {
                data[i * total + off..i * total + off + w].copy_from_slice(v.row(i));
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        let out = Tensor::new(&[r, total], data)?;
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let c = xv.cols();
        if start + len > c {
            return Err(Error::shape("slice_cols", xv.shape(), &[start, len]));
        }
        let r = xv.rows();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let out = Tensor::new(&[r, len], data)?;
        let ng = self.ng(x);
        self.push(out, Op::SliceCols { x, start }, ng)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s: F = self.value(x).data().iter().copied().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Records an externally computed scalar loss of `z` together with its
    /// gradient `dz`; the pullback scales `dz` by the upstream gradient.
    pub(crate) fn fused_loss(&mut self, z: Var, loss: F, dz: Tensor<F>) -> Result<Var> {
        ensure_same("fused_loss", self.shape(z), dz.shape())?;
        let ng = self.ng(z);
        self.push(Tensor::scalar(loss), Op::NtXent { z, dz }, ng)
    }

    /// Backpropagates from a scalar output.
    pub fn backward(&self, loss: Var) -> Result<Grads<F>> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[1]));
        }
        self.backward_from(vec![(loss, Tensor::scalar(F::one()))])
    }

    /// Backpropagates from arbitrary seed gradients (one per seeded node).
    pub fn backward_from(&self, seeds: Vec<(Var, Tensor<F>)>) -> Result<Grads<F>> {
        let mut g: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, t) in seeds {
            ensure_same("backward seed", self.shape(v), t.shape())?;
            accumulate(&mut g[v.0], t);
            last = last.max(v.0);
        }
        for i in (0..=last).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(up) = g[i].take() else { continue };
            self.pullback(node, &up, &mut g)?;
            g[i] = Some(up);
        }
        Ok(Grads { slots: g })
    }

    fn send(&self, g: &mut [Option<Tensor<F>>], v: Var, t: Tensor<F>) {
        if self.ng(v) {
            accumulate(&mut g[v.0], t);
        }
    }

    fn pullback(&self, node: &Node<F>, up: &Tensor<F>, g: &mut [Option<Tensor<F>>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    // C = op(A)op(B): dop(A) = dC op(B)^T
                    let da = if *ta {
                        matmul(bv, *tb, up, true)?
                    } else {
                        matmul(up, false, bv, !*tb)?
                    };
                    self.send(g, *a, da);
                }
                if self.ng(*b) {
                    let db = if *tb {
                        matmul(up, true, av, *ta)?
                    } else {
                        matmul(av, !*ta, up, false)?
                    };
                    self.send(g, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.send(g, *a, up.clone());
                self.send(g, *b, up.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = up.data().iter().zip(bv.data()).map(|(&u, &y)| u * y).collect();
                    self.send(g, *a, Tensor::new(av.shape(), d)?);
                }
                if self.ng(*b) {
                    let d = up.data().iter().zip(av.data()).map(|(&u, &x)| u * x).collect();
                    self.send(g, *b, Tensor::new(bv.shape(), d)?);
                }
            }
            Op::AddRow { x, bias } => {
                self.send(g, *x, up.clone());
                if self.ng(*bias) {
                    let c = up.cols();
                    let mut db = vec![F::zero(); c];
                    for row in up.data().chunks(c) {
                        for (d, &u) in db.iter_mut().zip(row) {
                            *d += u;
                        }
                    }
                    let shape = self.shape(*bias).to_vec();
                    self.send(g, *bias, Tensor::new(&shape, db)?);
                }
            }
            Op::Scale(x, s) => self.send(g, *x, up.map(|u| u * *s)),
            Op::Relu(x) => {
                let xv = self.value(*x);
                let mut d = up.clone();
                for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                    if xi <= F::zero() {
                        *dv = F::zero();
                    }
                }
                self.send(g, *x, d);
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let mut d = up.clone();
                for (dv, &xi) in d.data_mut().iter_mut().zip(xv.data()) {
                    *dv /= xi;
                }
                self.send(g, *x, d);
            }
            Op::Exp(x) => {
                let mut d = up.clone();
                for (dv, &yi) in d.data_mut().iter_mut().zip(node.value.data()) {
                    *dv *= yi;
                }
                self.send(g, *x, d);
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let c = y.cols();
                let mut d = up.clone();
                for (drow, yrow) in d.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: F = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (dv, &yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot);
                    }
                }
                self.send(g, *x, d);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = up.cols();
                let gm = self.value(*gamma).data();
                if self.ng(*gamma) || self.ng(*beta) {
                    let mut dg = vec![F::zero(); c];
                    let mut db = vec![F::zero(); c];
                    for (urow, hrow) in up.data().chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            dg[j] += urow[j] * hrow[j];
                            db[j] += urow[j];
                        }
                    }
                    let gs = self.shape(*gamma).to_vec();
                    let bs = self.shape(*beta).to_vec();
                    self.send(g, *gamma, Tensor::new(&gs, dg)?);
                    self.send(g, *beta, Tensor::new(&bs, db)?);
                }
                if self.ng(*x) {
                    let n = F::of(c as f64);
                    let mut dx = vec![F::zero(); up.len()];
                    for (r, (urow, hrow)) in up.data().chunks(c).zip(xhat.chunks(c)).enumerate() {
                        let mut s1 = F::zero();
                        let mut s2 = F::zero();
                        for j in 0..c {
                            let dh = urow[j] * gm[j];
                            s1 += dh;
                            s2 += dh * hrow[j];
                        }
                        for j in 0..c {
                            let dh = urow[j] * gm[j];
                            dx[r * c + j] = inv_std[r] * (dh - s1 / n - hrow[j] * s2 / n);
                        }
                    }
                    let xs = self.shape(*x).to_vec();
                    self.send(g, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::Conv1d {
                x,
                w,
                b,
                cols,
                stride,
                pad,
                kernel,
                in_len,
            } => {
                if self.ng(*w) {
                    self.send(g, *w, matmul(up, true, cols, false)?);
                }
                if self.ng(*b) {
                    let c = up.cols();
                    let mut db = vec![F::zero(); c];
                    for row in up.data().chunks(c) {
                        for (d, &u) in db.iter_mut().zip(row) {
                            *d += u;
                        }
                    }
                    let bs = self.shape(*b).to_vec();
                    self.send(g, *b, Tensor::new(&bs, db)?);
                }
                if self.ng(*x) {
                    let dcols = matmul(up, false, self.value(*w), false)?;
                    let cin = self.value(*x).cols();
                    let kc = kernel * cin;
                    let mut dx = vec![F::zero(); in_len * cin];
                    for o in 0..up.rows() {
                        for k in 0..*kernel {
                            let src = (o * stride + k) as isize - *pad as isize;
                            if src >= 0 && (src as usize) < *in_len {
                                let s = src as usize;
                                let from = &dcols.data()[o * kc + k * cin..o * kc + (k + 1) * cin];
                                for (d, &v) in dx[s * cin..(s + 1) * cin].iter_mut().zip(from) {
                                    *d += v;
                                }
                            }
                        }
                    }
                    let xs = self.shape(*x).to_vec();
                    self.send(g, *x, Tensor::new(&xs, dx)?);
                }
            }
            Op::MeanRows(x) => {
                let xs = self.shape(*x).to_vec();
                let r = self.value(*x).rows();
                let inv = F::one() / F::of(r as f64);
                let mut d = Vec::with_capacity(r * up.len());
                for _ in 0..r {
                    d.extend(up.data().iter().map(|&u| u * inv));
                }
                self.send(g, *x, Tensor::new(&xs, d)?);
            }
            Op::RowSelect { x, rows } => {
                let xs = self.shape(*x).to_vec();
                let c = up.cols();
                let mut d = Tensor::zeros(&xs);
                for (i, &r) in rows.iter().enumerate() {
                    for (dv, &u) in d.data_mut()[r * c..(r + 1) * c].iter_mut().zip(up.row(i)) {
                        *dv += u;
                    }
                }
                self.send(g, *x, d);
            }
            Op::L1 {
                pred,
                target,
                weights,
                denom,
            } => {
                let u = up.data()[0] / *denom;
                let (p, t) = (self.value(*pred), self.value(*target));
                let sign: Vec<F> = p
                    .data()
                    .iter()
                    .zip(t.data())
                    .zip(weights)
                    .map(|((&a, &b), &w)| {
                        let d = a - b;
                        let s = if d > F::zero() {
                            F::one()
                        } else if d < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        };
                        s * w * u
                    })
                    .collect();
                let shape = p.shape().to_vec();
                if self.ng(*target) {
                    let neg = sign.iter().map(|&s| -s).collect();
                    self.send(g, *target, Tensor::new(&shape, neg)?);
                }
                self.send(g, *pred, Tensor::new(&shape, sign)?);
            }
            Op::ConcatRows(parts) => {
                let c = up.cols();
                let mut off = 0;
                for &p in parts {
                    let shape = self.shape(p).to_vec();
                    let n = self.value(p).rows() * c;
                    self.send(g, p, Tensor::new(&shape, up.data()[off..off + n].to_vec())?);
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = up.cols();
                let r = up.rows();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Vec::with_capacity(r * w);
                        for i in 0..r {
                            d.extend_from_slice(&up.data()[i * total + off..i * total + off + w]);
                        }
                        let shape = self.shape(p).to_vec();
                        self.send(g, p, Tensor::new(&shape, d)?);
                    }
                    off += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xs = self.shape(*x).to_vec();
                let c = self.value(*x).cols();
                let w = up.cols();
                let mut d = Tensor::zeros(&xs);
                for i in 0..up.rows() {
                    d.data_mut()[i * c + start..i * c + start + w].copy_from_slice(up.row(i));
                }
                self.send(g, *x, d);
            }
            Op::Sum(x) => {
                let xs = self.shape(*x).to_vec();
                self.send(g, *x, Tensor::full(&xs, up.data()[0]));
            }
            Op::NtXent { z, dz } => {
                let u = up.data()[0];
                self.send(g, *z, dz.map(|v| v * u));
            }
        }
        Ok(())
    }
}

fn accumulate<F: Real>(slot: &mut Option<Tensor<F>>, t: Tensor<F>) {
    match slot {
        Some(s) => s.add_assign(&t),
        None => *slot = Some(t),
    }
}

impl<F: Real> Graph<F> {
    /// Inverted dropout: zeroes each cell with probability `p` and rescales
    /// survivors by `1/(1-p)`. `p = 0` records nothing and returns `x`.
    pub fn dropout(&mut self, x: Var, p: f64, rng: &mut crate::rng::Rng) -> Result<Var> {
        use rand::Rng as _;
        if p <= 0.0 {
            return Ok(x);
        }
        if p >= 1.0 {
            return Err(Error::arg(format!("dropout probability {p} must be below 1")));
        }
        let keep = F::of(1.0 / (1.0 - p));
        let mask: Vec<F> = (0..self.value(x).len())
            .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
            .collect();
        let shape = self.shape(x).to_vec();
        let mask = Tensor::new(&shape, mask)?;
        let m = self.constant(mask);
        self.mul(x, m)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        ensure_same("mul", self.shape(a), self.shape(b))?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.shape(a), data)?;
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }
}
