use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::tensor::{matmul_nt, matmul_tn};
use super::{GradError, Tensor};
use crate::Scalar;

const RMS_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Algorithm used for the forward pass of [`Tape::causal_conv1d`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMode {
    #[default]
    Direct,
    Fft,
}

/// Algorithm used for the forward pass of [`Tape::gated_scan`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanMode {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Sigmoid(usize),
    Swish(usize),
    CausalSoftmax(usize),
    RmsNorm(usize, usize),
    Conv(usize, usize),
    Scan(usize, usize),
    Embed(usize, Vec<usize>),
    CrossEntropy(usize, Vec<Option<usize>>),
    Transpose(usize),
    SliceCols(usize, usize),
    ConcatCols(Vec<usize>),
    RepeatCols(usize, usize),
    TileCols(usize, usize),
    SumGroups(usize, usize),
    SumAll(usize),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op,
    needs_grad: bool,
}

/// Records primitive applications and replays them backwards.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> GradError {
    GradError::Shape { op, left: a.to_vec(), right: b.to_vec() }
}

fn is_matrix<T: Scalar>(t: &Tensor<T>) -> bool {
    t.shape().len() == 2
}

/// `b` matches `a` exactly or is a single row broadcast over `a`'s rows.
fn broadcastable<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> bool {
    a.shape() == b.shape() || (is_matrix(a) && is_matrix(b) && b.rows() == 1 && b.cols() == a.cols())
}

fn zip_rows<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = a.clone();
    let c = a.cols();
    let bcast = a.shape() != b.shape();
    for (i, o) in out.data_mut().iter_mut().enumerate() {
        let j = if bcast { i % c } else { i };
        *o = f(*o, b.data()[j]);
    }
    out
}

/// Reduces a gradient to the shape of a possibly broadcast operand.
fn unbroadcast<T: Scalar>(g: Tensor<T>, target: &[usize]) -> Tensor<T> {
    if g.shape() == target {
        return g;
    }
    let c = g.cols();
    let mut acc = vec![0.0f64; c];
    for r in 0..g.rows() {
        for (s, x) in acc.iter_mut().zip(g.row(r)) {
            *s += x.wide();
        }
    }
    Tensor::from_vec(target, acc.into_iter().map(T::of).collect()).expect("row shape")
}

fn sigmoid<T: Scalar>(x: T) -> T {
    let x = x.wide();
    T::of(if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) })
}

fn conv_direct<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Tensor<T> {
    let (l, c, taps) = (x.rows(), x.cols(), k.rows());
    let mut out = Tensor::zeros(&[l, c]);
    let mut acc = vec![0.0f64; c];
    for t in 0..l {
        acc.iter_mut().for_each(|s| *s = 0.0);
        for s in 0..taps.min(t + 1) {
            for ((a, &kv), &xv) in acc.iter_mut().zip(k.row(s)).zip(x.row(t - s)) {
                *a += kv.wide() * xv.wide();
            }
        }
        for (ch, &a) in acc.iter().enumerate() {
            out.set(t, ch, T::of(a));
        }
    }
    out
}

fn conv_fft<T: Scalar>(x: &Tensor<T>, k: &Tensor<T>) -> Tensor<T> {
    let (l, c, taps) = (x.rows(), x.cols(), k.rows());
    let n = (l + taps).next_power_of_two();
    let mut planner = FftPlanner::<T>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut out = Tensor::zeros(&[l, c]);
    let scale = T::of(1.0 / n as f64);
    for ch in 0..c {
        let mut xs = vec![Complex::new(T::zero(), T::zero()); n];
        let mut ks = xs.clone();
        for t in 0..l {
            xs[t].re = x.at(t, ch);
        }
        for s in 0..taps {
            ks[s].re = k.at(s, ch);
        }
        fwd.process(&mut xs);
        fwd.process(&mut ks);
        for (a, b) in xs.iter_mut().zip(&ks) {
            *a = *a * *b;
        }
        inv.process(&mut xs);
        for t in 0..l {
            out.set(t, ch, xs[t].re * scale);
        }
    }
    out
}

fn scan_sequential<T: Scalar>(a: &Tensor<T>, u: &Tensor<T>) -> Tensor<T> {
    let (l, c) = (a.rows(), a.cols());
    let mut h = vec![0.0f64; c];
    let mut out = Tensor::zeros(&[l, c]);
    for t in 0..l {
        for ch in 0..c {
            h[ch] = a.at(t, ch).wide() * h[ch] + u.at(t, ch).wide();
            out.set(t, ch, T::of(h[ch]));
        }
    }
    out
}

/// Hillis-Steele inclusive scan over the affine maps `h -> a h + u`.
fn scan_parallel<T: Scalar>(a: &Tensor<T>, u: &Tensor<T>) -> Tensor<T> {
    let (l, c) = (a.rows(), a.cols());
    let mut aa: Vec<f64> = a.to_f64_vec();
    let mut bb: Vec<f64> = u.to_f64_vec();
    let mut offset = 1;
    while offset < l {
        let (pa, pb) = (aa.clone(), bb.clone());
        for t in offset..l {
            for ch in 0..c {
                let (cur, prev) = (t * c + ch, (t - offset) * c + ch);
                aa[cur] = pa[cur] * pa[prev];
                bb[cur] = pa[cur] * pb[prev] + pb[cur];
            }
        }
        offset *= 2;
    }
    Tensor::from_vec(&[l, c], bb.into_iter().map(T::of).collect()).expect("scan shape")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grads: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op, inputs: &[usize]) -> Var {
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// An input that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    /// Gradient of the last [`Tape::backward`] loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let out = self.val(a.0).matmul(self.val(b.0))?;
        Ok(self.push(out, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise sum; `b` may be a single row broadcast over `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if !broadcastable(x, y) {
            return Err(shape_err("add", x.shape(), y.shape()));
        }
        let out = zip_rows(x, y, |p, q| p + q);
        Ok(self.push(out, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if !broadcastable(x, y) {
            return Err(shape_err("sub", x.shape(), y.shape()));
        }
        let out = zip_rows(x, y, |p, q| p - q);
        Ok(self.push(out, Op::Sub(a.0, b.0), &[a.0, b.0]))
    }

    /// Elementwise product; `b` may be a single row broadcast over `a`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (x, y) = (self.val(a.0), self.val(b.0));
        if !broadcastable(x, y) {
            return Err(shape_err("mul", x.shape(), y.shape()));
        }
        let out = zip_rows(x, y, |p, q| p * q);
        Ok(self.push(out, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::of(c);
        let out = self.val(a.0).map(|x| x * k);
        self.push(out, Op::Scale(a.0, c), &[a.0])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(sigmoid);
        self.push(out, Op::Sigmoid(a.0), &[a.0])
    }

    /// `x * sigmoid(x)`.
    pub fn swish(&mut self, a: Var) -> Var {
        let out = self.val(a.0).map(|x| x * sigmoid(x));
        self.push(out, Op::Swish(a.0), &[a.0])
    }

    /// Row-wise softmax over columns `j <= i`; masked entries are zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, GradError> {
        let s = self.val(a.0);
        if !is_matrix(s) || s.rows() != s.cols() {
            return Err(shape_err("causal_softmax", s.shape(), s.shape()));
        }
        let l = s.rows();
        let mut out = Tensor::zeros(&[l, l]);
        for i in 0..l {
            let row = &s.row(i)[..=i];
            let max = row.iter().map(|x| x.wide()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|x| (x.wide() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for (j, e) in exps.iter().enumerate() {
                out.set(i, j, T::of(e / z));
            }
        }
        Ok(self.push(out, Op::CausalSoftmax(a.0), &[a.0]))
    }

    /// Root-mean-square normalization of each row with a learned `[1, d]` scale.
    pub fn rms_norm(&mut self, x: Var, g: Var) -> Result<Var, GradError> {
        let (xv, gv) = (self.val(x.0), self.val(g.0));
        if !is_matrix(xv) || gv.shape() != [1, xv.cols()] {
            return Err(shape_err("rms_norm", xv.shape(), gv.shape()));
        }
        let d = xv.cols();
        let mut out = xv.clone();
        for r in 0..xv.rows() {
            let ms: f64 = xv.row(r).iter().map(|v| v.wide() * v.wide()).sum::<f64>() / d as f64;
            let inv = 1.0 / (ms + RMS_EPS).sqrt();
            for ch in 0..d {
                out.set(r, ch, T::of(xv.at(r, ch).wide() * inv * gv.data()[ch].wide()));
            }
        }
        Ok(self.push(out, Op::RmsNorm(x.0, g.0), &[x.0, g.0]))
    }

    /// Depthwise causal convolution: `y[t, c] = Σ_s k[s, c] · x[t - s, c]`.
    pub fn causal_conv1d(&mut self, x: Var, k: Var, mode: ConvMode) -> Result<Var, GradError> {
        let (xv, kv) = (self.val(x.0), self.val(k.0));
        if !is_matrix(xv) || !is_matrix(kv) || xv.cols() != kv.cols() {
            return Err(shape_err("causal_conv1d", xv.shape(), kv.shape()));
        }
        let out = match mode {
            ConvMode::Direct => conv_direct(xv, kv),
            ConvMode::Fft => conv_fft(xv, kv),
        };
        Ok(self.push(out, Op::Conv(x.0, k.0), &[x.0, k.0]))
    }

    /// Elementwise linear recurrence `h[t] = a[t] ⊙ h[t-1] + u[t]`, `h[-1] = 0`.
    pub fn gated_scan(&mut self, a: Var, u: Var, mode: ScanMode) -> Result<Var, GradError> {
        let (av, uv) = (self.val(a.0), self.val(u.0));
        if !is_matrix(av) || av.shape() != uv.shape() {
            return Err(shape_err("gated_scan", av.shape(), uv.shape()));
        }
        let out = match mode {
            ScanMode::Sequential => scan_sequential(av, uv),
            ScanMode::Parallel => scan_parallel(av, uv),
        };
        Ok(self.push(out, Op::Scan(a.0, u.0), &[a.0, u.0]))
    }

    /// Rows of `table` selected by `tokens`.
    pub fn embed_lookup(&mut self, table: Var, tokens: &[usize]) -> Result<Var, GradError> {
        let tv = self.val(table.0);
        let (v, d) = (tv.rows(), tv.cols());
        let mut data = Vec::with_capacity(tokens.len() * d);
        for (pos, &tok) in tokens.iter().enumerate() {
            if tok >= v {
                return Err(GradError::Index { op: "embed_lookup", position: pos, index: tok, bound: v });
            }
            data.extend_from_slice(tv.row(tok));
        }
        let out = Tensor::from_vec(&[tokens.len(), d], data)?;
        Ok(self.push(out, Op::Embed(table.0, tokens.to_vec()), &[table.0]))
    }

    /// Mean next-token cross-entropy over rows with a target. Rows without
    /// a target are ignored; with no targets at all the loss is zero.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var, GradError> {
        let z = self.val(logits.0);
        if !is_matrix(z) || z.rows() != targets.len() {
            return Err(shape_err("cross_entropy", z.shape(), &[targets.len()]));
        }
        let v = z.cols();
        let mut total = 0.0;
        let mut count = 0usize;
        for (r, t) in targets.iter().enumerate() {
            let Some(t) = *t else { continue };
            if t >= v {
                return Err(GradError::Index { op: "cross_entropy", position: r, index: t, bound: v });
            }
            total += logsumexp(z.row(r)) - z.at(r, t).wide();
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        let out = Tensor::from_vec(&[1, 1], vec![T::of(loss)])?;
        Ok(self.push(out, Op::CrossEntropy(logits.0, targets.to_vec()), &[logits.0]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.val(a.0).transpose();
        self.push(out, Op::Transpose(a.0), &[a.0])
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, GradError> {
        let av = self.val(a.0);
        if start + len > av.cols() {
            return Err(shape_err("slice_cols", av.shape(), &[start, len]));
        }
        let mut data = Vec::with_capacity(av.rows() * len);
        for r in 0..av.rows() {
            data.extend_from_slice(&av.row(r)[start..start + len]);
        }
        let out = Tensor::from_vec(&[av.rows(), len], data)?;
        Ok(self.push(out, Op::SliceCols(a.0, start), &[a.0]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let rows = self.val(parts[0].0).rows();
        for p in parts {
            if self.val(p.0).rows() != rows {
                return Err(shape_err("concat_cols", self.val(parts[0].0).shape(), self.val(p.0).shape()));
            }
        }
        let cols: usize = parts.iter().map(|p| self.val(p.0).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.val(p.0).row(r));
            }
        }
        let out = Tensor::from_vec(&[rows, cols], data)?;
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        Ok(self.push(out, Op::ConcatCols(ids.clone()), &ids))
    }

    /// Each column repeated `r` times in place: `[a, b] -> [a, a, b, b]`.
    pub fn repeat_cols(&mut self, a: Var, r: usize) -> Var {
        let av = self.val(a.0);
        let c = av.cols();
        let mut out = Tensor::zeros(&[av.rows(), c * r]);
        for row in 0..av.rows() {
            for ch in 0..c * r {
                out.set(row, ch, av.at(row, ch / r));
            }
        }
        self.push(out, Op::RepeatCols(a.0, r), &[a.0])
    }

    /// Whole column block tiled `r` times: `[a, b] -> [a, b, a, b]`.
    pub fn tile_cols(&mut self, a: Var, r: usize) -> Var {
        let av = self.val(a.0);
        let c = av.cols();
        let mut out = Tensor::zeros(&[av.rows(), c * r]);
        for row in 0..av.rows() {
            for ch in 0..c * r {
                out.set(row, ch, av.at(row, ch % c));
            }
        }
        self.push(out, Op::TileCols(a.0, r), &[a.0])
    }

    /// Sums consecutive groups of `g` columns.
    pub fn sum_groups(&mut self, a: Var, g: usize) -> Result<Var, GradError> {
        let av = self.val(a.0);
        if g == 0 || av.cols() % g != 0 {
            return Err(shape_err("sum_groups", av.shape(), &[g]));
        }
        let c = av.cols() / g;
        let mut out = Tensor::zeros(&[av.rows(), c]);
        for row in 0..av.rows() {
            for ch in 0..c {
                let s: f64 = av.row(row)[ch * g..(ch + 1) * g].iter().map(|x| x.wide()).sum();
                out.set(row, ch, T::of(s));
            }
        }
        Ok(self.push(out, Op::SumGroups(a.0, g), &[a.0]))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s: f64 = self.val(a.0).data().iter().map(|x| x.wide()).sum();
        let out = Tensor::from_vec(&[1, 1], vec![T::of(s)]).expect("scalar");
        self.push(out, Op::SumAll(a.0), &[a.0])
    }

    /// Accumulates gradients of the single-element `loss` into every node
    /// that depends on a parameter.
    pub fn backward(&mut self, loss: Var) -> Result<(), GradError> {
        let lv = self.val(loss.0);
        if lv.len() != 1 {
            return Err(shape_err("backward", lv.shape(), &[1]));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (target, contrib) in self.local_grads(i, &g) {
                if !self.nodes[target].needs_grad {
                    continue;
                }
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn local_grads(&self, i: usize, g: &Tensor<T>) -> Vec<(usize, Tensor<T>)> {
        let out = &self.nodes[i].value;
        let wants = |j: usize| self.nodes[j].needs_grad;
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            &Op::MatMul(a, b) => {
                let mut v = Vec::new();
                if wants(a) {
                    v.push((a, matmul_nt(g, self.val(b))));
                }
                if wants(b) {
                    v.push((b, matmul_tn(self.val(a), g)));
                }
                v
            }
            &Op::Add(a, b) => {
                vec![(a, g.clone()), (b, unbroadcast(g.clone(), self.val(b).shape()))]
            }
            &Op::Sub(a, b) => {
                let neg = g.map(|x| -x);
                vec![(a, g.clone()), (b, unbroadcast(neg, self.val(b).shape()))]
            }
            &Op::Mul(a, b) => {
                let (x, y) = (self.val(a), self.val(b));
                let mut v = Vec::new();
                if wants(a) {
                    v.push((a, zip_rows(g, y, |p, q| p * q)));
                }
                if wants(b) {
                    let gy = Tensor::from_vec(
                        g.shape(),
                        g.data().iter().zip(x.data()).map(|(&p, &q)| p * q).collect(),
                    )
                    .expect("same shape");
                    v.push((b, unbroadcast(gy, y.shape())));
                }
                v
            }
            &Op::Scale(a, c) => {
                let k = T::of(c);
                vec![(a, g.map(|x| x * k))]
            }
            &Op::Sigmoid(a) => {
                let d = zip_same(g, out, |gv, y| gv * y * (T::one() - y));
                vec![(a, d)]
            }
            &Op::Swish(a) => {
                let d = zip_same(g, self.val(a), |gv, x| {
                    let s = sigmoid(x);
                    gv * (s + x * s * (T::one() - s))
                });
                vec![(a, d)]
            }
            &Op::CausalSoftmax(a) => {
                let l = out.rows();
                let mut d = Tensor::zeros(&[l, l]);
                for r in 0..l {
                    let dot: f64 = (0..=r).map(|j| out.at(r, j).wide() * g.at(r, j).wide()).sum();
                    for j in 0..=r {
                        let p = out.at(r, j).wide();
                        d.set(r, j, T::of(p * (g.at(r, j).wide() - dot)));
                    }
                }
                vec![(a, d)]
            }
            &Op::RmsNorm(x, gs) => {
                let (xv, gv) = (self.val(x), self.val(gs));
                let (rows, dch) = (xv.rows(), xv.cols());
                let mut dx = Tensor::zeros(xv.shape());
                let mut dg = vec![0.0f64; dch];
                for r in 0..rows {
                    let ms: f64 = xv.row(r).iter().map(|v| v.wide() * v.wide()).sum::<f64>() / dch as f64;
                    let inv = 1.0 / (ms + RMS_EPS).sqrt();
                    let dot: f64 = (0..dch)
                        .map(|c| gv.data()[c].wide() * g.at(r, c).wide() * xv.at(r, c).wide())
                        .sum();
                    for c in 0..dch {
                        let xc = xv.at(r, c).wide();
                        let gc = gv.data()[c].wide();
                        let dyc = g.at(r, c).wide();
                        dx.set(r, c, T::of(inv * gc * dyc - xc * inv.powi(3) * dot / dch as f64));
                        dg[c] += xc * inv * dyc;
                    }
                }
                let dg = Tensor::from_vec(gv.shape(), dg.into_iter().map(T::of).collect()).expect("scale");
                vec![(x, dx), (gs, dg)]
            }
            &Op::Conv(x, k) => {
                let (xv, kv) = (self.val(x), self.val(k));
                let (l, c, taps) = (xv.rows(), xv.cols(), kv.rows());
                let mut dx = vec![0.0f64; l * c];
                let mut dk = vec![0.0f64; taps * c];
                for t in 0..l {
                    for s in 0..taps.min(t + 1) {
                        for ch in 0..c {
                            let gy = g.at(t, ch).wide();
                            dx[(t - s) * c + ch] += kv.at(s, ch).wide() * gy;
                            dk[s * c + ch] += xv.at(t - s, ch).wide() * gy;
                        }
                    }
                }
                vec![
                    (x, Tensor::from_vec(xv.shape(), dx.into_iter().map(T::of).collect()).expect("x")),
                    (k, Tensor::from_vec(kv.shape(), dk.into_iter().map(T::of).collect()).expect("k")),
                ]
            }
            &Op::Scan(a, u) => {
                let av = self.val(a);
                let (l, c) = (av.rows(), av.cols());
                let mut da = Tensor::zeros(&[l, c]);
                let mut du = Tensor::zeros(&[l, c]);
                let mut carry = vec![0.0f64; c];
                for t in (0..l).rev() {
                    for ch in 0..c {
                        let next = if t + 1 < l { av.at(t + 1, ch).wide() * carry[ch] } else { 0.0 };
                        carry[ch] = g.at(t, ch).wide() + next;
                        du.set(t, ch, T::of(carry[ch]));
                        let prev = if t > 0 { out.at(t - 1, ch).wide() } else { 0.0 };
                        da.set(t, ch, T::of(carry[ch] * prev));
                    }
                }
                vec![(a, da), (u, du)]
            }
            Op::Embed(table, tokens) => {
                let tv = self.val(*table);
                let d = tv.cols();
                let mut acc = vec![0.0f64; tv.len()];
                for (pos, &tok) in tokens.iter().enumerate() {
                    for ch in 0..d {
                        acc[tok * d + ch] += g.at(pos, ch).wide();
                    }
                }
                vec![(*table, Tensor::from_vec(tv.shape(), acc.into_iter().map(T::of).collect()).expect("table"))]
            }
            Op::CrossEntropy(logits, targets) => {
                let z = self.val(*logits);
                let count = targets.iter().filter(|t| t.is_some()).count();
                let mut d = Tensor::zeros(z.shape());
                if count > 0 {
                    let scale = g.data()[0].wide() / count as f64;
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let lse = logsumexp(z.row(r));
                        for ch in 0..z.cols() {
                            let p = (z.at(r, ch).wide() - lse).exp();
                            let y = if ch == t { 1.0 } else { 0.0 };
                            d.set(r, ch, T::of((p - y) * scale));
                        }
                    }
                }
                vec![(*logits, d)]
            }
            &Op::Transpose(a) => vec![(a, g.transpose())],
            &Op::SliceCols(a, start) => {
                let av = self.val(a);
                let mut d = Tensor::zeros(av.shape());
                for r in 0..av.rows() {
                    for (j, &x) in g.row(r).iter().enumerate() {
                        d.set(r, start + j, x);
                    }
                }
                vec![(a, d)]
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                let mut v = Vec::with_capacity(parts.len());
                for &p in parts {
                    let pv = self.val(p);
                    let w = pv.cols();
                    let mut d = Tensor::zeros(pv.shape());
                    for r in 0..pv.rows() {
                        for j in 0..w {
                            d.set(r, j, g.at(r, offset + j));
                        }
                    }
                    offset += w;
                    v.push((p, d));
                }
                v
            }
            &Op::RepeatCols(a, rep) => {
                let av = self.val(a);
                let mut d = Tensor::zeros(av.shape());
                for r in 0..av.rows() {
                    for ch in 0..av.cols() {
                        let s: f64 = g.row(r)[ch * rep..(ch + 1) * rep].iter().map(|x| x.wide()).sum();
                        d.set(r, ch, T::of(s));
                    }
                }
                vec![(a, d)]
            }
            &Op::TileCols(a, rep) => {
                let av = self.val(a);
                let c = av.cols();
                let mut d = Tensor::zeros(av.shape());
                for r in 0..av.rows() {
                    for ch in 0..c {
                        let s: f64 = (0..rep).map(|k| g.at(r, k * c + ch).wide()).sum();
                        d.set(r, ch, T::of(s));
                    }
                }
                vec![(a, d)]
            }
            &Op::SumGroups(a, grp) => {
                let av = self.val(a);
                let mut d = Tensor::zeros(av.shape());
                for r in 0..av.rows() {
                    for ch in 0..av.cols() {
                        d.set(r, ch, g.at(r, ch / grp));
                    }
                }
                vec![(a, d)]
            }
            &Op::SumAll(a) => vec![(a, Tensor::full(self.val(a).shape(), g.data()[0]))],
        }
    }
}

fn zip_same<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

fn logsumexp<T: Scalar>(row: &[T]) -> f64 {
    let max = row.iter().map(|x| x.wide()).fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x.wide() - max).exp()).sum::<f64>().ln()
}
