//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and what its backward
//! rule needs. [`Graph::backward`] walks the tape once in exact reverse
//! order, adds each node's incoming gradient into its inputs, and frees
//! intermediate values as it goes. Parameter gradients are accumulated into
//! the owning [`ParamStore`], so a parameter used twice receives the sum of
//! both paths.

use crate::error::{NnError, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;
use std::hash::{DefaultHasher, Hash, Hasher};
use roc_core::{MatRef, Scalar};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Output geometry of a 2-d convolution over NCHW input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_c: usize,
    pub h: usize,
    pub w: usize,
    pub out_c: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn cols(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_plane(&self) -> usize {
        self.h * self.w
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

enum Op<T> {
    Input,
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    Sum(Var),
    WeightedSum(Var, Vec<T>),
    Relu(Var),
    Conv2d { x: Var, w: Var, geom: ConvGeom },
    BatchNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool },
    Linear { x: Var, w: Var, b: Var },
    GlobalAvgPool(Var),
    MaxPool2 { x: Var, argmax: Vec<usize> },
    Mse { pred: Var, target: Var },
}

struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaf_grads: Vec<Option<Tensor<T>>>,
    consumed: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn check_finite<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(NnError::NonFinite { op })
    }
}

fn shape_err<R>(msg: String) -> Result<R> {
    Err(NnError::ShapeMismatch(msg))
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Copies one sample's receptive fields into a `(C·k·k) × (OH·OW)` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, col: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_c {
        let xc = &x[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut col[row * plane..(row + 1) * plane];
                for oh in 0..g.oh {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    let seg = &mut dst[oh * g.ow..(oh + 1) * g.ow];
                    if ih < 0 || ih >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src = &xc[ih as usize * g.w..(ih as usize + 1) * g.w];
                    for (ow, out) in seg.iter_mut().enumerate() {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        *out = if iw < 0 || iw >= g.w as isize { T::zero() } else { src[iw as usize] };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into a sample.
fn col2im<T: Scalar>(col: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.in_c {
        let dxc = &mut dx[c * g.in_plane()..(c + 1) * g.in_plane()];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &col[row * plane..(row + 1) * plane];
                for oh in 0..g.oh {
                    let ih = (oh * g.stride + ki) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    for ow in 0..g.ow {
                        let iw = (ow * g.stride + kj) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dxc[ih as usize * g.w + iw as usize] += src[oh * g.ow + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Per-channel view of an `[N, C, ...]` tensor: (batch, channels, spatial).
fn channel_dims(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), leaf_grads: Vec::new(), consumed: false }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value: Some(value), op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Tensor<T> {
        self.nodes[v.0].value.as_ref().expect("node value was freed by backward")
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// The value computed for `v`. Intermediate values are released by
    /// [`backward`](Self::backward); read them before.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.val(v)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant input; no gradient flows to it.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Input, false)
    }

    /// Hash of every ReLU on/off mask and max-pool winner recorded so far.
    /// Two evaluations with equal signatures lie on the same smooth piece
    /// of the network function. Read it before [`backward`](Self::backward).
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(_) => {
                    if let Some(v) = &node.value {
                        v.data().iter().for_each(|&x| (x > T::zero()).hash(&mut h));
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.hash(&mut h),
                _ => {}
            }
        }
        h.finish()
    }

    /// An input whose gradient is kept and readable through [`grad`](Self::grad).
    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Snapshot of a parameter's current value; its gradient is routed back
    /// into `store` on backward.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.param(id).value.clone(), Op::Param(id), true)
    }

    /// Gradient of the last backward pass with respect to a [`leaf`](Self::leaf).
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.val(a), self.val(b));
        if ta.shape() != tb.shape() {
            return shape_err(format!("add {:?} + {:?}", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        check_finite(&out, "add")?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), ng))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.val(x).sum());
        check_finite(&out, "sum")?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::Sum(x), ng))
    }

    /// `Σ xᵢ·wᵢ` against a constant weight vector.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        let tx = self.val(x);
        if tx.numel() != weights.len() {
            return shape_err(format!("weighted_sum over {} values with {} weights", tx.numel(), weights.len()));
        }
        let out = Tensor::scalar(tx.data().iter().zip(&weights).map(|(&a, &b)| a * b).sum());
        check_finite(&out, "weighted_sum")?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::WeightedSum(x, weights), ng))
    }

    /// `max(0, x)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let data = tx.data().iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.needs(x);
        Ok(self.push(out, Op::Relu(x), ng))
    }

    /// Zero-padded cross-correlation, no bias. `x: [N, C, H, W]`,
    /// `w: [O, C, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (tx, tw) = (self.val(x), self.val(w));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || stride == 0 {
            return shape_err(format!("conv2d input {xs:?} weight {ws:?} stride {stride}"));
        }
        let k = ws[2];
        if xs[2] + 2 * pad < k || xs[3] + 2 * pad < k {
            return shape_err(format!("conv2d kernel {k} larger than padded input {xs:?}"));
        }
        let geom = ConvGeom {
            batch: xs[0],
            in_c: xs[1],
            h: xs[2],
            w: xs[3],
            out_c: ws[0],
            k,
            stride,
            pad,
            oh: (xs[2] + 2 * pad - k) / stride + 1,
            ow: (xs[3] + 2 * pad - k) / stride + 1,
        };
        let (plane, cols) = (geom.out_plane(), geom.cols());
        let in_sample = geom.in_c * geom.in_plane();
        let out_sample = geom.out_c * plane;
        let mut out = vec![T::zero(); geom.batch * out_sample];
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![T::zero(); cols * plane] };
        for n in 0..geom.batch {
            let xn = &tx.data()[n * in_sample..(n + 1) * in_sample];
            let rhs = if geom.is_pointwise() {
                xn
            } else {
                im2col(xn, &geom, &mut col);
                &col
            };
            T::gemm(
                geom.out_c,
                cols,
                plane,
                T::one(),
                MatRef::row_major(tw.data(), cols),
                MatRef::row_major(rhs, plane),
                T::zero(),
                &mut out[n * out_sample..(n + 1) * out_sample],
                plane,
            );
        }
        let out = Tensor::from_parts(vec![geom.batch, geom.out_c, geom.oh, geom.ow], out);
        check_finite(&out, "conv2d")?;
        let ng = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Conv2d { x, w, geom }, ng))
    }

    fn check_bn_shapes(&self, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize, usize)> {
        let xs = self.val(x).shape();
        let Some((n, c, s)) = channel_dims(xs) else {
            return shape_err(format!("batch norm needs [N, C, ...], got {xs:?}"));
        };
        if self.val(gamma).numel() != c || self.val(beta).numel() != c {
            return shape_err(format!("batch norm over {c} channels with mismatched affine parameters"));
        }
        Ok((n, c, s))
    }

    fn bn_apply(&mut self, x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, train: bool) -> Result<Var> {
        let (_, c, s) = channel_dims(self.val(x).shape()).expect("checked");
        let (tx, tg, tb) = (self.val(x), self.val(gamma), self.val(beta));
        // y = x·scale + shift per channel
        let scale: Vec<T> = (0..c).map(|ch| tg.data()[ch] * inv_std[ch]).collect();
        let shift: Vec<T> = (0..c).map(|ch| tb.data()[ch] - mean[ch] * scale[ch]).collect();
        let mut out = Vec::with_capacity(tx.numel());
        for (plane, xs) in tx.data().chunks_exact(s).enumerate() {
            let (a, b) = (scale[plane % c], shift[plane % c]);
            out.extend(xs.iter().map(|&v| v * a + b));
        }
        let out = Tensor::from_parts(tx.shape().to_vec(), out);
        check_finite(&out, "batch_norm")?;
        let ng = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::BatchNorm { x, gamma, beta, mean, inv_std, train }, ng))
    }

    /// Training-mode batch normalization over batch × spatial positions.
    /// Returns the output and the batch mean and biased variance per channel.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let (n, c, s) = self.check_bn_shapes(x, gamma, beta)?;
        if n < 2 {
            return Err(NnError::BatchTooSmall(n));
        }
        let tx = self.val(x).data();
        let count = T::from_usize(n * s).unwrap();
        let mut mean = vec![T::zero(); c];
        for (plane, xs) in tx.chunks_exact(s).enumerate() {
            mean[plane % c] += lane_sum(xs);
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![T::zero(); c];
        for (plane, xs) in tx.chunks_exact(s).enumerate() {
            var[plane % c] += centered_sq_sum(xs, mean[plane % c]);
        }
        var.iter_mut().for_each(|v| *v /= count);
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let out = self.bn_apply(x, gamma, beta, mean.clone(), inv_std, true)?;
        Ok((out, mean, var))
    }

    /// Inference-mode batch normalization with fixed statistics.
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let (_, c, _) = self.check_bn_shapes(x, gamma, beta)?;
        if running_mean.len() != c || running_var.len() != c {
            return shape_err(format!("running statistics do not cover {c} channels"));
        }
        let inv_std = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        self.bn_apply(x, gamma, beta, running_mean.to_vec(), inv_std, false)
    }

    /// `x · wᵀ + b` with `x: [N, d_in]`, `w: [d_out, d_in]`, `b: [d_out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, tw, tb) = (self.val(x), self.val(w), self.val(b));
        let (xs, ws) = (tx.shape(), tw.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || tb.numel() != ws[0] {
            return shape_err(format!("linear input {xs:?} weight {ws:?} bias {:?}", tb.shape()));
        }
        let (n, din, dout) = (xs[0], xs[1], ws[0]);
        let mut out = vec![T::zero(); n * dout];
        for row in out.chunks_mut(dout) {
            row.copy_from_slice(tb.data());
        }
        T::gemm(
            n,
            din,
            dout,
            T::one(),
            MatRef::row_major(tx.data(), din),
            MatRef::transposed(tw.data(), din),
            T::one(),
            &mut out,
            dout,
        );
        let out = Tensor::from_parts(vec![n, dout], out);
        check_finite(&out, "linear")?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::Linear { x, w, b }, ng))
    }

    /// `[N, C, H, W] → [N, C]` spatial mean.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let Some((n, c, s)) = channel_dims(tx.shape()) else {
            return shape_err(format!("global_avg_pool needs [N, C, ...], got {:?}", tx.shape()));
        };
        let denom = T::from_usize(s).unwrap();
        let data = tx.data().chunks(s).map(|plane| plane.iter().copied().sum::<T>() / denom).collect();
        let out = Tensor::from_parts(vec![n, c], data);
        check_finite(&out, "global_avg_pool")?;
        let ng = self.needs(x);
        Ok(self.push(out, Op::GlobalAvgPool(x), ng))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let tx = self.val(x);
        let xs = tx.shape();
        if xs.len() != 4 || xs[2] < 2 || xs[3] < 2 {
            return shape_err(format!("max_pool2 needs [N, C, H>=2, W>=2], got {xs:?}"));
        }
        let (nc, h, w) = (xs[0] * xs[1], xs[2], xs[3]);
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(nc * oh * ow);
        let mut argmax = Vec::with_capacity(nc * oh * ow);
        for plane in 0..nc {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if tx.data()[idx] > tx.data()[best] {
                            best = idx;
                        }
                    }
                    out.push(tx.data()[best]);
                    argmax.push(best);
                }
            }
        }
        let out = Tensor::from_parts(vec![xs[0], xs[1], oh, ow], out);
        let ng = self.needs(x);
        Ok(self.push(out, Op::MaxPool2 { x, argmax }, ng))
    }

    /// Mean squared difference over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (tp, tt) = (self.val(pred), self.val(target));
        if tp.shape() != tt.shape() {
            return shape_err(format!("mse_loss {:?} vs {:?}", tp.shape(), tt.shape()));
        }
        let n = T::from_usize(tp.numel()).unwrap();
        let s: T = tp.data().iter().zip(tt.data()).map(|(&p, &t)| (p - t) * (p - t)).sum();
        let out = Tensor::scalar(s / n);
        check_finite(&out, "mse_loss")?;
        let ng = self.needs(pred) || self.needs(target);
        Ok(self.push(out, Op::Mse { pred, target }, ng))
    }

    /// Reverse pass from a scalar `loss`. Parameter gradients are added to
    /// `store`; leaf gradients become readable via [`grad`](Self::grad).
    /// A graph supports a single backward pass.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.consumed {
            return Err(NnError::GraphConsumed);
        }
        let shape = self.val(loss).shape().to_vec();
        if self.val(loss).numel() != 1 {
            return Err(NnError::NotScalar(shape));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        self.leaf_grads = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, T::one()));

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if !self.nodes[i].needs_grad {
                continue;
            }
            self.backward_node(i, gout, &mut grads, store);
            if !matches!(self.nodes[i].op, Op::Input | Op::Leaf | Op::Param(_)) {
                self.nodes[i].value = None;
            }
        }
        Ok(())
    }

    fn backward_node(&mut self, i: usize, gout: Tensor<T>, grads: &mut [Option<Tensor<T>>], store: &mut ParamStore<T>) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::Leaf => self.leaf_grads[i] = Some(gout),
            Op::Param(id) => store.param_mut(*id).grad.add_assign(&gout),
            Op::Add(a, b) => {
                if self.needs(*b) {
                    accumulate(grads, *b, gout.clone());
                }
                if self.needs(*a) {
                    accumulate(grads, *a, gout);
                }
            }
            Op::Sum(x) => {
                let g = gout.data()[0];
                accumulate(grads, *x, Tensor::full(self.val(*x).shape(), g));
            }
            Op::WeightedSum(x, w) => {
                let g = gout.data()[0];
                let data = w.iter().map(|&wi| wi * g).collect();
                accumulate(grads, *x, Tensor::from_parts(self.val(*x).shape().to_vec(), data));
            }
            Op::Relu(x) => {
                let out = node.value.as_ref().expect("relu output retained");
                let data = gout
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, *x, Tensor::from_parts(out.shape().to_vec(), data));
            }
            Op::Conv2d { x, w, geom } => {
                let (dx, dw) = self.conv_backward(*x, *w, geom, &gout);
                if let Some(dx) = dx {
                    accumulate(grads, *x, dx);
                }
                if let Some(dw) = dw {
                    accumulate(grads, *w, dw);
                }
            }
            Op::BatchNorm { x, gamma, beta, mean, inv_std, train } => {
                let (dx, dg, db) = self.bn_backward(*x, *gamma, mean, inv_std, *train, &gout);
                if self.needs(*x) {
                    accumulate(grads, *x, dx);
                }
                if self.needs(*gamma) {
                    accumulate(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    accumulate(grads, *beta, db);
                }
            }
            Op::Linear { x, w, b } => {
                let (tx, tw) = (self.val(*x), self.val(*w));
                let (n, din, dout) = (tx.shape()[0], tx.shape()[1], tw.shape()[0]);
                if self.needs(*x) {
                    let mut dx = vec![T::zero(); n * din];
                    T::gemm(
                        n,
                        dout,
                        din,
                        T::one(),
                        MatRef::row_major(gout.data(), dout),
                        MatRef::row_major(tw.data(), din),
                        T::zero(),
                        &mut dx,
                        din,
                    );
                    accumulate(grads, *x, Tensor::from_parts(vec![n, din], dx));
                }
                if self.needs(*w) {
                    let mut dw = vec![T::zero(); dout * din];
                    T::gemm(
                        dout,
                        n,
                        din,
                        T::one(),
                        MatRef::transposed(gout.data(), dout),
                        MatRef::row_major(tx.data(), din),
                        T::zero(),
                        &mut dw,
                        din,
                    );
                    accumulate(grads, *w, Tensor::from_parts(vec![dout, din], dw));
                }
                if self.needs(*b) {
                    let mut db = vec![T::zero(); dout];
                    for row in gout.data().chunks(dout) {
                        for (acc, &g) in db.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    accumulate(grads, *b, Tensor::from_parts(self.val(*b).shape().to_vec(), db));
                }
            }
            Op::GlobalAvgPool(x) => {
                let xs = self.val(*x).shape();
                let s: usize = xs[2..].iter().product();
                let denom = T::from_usize(s).unwrap();
                let mut dx = Vec::with_capacity(s * gout.numel());
                for &g in gout.data() {
                    dx.extend(std::iter::repeat_n(g / denom, s));
                }
                accumulate(grads, *x, Tensor::from_parts(xs.to_vec(), dx));
            }
            Op::MaxPool2 { x, argmax } => {
                let mut dx = Tensor::zeros(self.val(*x).shape());
                for (&idx, &g) in argmax.iter().zip(gout.data()) {
                    dx.data_mut()[idx] += g;
                }
                accumulate(grads, *x, dx);
            }
            Op::Mse { pred, target } => {
                let (tp, tt) = (self.val(*pred), self.val(*target));
                let scale = T::lit(2.0) * gout.data()[0] / T::from_usize(tp.numel()).unwrap();
                let diff: Vec<T> = tp.data().iter().zip(tt.data()).map(|(&p, &t)| (p - t) * scale).collect();
                if self.needs(*target) {
                    let neg = diff.iter().map(|&d| -d).collect();
                    accumulate(grads, *target, Tensor::from_parts(tt.shape().to_vec(), neg));
                }
                if self.needs(*pred) {
                    accumulate(grads, *pred, Tensor::from_parts(tp.shape().to_vec(), diff));
                }
            }
        }
    }

    fn conv_backward(&self, x: Var, w: Var, g: &ConvGeom, gout: &Tensor<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
        let (tx, tw) = (self.val(x), self.val(w));
        let (plane, cols) = (g.out_plane(), g.cols());
        let in_sample = g.in_c * g.in_plane();
        let out_sample = g.out_c * plane;
        let mut dw = self.needs(w).then(|| vec![T::zero(); g.out_c * cols]);
        let mut dx = self.needs(x).then(|| vec![T::zero(); tx.numel()]);
        let mut col = vec![T::zero(); cols * plane];
        for n in 0..g.batch {
            let go = &gout.data()[n * out_sample..(n + 1) * out_sample];
            let xn = &tx.data()[n * in_sample..(n + 1) * in_sample];
            if let Some(dw) = dw.as_mut() {
                let cn = if g.is_pointwise() {
                    xn
                } else {
                    im2col(xn, g, &mut col);
                    &col
                };
                // dW += dOut_n · col_nᵀ
                T::gemm(
                    g.out_c,
                    plane,
                    cols,
                    T::one(),
                    MatRef::row_major(go, plane),
                    MatRef::transposed(cn, plane),
                    T::one(),
                    dw,
                    cols,
                );
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * in_sample..(n + 1) * in_sample];
                let target: &mut [T] = if g.is_pointwise() { dxn } else { &mut col };
                // dcol = Wᵀ · dOut_n
                T::gemm(
                    cols,
                    g.out_c,
                    plane,
                    T::one(),
                    MatRef::transposed(tw.data(), cols),
                    MatRef::row_major(go, plane),
                    T::zero(),
                    target,
                    plane,
                );
                if !g.is_pointwise() {
                    col2im(&col, g, &mut dx[n * in_sample..(n + 1) * in_sample]);
                }
            }
        }
        (
            dx.map(|d| Tensor::from_parts(tx.shape().to_vec(), d)),
            dw.map(|d| Tensor::from_parts(tw.shape().to_vec(), d)),
        )
    }

    fn bn_backward(
        &self,
        x: Var,
        gamma: Var,
        mean: &[T],
        inv_std: &[T],
        train: bool,
        gout: &Tensor<T>,
    ) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let tx = self.val(x);
        let tg = self.val(gamma);
        let (n, c, s) = channel_dims(tx.shape()).expect("checked at forward");
        let count = T::from_usize(n * s).unwrap();
        // per channel: Σdy and Σdy·(x − μ)
        let mut sum_dy = vec![T::zero(); c];
        let mut sum_dy_xc = vec![T::zero(); c];
        for (plane, (xs, dys)) in tx.data().chunks_exact(s).zip(gout.data().chunks_exact(s)).enumerate() {
            let ch = plane % c;
            sum_dy[ch] += lane_sum(dys);
            sum_dy_xc[ch] += centered_dot(dys, xs, mean[ch]);
        }
        let dgamma: Vec<T> = (0..c).map(|ch| sum_dy_xc[ch] * inv_std[ch]).collect();
        // dx = p·dy + q·(x − μ) + r
        let coeffs: Vec<(T, T, T)> = (0..c)
            .map(|ch| {
                let p = tg.data()[ch] * inv_std[ch];
                if train {
                    let k = p / count;
                    (p, -k * inv_std[ch] * dgamma[ch], -k * sum_dy[ch])
                } else {
                    (p, T::zero(), T::zero())
                }
            })
            .collect();
        let mut dx = Vec::with_capacity(tx.numel());
        for (plane, (xs, dys)) in tx.data().chunks_exact(s).zip(gout.data().chunks_exact(s)).enumerate() {
            let ch = plane % c;
            let (p, q, r) = coeffs[ch];
            let mu = mean[ch];
            dx.extend(xs.iter().zip(dys).map(|(&xv, &dy)| p * dy + q * (xv - mu) + r));
        }
        (
            Tensor::from_parts(tx.shape().to_vec(), dx),
            Tensor::from_parts(tg.shape().to_vec(), dgamma),
            Tensor::from_parts(tg.shape().to_vec(), sum_dy),
        )
    }
}

const LANES: usize = 8;

/// Sum with independent partial accumulators so the loop vectorizes.
fn lane_sum<T: Scalar>(xs: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for ch in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += v;
        }
    }
    acc.iter().copied().sum::<T>() + chunks.remainder().iter().copied().sum::<T>()
}

fn centered_sq_sum<T: Scalar>(xs: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut chunks = xs.chunks_exact(LANES);
    for ch in &mut chunks {
        for (a, &v) in acc.iter_mut().zip(ch) {
            *a += (v - mu) * (v - mu);
        }
    }
    acc.iter().copied().sum::<T>() + chunks.remainder().iter().map(|&v| (v - mu) * (v - mu)).sum::<T>()
}

/// `Σ w·(x − μ)`
fn centered_dot<T: Scalar>(ws: &[T], xs: &[T], mu: T) -> T {
    let mut acc = [T::zero(); LANES];
    let mut wc = ws.chunks_exact(LANES);
    let mut xc = xs.chunks_exact(LANES);
    for (w, x) in (&mut wc).zip(&mut xc) {
        for ((a, &wv), &xv) in acc.iter_mut().zip(w).zip(x) {
            *a += wv * (xv - mu);
        }
    }
    let tail: T = wc.remainder().iter().zip(xc.remainder()).map(|(&w, &x)| w * (x - mu)).sum();
    acc.iter().copied().sum::<T>() + tail
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn conv_identity_and_zero() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 2, 2], &[1.0, -2.0, 3.0, 4.0]));
        let id = g.input(t(&[1, 1, 1, 1], &[1.0]));
        let zero = g.input(t(&[1, 1, 3, 3], &[0.0; 9]));
        let y = g.conv2d(x, id, 1, 0).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, -2.0, 3.0, 4.0]);
        let z = g.conv2d(x, zero, 1, 1).unwrap();
        assert_eq!(g.value(z).shape(), &[1, 1, 2, 2]);
        assert!(g.value(z).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_ones_hand_sums() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1, 3, 3], &[1.0; 9]));
        let w = g.input(t(&[1, 1, 3, 3], &[1.0; 9]));
        let y = g.conv2d(x, w, 1, 1).unwrap();
        assert_eq!(g.value(y).data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_output_size_and_errors() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(&[2, 3, 30, 30]));
        let w = g.input(Tensor::zeros(&[4, 3, 3, 3]));
        let y = g.conv2d(x, w, 2, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 4, 15, 15]);
        let big = g.input(Tensor::zeros(&[1, 3, 5, 5]));
        let small = g.input(Tensor::zeros(&[1, 3, 2, 2]));
        assert!(matches!(g.conv2d(small, big, 1, 1), Err(NnError::ShapeMismatch(_))));
        let wrong_c = g.input(Tensor::zeros(&[1, 2, 1, 1]));
        assert!(matches!(g.conv2d(x, wrong_c, 1, 0), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn batch_norm_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[2, 1, 1, 2], &[-1.5, -0.5, 0.5, 1.5]));
        // standardize first, then check a second pass is the identity
        let ones = g.input(t(&[1], &[1.0]));
        let zeros = g.input(t(&[1], &[0.0]));
        let (std, _, _) = g.batch_norm_train(x, ones, zeros, 1e-5).unwrap();
        let s = g.value(std).data().to_vec();
        let mean = s.iter().sum::<f64>() / 4.0;
        let var = s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() <= 1e-6 && (var - 1.0).abs() <= 1e-4);
        let x2 = g.input(t(&[2, 1, 1, 2], &s));
        let (again, _, _) = g.batch_norm_train(x2, ones, zeros, 1e-5).unwrap();
        assert!(close(g.value(again).data(), &s, 1e-5));

        let gamma0 = g.input(t(&[1], &[0.0]));
        let beta5 = g.input(t(&[1], &[5.0]));
        let (c, _, _) = g.batch_norm_train(x, gamma0, beta5, 1e-5).unwrap();
        assert!(g.value(c).data().iter().all(|&v| v == 5.0));

        let one = g.input(t(&[1, 1, 1, 2], &[1.0, 2.0]));
        assert!(matches!(g.batch_norm_train(one, ones, zeros, 1e-5), Err(NnError::BatchTooSmall(1))));
    }

    #[test]
    fn relu_values_and_subgradient() {
        let mut store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s, &mut store).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);

        let mut g = Graph::new();
        let x = g.input(t(&[2], &[-3.0, -0.1]));
        let y = g.relu(x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_examples() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[1.0, 2.0]));
        let w = g.input(t(&[1, 2], &[3.0, 4.0]));
        let b = g.input(t(&[1], &[1.0]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[12.0]);

        let x = g.input(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
        let eye = g.input(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = g.input(t(&[2], &[0.0, 0.0]));
        let y = g.linear(x, eye, zb).unwrap();
        assert_eq!(g.value(y).data(), &[5.0, 6.0, 7.0, 8.0]);

        let zx = g.input(Tensor::zeros(&[3, 2]));
        let bias = g.input(t(&[2], &[0.5, -1.0]));
        let y = g.linear(zx, eye, bias).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, -1.0, 0.5, -1.0, 0.5, -1.0]);
        assert!(matches!(g.linear(zx, eye, b), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 7.0, 7.0, 7.0, 7.0]));
        let p = g.global_avg_pool(x).unwrap();
        assert_eq!(g.value(p).shape(), &[1, 2]);
        assert_eq!(g.value(p).data(), &[2.5, 7.0]);
        let x3 = g.input(t(&[1, 2, 2, 2], &[3.0, 6.0, 9.0, 12.0, 21.0, 21.0, 21.0, 21.0]));
        let p3 = g.global_avg_pool(x3).unwrap();
        assert_eq!(g.value(p3).data(), &[7.5, 21.0]);

        let m = g.input(t(&[1, 1, 3, 4], &[1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 8.0, 1.0, 9.0, 9.0, 9.0, 9.0]));
        let mp = g.max_pool2(m).unwrap();
        assert_eq!(g.value(mp).shape(), &[1, 1, 1, 2]);
        assert_eq!(g.value(mp).data(), &[5.0, 8.0]);
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::<f64>::new();
        let p = g.input(t(&[2, 1], &[1.0, 2.0]));
        let same = g.input(t(&[2, 1], &[1.0, 2.0]));
        let shifted = g.input(t(&[2, 1], &[0.0, 1.0]));
        let spread = g.input(t(&[2, 1], &[0.0, -1.0]));
        let l0 = g.mse_loss(p, same).unwrap();
        let l1 = g.mse_loss(p, shifted).unwrap();
        let l5 = g.mse_loss(p, spread).unwrap();
        assert_eq!(g.value(l0).data(), &[0.0]);
        assert_eq!(g.value(l1).data(), &[1.0]);
        assert_eq!(g.value(l5).data(), &[5.0]);
        let other = g.input(t(&[1, 2], &[0.0, 0.0]));
        assert!(matches!(g.mse_loss(p, other), Err(NnError::ShapeMismatch(_))));
    }

    #[test]
    fn mse_gradient_formula() {
        let mut store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let p = g.leaf(t(&[2, 1], &[1.0, 2.0]));
        let y = g.input(t(&[2, 1], &[0.0, -1.0]));
        let l = g.mse_loss(p, y).unwrap();
        g.backward(l, &mut store).unwrap();
        assert_eq!(g.grad(p).unwrap().data(), &[1.0, 3.0]);
    }

    #[test]
    fn backward_errors() {
        let mut store = ParamStore::<f64>::new();
        let mut g = Graph::new();
        let x = g.leaf(t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x, &mut store), Err(NnError::NotScalar(_))));
        let s = g.sum(x).unwrap();
        g.backward(s, &mut store).unwrap();
        assert!(matches!(g.backward(s, &mut store), Err(NnError::GraphConsumed)));
    }

    #[test]
    fn parameter_gradients() {
        let mut store = ParamStore::<f64>::new();
        let used = store.add_param("used", t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let unused = store.add_param("unused", t(&[3], &[1.0, 1.0, 1.0]));
        let mut g = Graph::new();
        let p = g.param(&store, used);
        let _q = g.param(&store, unused);
        let s = g.sum(p).unwrap();
        g.backward(s, &mut store).unwrap();
        assert_eq!(store.param(used).grad.data(), &[1.0; 4]);
        assert_eq!(store.param(unused).grad.data(), &[0.0; 3]);
    }

    #[test]
    fn shared_parameter_gradients_add() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_param("w", t(&[1, 1], &[2.0]));
        let b = store.add_param("b", t(&[1], &[0.0]));
        let mut g = Graph::new();
        let x = g.input(t(&[1, 1], &[3.0]));
        let (wv, bv) = (g.param(&store, w), g.param(&store, b));
        let h = g.linear(x, wv, bv).unwrap();
        // second use of the same parameters through a fresh snapshot
        let (wv2, bv2) = (g.param(&store, w), g.param(&store, b));
        let y = g.linear(h, wv2, bv2).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s, &mut store).unwrap();
        // y = w·(w·x + b) + b: dy/dw = 2wx + b = 12, dy/db = w + 1 = 3
        assert_eq!(store.param(w).grad.data(), &[12.0]);
        assert_eq!(store.param(b).grad.data(), &[3.0]);
    }

    #[test]
    fn non_finite_is_an_error() {
        let mut g = Graph::new();
        let x = g.input(t(&[1, 2], &[f64::MAX, f64::MAX]));
        let w = g.input(t(&[1, 2], &[f64::MAX, 1.0]));
        let b = g.input(t(&[1], &[0.0]));
        assert!(matches!(g.linear(x, w, b), Err(NnError::NonFinite { op: "linear" })));
    }
}
