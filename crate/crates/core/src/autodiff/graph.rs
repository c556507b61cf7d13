//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::conv::{self, ConvGeom};
use super::norm::{channel_stats, BnHyper, BnMode};
use super::pool;
use super::{Parameter, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberate corruption of one op's gradient rule. Test fixture for the
/// gradient checker's negative control.
#[doc(hidden)]
#[derive(Clone, Copy, Debug)]
pub struct GradFault {
    pub op: &'static str,
    pub scale: f64,
}

/// Names reported for recorded ops (fused ops report their own name).
pub const OP_NAMES: [&str; 17] = [
    "identity",
    "conv2d",
    "batchnorm2d",
    "silu",
    "sigmoid",
    "maxpool2d",
    "resize_nearest",
    "concat_channels",
    "slice_channels",
    "add",
    "sub",
    "mul",
    "scale",
    "sum",
    "dot",
    "to_nhwc",
    "yolo_loss",
];

enum Op<T> {
    Leaf,
    Identity(Var),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    /// Keeps `sigmoid(x)` so the backward pass needs no exponentials.
    Silu { input: Var, sig: Vec<T> },
    /// Sigmoid applied to the positions of the last axis where `mask` is set.
    PartialSigmoid { input: Var, mask: Vec<bool> },
    MaxPool { input: Var, argmax: Vec<usize> },
    Resize(Var),
    Concat(Vec<Var>),
    SliceChannels { input: Var, start: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Sum(Var),
    Dot { input: Var, weights: Vec<T> },
    ToNhwc(Var),
    /// Scalar-valued op whose local gradient was computed during the forward pass.
    Fused {
        name: &'static str,
        inputs: Vec<Var>,
        local: Vec<Vec<T>>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Identity(_) => "identity",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batchnorm2d",
            Op::Silu { .. } => "silu",
            Op::PartialSigmoid { .. } => "sigmoid",
            Op::MaxPool { .. } => "maxpool2d",
            Op::Resize(_) => "resize_nearest",
            Op::Concat(_) => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Dot { .. } => "dot",
            Op::ToNhwc(_) => "to_nhwc",
            Op::Fused { name, .. } => name,
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

/// Computation tape. One graph per forward pass; drop it afterwards.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<String, Var>,
    fault: Option<GradFault>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: HashMap::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn inject_fault(&mut self, fault: GradFault) {
        self.fault = Some(fault);
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds a leaf. Leaves with `requires_grad` receive gradients on backward.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Leaf for a model parameter, created once per name.
    pub fn param(&mut self, p: &Parameter<T>) -> Var {
        if let Some(&v) = self.params.get(&p.name) {
            return v;
        }
        let v = self.input(p.value.clone(), p.trainable);
        self.params.insert(p.name.clone(), v);
        v
    }

    /// Makes later `param` lookups of `name` resolve to `var`.
    pub fn bind_param(&mut self, name: &str, var: Var) {
        self.params.insert(name.to_string(), var);
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).and_then(|&v| self.grad(v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// Number of recorded (non-leaf) operations.
    pub fn op_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| !matches!(n.op, Op::Leaf))
            .count()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims4(&self, v: Var, op: &'static str) -> Result<[usize; 4]> {
        self.value(v).dims4(op)
    }

    fn check_finite(value: &Tensor<T>, op: &'static str) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn identity(&mut self, x: Var) -> Var {
        let value = self.value(x).clone();
        let rg = self.rg(x);
        self.push(value, Op::Identity(x), rg)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        const OP: &str = "conv2d";
        let [n, cin, h, w] = self.dims4(input, OP)?;
        let [cout, wcin, kh, kw] = self.dims4(weight, OP)?;
        if wcin != cin {
            return Err(Error::shape(
                OP,
                format!("input channels {cin} but weight expects {wcin}"),
            ));
        }
        if stride == 0 {
            return Err(Error::shape(OP, "stride must be positive"));
        }
        if h + 2 * padding < kh {
            return Err(Error::shape(
                OP,
                format!("height {h} + 2*{padding} padding smaller than kernel {kh}"),
            ));
        }
        if w + 2 * padding < kw {
            return Err(Error::shape(
                OP,
                format!("width {w} + 2*{padding} padding smaller than kernel {kw}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(Error::shape(
                    OP,
                    format!("bias shape {:?}, expected [{cout}]", self.shape(b)),
                ));
            }
        }
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad: padding,
            oh: (h + 2 * padding - kh) / stride + 1,
            ow: (w + 2 * padding - kw) / stride + 1,
        };
        let out = conv::forward(
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
            &geom,
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(&[n, cout, geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Batch normalization over `N, H, W` per channel.
    ///
    /// `running_mean`/`running_var` are read in [`BnMode::Running`] and
    /// updated by exponential moving average in [`BnMode::Batch`].
    #[allow(clippy::too_many_arguments)]
    pub fn batchnorm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running_mean: &mut [T],
        running_var: &mut [T],
        mode: BnMode,
        hyper: BnHyper,
    ) -> Result<Var> {
        const OP: &str = "batchnorm2d";
        let [n, c, h, w] = self.dims4(input, OP)?;
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    OP,
                    format!("{what} shape {:?}, expected [{c}]", self.shape(v)),
                ));
            }
        }
        if running_mean.len() != c || running_var.len() != c {
            return Err(Error::shape(OP, format!("running stats length, expected {c}")));
        }
        let plane = h * w;
        let eps = T::of(hyper.eps);
        let (mean, inv_std) = if mode.uses_batch_stats() {
            if n * plane < 2 {
                return Err(Error::shape(
                    OP,
                    "batch statistics need at least 2 values per channel",
                ));
            }
            let (mean, var) = channel_stats(self.value(input).data(), n, c, plane);
            if var.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: OP });
            }
            if mode == BnMode::Batch {
                let mom = T::of(hyper.momentum);
                let m = (n * plane) as f64;
                let unbias = T::of(m / (m - 1.0));
                for ch in 0..c {
                    running_mean[ch] = (T::one() - mom) * running_mean[ch] + mom * mean[ch];
                    running_var[ch] = (T::one() - mom) * running_var[ch] + mom * var[ch] * unbias;
                }
            }
            let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
            (mean, inv_std)
        } else {
            let inv_std = running_var
                .iter()
                .map(|&v| T::one() / (v + eps).sqrt())
                .collect();
            (running_mean.to_vec(), inv_std)
        };
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut out = Vec::with_capacity(x.len());
        for i in 0..n {
            for ch in 0..c {
                let scale = g[ch] * inv_std[ch];
                let shift = b[ch] - mean[ch] * scale;
                let off = (i * c + ch) * plane;
                out.extend(x[off..off + plane].iter().map(|&e| e * scale + shift));
            }
        }
        let value = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.rg(input) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            value,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats: mode.uses_batch_stats(),
            },
            rg,
        ))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let sig: Vec<T> = xv.data().iter().map(|&v| sigmoid(v)).collect();
        let data = xv.data().iter().zip(&sig).map(|(&v, &s)| v * s).collect();
        let value = Tensor::new(xv.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Silu { input: x, sig }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let last = *self.shape(x).last().unwrap_or(&1);
        self.push_partial_sigmoid(x, vec![true; last])
    }

    /// Sigmoid on the last-axis positions selected by `mask`; identity elsewhere.
    pub fn partial_sigmoid(&mut self, x: Var, mask: Vec<bool>) -> Result<Var> {
        let last = *self.shape(x).last().unwrap_or(&0);
        if mask.len() != last {
            return Err(Error::shape(
                "sigmoid",
                format!("mask length {} vs last axis {last}", mask.len()),
            ));
        }
        Ok(self.push_partial_sigmoid(x, mask))
    }

    fn push_partial_sigmoid(&mut self, x: Var, mask: Vec<bool>) -> Var {
        let src = self.value(x);
        let last = mask.len().max(1);
        let data = src
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| if mask[i % last] { sigmoid(v) } else { v })
            .collect();
        let value = Tensor::new(src.shape(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::PartialSigmoid { input: x, mask }, rg)
    }

    pub fn maxpool2d(&mut self, x: Var, k: usize, stride: usize, padding: usize) -> Result<Var> {
        const OP: &str = "maxpool2d";
        let [n, c, h, w] = self.dims4(x, OP)?;
        if k == 0 || stride == 0 {
            return Err(Error::shape(OP, "kernel and stride must be positive"));
        }
        if 2 * padding > k {
            return Err(Error::shape(
                OP,
                format!("padding {padding} exceeds half the kernel {k}"),
            ));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(
                OP,
                format!("kernel {k} larger than padded input {h}x{w} (pad {padding})"),
            ));
        }
        let oh = (h + 2 * padding - k) / stride + 1;
        let ow = (w + 2 * padding - k) / stride + 1;
        let (out, argmax) =
            pool::maxpool_forward(self.value(x).data(), n * c, (h, w), (oh, ow), k, stride, padding);
        let value = Tensor::new(&[n, c, oh, ow], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::MaxPool { input: x, argmax }, rg))
    }

    /// Nearest-neighbour resize to `out_h x out_w`.
    pub fn resize_nearest(&mut self, x: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "resize_nearest")?;
        if out_h == 0 || out_w == 0 {
            return Err(Error::shape("resize_nearest", "empty output size"));
        }
        let out = pool::resize_forward(self.value(x).data(), n * c, (h, w), (out_h, out_w));
        let value = Tensor::new(&[n, c, out_h, out_w], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Resize(x), rg))
    }

    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let [_, _, h, w] = self.dims4(x, "upsample_nearest")?;
        if factor == 0 {
            return Err(Error::shape("upsample_nearest", "factor must be positive"));
        }
        self.resize_nearest(x, h * factor, w * factor)
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        const OP: &str = "concat_channels";
        let first = *inputs
            .first()
            .ok_or_else(|| Error::shape(OP, "no inputs"))?;
        let [n, _, h, w] = self.dims4(first, OP)?;
        let mut ctotal = 0;
        for &v in inputs {
            let [vn, vc, vh, vw] = self.dims4(v, OP)?;
            if (vn, vh, vw) != (n, h, w) {
                return Err(Error::shape(
                    OP,
                    format!("input {:?} does not match N,H,W of {:?}", self.shape(v), self.shape(first)),
                ));
            }
            ctotal += vc;
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * ctotal * plane);
        for i in 0..n {
            for &v in inputs {
                let t = self.value(v);
                let c = t.shape()[1];
                out.extend_from_slice(&t.data()[i * c * plane..(i + 1) * c * plane]);
            }
        }
        let value = Tensor::new(&[n, ctotal, h, w], out)?;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(value, Op::Concat(inputs.to_vec()), rg))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "slice_channels")?;
        if start + len > c || len == 0 {
            return Err(Error::shape(
                "slice_channels",
                format!("channels {start}..{} out of 0..{c}", start + len),
            ));
        }
        let plane = h * w;
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(n * len * plane);
        for i in 0..n {
            out.extend_from_slice(&src[(i * c + start) * plane..(i * c + start + len) * plane]);
        }
        let value = Tensor::new(&[n, len, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceChannels { input: x, start }, rg))
    }

    /// Splits along channels into consecutive pieces of the given sizes.
    pub fn split_channels(&mut self, x: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let c = self.dims4(x, "split_channels")?[1];
        if sizes.iter().sum::<usize>() != c {
            return Err(Error::shape(
                "split_channels",
                format!("sizes {sizes:?} do not sum to {c} channels"),
            ));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &s in sizes {
            out.push(self.slice_channels(x, start, s)?);
            start += s;
        }
        Ok(out)
    }

    fn binary(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        let rg = self.rg(x);
        self.push(value, Op::Scale(x, factor), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Scalar `sum(weights * x)` with constant weights.
    pub fn dot(&mut self, x: Var, weights: Vec<T>) -> Result<Var> {
        if weights.len() != self.value(x).numel() {
            return Err(Error::shape(
                "dot",
                format!("{} weights for {} values", weights.len(), self.value(x).numel()),
            ));
        }
        let s = self
            .value(x)
            .data()
            .iter()
            .zip(&weights)
            .map(|(&a, &b)| a * b)
            .sum::<T>();
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(s), Op::Dot { input: x, weights }, rg))
    }

    /// Permutes `N, C, H, W` to `N, H, W, C`.
    pub fn to_nhwc(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.dims4(x, "to_nhwc")?;
        let src = self.value(x).data();
        let plane = h * w;
        let mut out = vec![T::zero(); src.len()];
        for i in 0..n {
            for ch in 0..c {
                let s = &src[(i * c + ch) * plane..(i * c + ch + 1) * plane];
                for (p, &v) in s.iter().enumerate() {
                    out[(i * plane + p) * c + ch] = v;
                }
            }
        }
        let value = Tensor::new(&[n, h, w, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToNhwc(x), rg))
    }

    /// Records a scalar op whose value and local gradients (one buffer per
    /// input, same length as that input) were computed by the caller.
    pub fn fused_scalar(
        &mut self,
        name: &'static str,
        value: T,
        inputs: Vec<Var>,
        local: Vec<Vec<T>>,
    ) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(Error::shape(name, "one local gradient per input required"));
        }
        for (&v, l) in inputs.iter().zip(&local) {
            if l.len() != self.value(v).numel() {
                return Err(Error::shape(name, "local gradient length mismatch"));
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(Tensor::scalar(value), Op::Fused { name, inputs, local }, rg))
    }

    /// Fills gradient slots of every node reachable backwards from `loss`.
    ///
    /// Gradients accumulate across calls; use [`Graph::zero_grads`] to reset.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = &self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss must be a scalar, got shape {:?}", root.value.shape()),
            ));
        }
        Self::check_finite(&root.value, root.op.name())?;
        if !root.requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        // Op that most recently wrote into each node's gradient, for error attribution.
        let mut writer: Vec<usize> = (0..=loss.0).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else {
                continue;
            };
            if gout.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: self.nodes[writer[i]].op.name(),
                });
            }
            let node = &self.nodes[i];
            match self.fault {
                Some(f) if f.op == node.op.name() => {
                    let scale = T::of(f.scale);
                    let corrupted: Vec<T> = gout.iter().map(|&g| g * scale).collect();
                    self.propagate(i, &corrupted, &mut grads);
                }
                _ => self.propagate(i, &gout, &mut grads),
            }
            for p in self.parents(i) {
                writer[p.0] = i;
            }
            let node = &mut self.nodes[i];
            let shape = node.value.shape().to_vec();
            match &mut node.grad {
                Some(acc) => acc
                    .data_mut()
                    .iter_mut()
                    .zip(&gout)
                    .for_each(|(a, &b)| *a += b),
                None => node.grad = Some(Tensor::new(&shape, gout)?),
            }
        }
        Ok(())
    }

    fn parents(&self, i: usize) -> Vec<Var> {
        match &self.nodes[i].op {
            Op::Leaf => vec![],
            Op::Identity(x)
            | Op::Silu { input: x, .. }
            | Op::PartialSigmoid { input: x, .. }
            | Op::MaxPool { input: x, .. }
            | Op::Resize(x)
            | Op::SliceChannels { input: x, .. }
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Dot { input: x, .. }
            | Op::ToNhwc(x) => vec![*x],
            Op::Conv2d {
                input, weight, bias, ..
            } => {
                let mut v = vec![*input, *weight];
                v.extend(bias);
                v
            }
            Op::BatchNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Concat(xs) => xs.clone(),
            Op::Fused { inputs, .. } => inputs.clone(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        }
    }

    fn propagate(&self, i: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let rg = |v: &Var| nodes[v.0].requires_grad;
        let numel = |v: &Var| nodes[v.0].value.numel();
        fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Identity(x) => {
                if rg(x) {
                    let g = slot(grads, *x, numel(x));
                    g.iter_mut().zip(gout).for_each(|(a, &b)| *a += b);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let xv = nodes[input.0].value.data();
                let wv = nodes[weight.0].value.data();
                let mut dx = rg(input).then(|| grads[input.0].take().unwrap_or_else(|| vec![T::zero(); xv.len()]));
                let mut dw = rg(weight).then(|| grads[weight.0].take().unwrap_or_else(|| vec![T::zero(); wv.len()]));
                let mut db = bias
                    .filter(|b| rg(b))
                    .map(|b| grads[b.0].take().unwrap_or_else(|| vec![T::zero(); geom.cout]));
                conv::backward(
                    xv,
                    wv,
                    gout,
                    geom,
                    dx.as_deref_mut(),
                    dw.as_deref_mut(),
                    db.as_deref_mut(),
                );
                if let Some(d) = dx {
                    grads[input.0] = Some(d);
                }
                if let Some(d) = dw {
                    grads[weight.0] = Some(d);
                }
                if let (Some(b), Some(d)) = (bias, db) {
                    grads[b.0] = Some(d);
                }
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                inv_std,
                batch_stats,
            } => {
                let t = &nodes[input.0].value;
                let (n, c) = (t.shape()[0], t.shape()[1]);
                let plane = t.shape()[2] * t.shape()[3];
                let x = t.data();
                let gam = nodes[gamma.0].value.data();
                let mut sum_dy = vec![T::zero(); c];
                let mut sum_dy_xhat = vec![T::zero(); c];
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        for k in off..off + plane {
                            let xhat = (x[k] - mean[ch]) * inv_std[ch];
                            sum_dy[ch] += gout[k];
                            sum_dy_xhat[ch] += gout[k] * xhat;
                        }
                    }
                }
                if rg(gamma) {
                    let g = slot(grads, *gamma, c);
                    g.iter_mut().zip(&sum_dy_xhat).for_each(|(a, &b)| *a += b);
                }
                if rg(beta) {
                    let g = slot(grads, *beta, c);
                    g.iter_mut().zip(&sum_dy).for_each(|(a, &b)| *a += b);
                }
                if rg(input) {
                    let m = T::of((n * plane) as f64);
                    let g = slot(grads, *input, x.len());
                    for b in 0..n {
                        for ch in 0..c {
                            let off = (b * c + ch) * plane;
                            let k_scale = gam[ch] * inv_std[ch];
                            if *batch_stats {
                                let mdy = sum_dy[ch] / m;
                                let mdyx = sum_dy_xhat[ch] / m;
                                for k in off..off + plane {
                                    let xhat = (x[k] - mean[ch]) * inv_std[ch];
                                    g[k] += k_scale * (gout[k] - mdy - xhat * mdyx);
                                }
                            } else {
                                for k in off..off + plane {
                                    g[k] += k_scale * gout[k];
                                }
                            }
                        }
                    }
                }
            }
            Op::Silu { input: x, sig } => {
                if rg(x) {
                    let xv = nodes[x.0].value.data();
                    let g = slot(grads, *x, xv.len());
                    for (((a, &v), &go), &s) in g.iter_mut().zip(xv).zip(gout).zip(sig) {
                        *a += go * s * (T::one() + v * (T::one() - s));
                    }
                }
            }
            Op::PartialSigmoid { input, mask } => {
                if rg(input) {
                    let y = nodes[i].value.data();
                    let last = mask.len().max(1);
                    let g = slot(grads, *input, y.len());
                    for (k, (a, &go)) in g.iter_mut().zip(gout).enumerate() {
                        *a += if mask[k % last] {
                            go * y[k] * (T::one() - y[k])
                        } else {
                            go
                        };
                    }
                }
            }
            Op::MaxPool { input, argmax } => {
                if rg(input) {
                    let g = slot(grads, *input, numel(input));
                    for (&src, &go) in argmax.iter().zip(gout) {
                        g[src] += go;
                    }
                }
            }
            Op::Resize(x) => {
                if rg(x) {
                    let s = nodes[x.0].value.shape();
                    let o = nodes[i].value.shape();
                    let (planes, hw, ohw) = (s[0] * s[1], (s[2], s[3]), (o[2], o[3]));
                    let g = slot(grads, *x, numel(x));
                    pool::resize_backward(gout, g, planes, hw, ohw);
                }
            }
            Op::Concat(xs) => {
                let o = nodes[i].value.shape();
                let (n, ctot, plane) = (o[0], o[1], o[2] * o[3]);
                let mut c0 = 0;
                for x in xs {
                    let c = nodes[x.0].value.shape()[1];
                    if rg(x) {
                        let g = slot(grads, *x, numel(x));
                        for b in 0..n {
                            let src = &gout[(b * ctot + c0) * plane..(b * ctot + c0 + c) * plane];
                            let dst = &mut g[b * c * plane..(b + 1) * c * plane];
                            dst.iter_mut().zip(src).for_each(|(a, &v)| *a += v);
                        }
                    }
                    c0 += c;
                }
            }
            Op::SliceChannels { input, start } => {
                if rg(input) {
                    let s = nodes[input.0].value.shape();
                    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                    let len = nodes[i].value.shape()[1];
                    let g = slot(grads, *input, numel(input));
                    for b in 0..n {
                        let dst = &mut g[(b * c + start) * plane..(b * c + start + len) * plane];
                        let src = &gout[b * len * plane..(b + 1) * len * plane];
                        dst.iter_mut().zip(src).for_each(|(a, &v)| *a += v);
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(nodes[i].op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if rg(a) {
                    let g = slot(grads, *a, gout.len());
                    g.iter_mut().zip(gout).for_each(|(x, &v)| *x += v);
                }
                if rg(b) {
                    let g = slot(grads, *b, gout.len());
                    g.iter_mut().zip(gout).for_each(|(x, &v)| *x += sign * v);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (nodes[a.0].value.data(), nodes[b.0].value.data());
                if rg(a) {
                    let g = slot(grads, *a, gout.len());
                    for k in 0..gout.len() {
                        g[k] += gout[k] * bv[k];
                    }
                }
                if rg(b) {
                    let g = slot(grads, *b, gout.len());
                    for k in 0..gout.len() {
                        g[k] += gout[k] * av[k];
                    }
                }
            }
            Op::Scale(x, f) => {
                if rg(x) {
                    let g = slot(grads, *x, gout.len());
                    g.iter_mut().zip(gout).for_each(|(a, &v)| *a += v * *f);
                }
            }
            Op::Sum(x) => {
                if rg(x) {
                    let g = slot(grads, *x, numel(x));
                    g.iter_mut().for_each(|a| *a += gout[0]);
                }
            }
            Op::Dot { input, weights } => {
                if rg(input) {
                    let g = slot(grads, *input, weights.len());
                    g.iter_mut().zip(weights).for_each(|(a, &w)| *a += gout[0] * w);
                }
            }
            Op::ToNhwc(x) => {
                if rg(x) {
                    let s = nodes[x.0].value.shape();
                    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
                    let g = slot(grads, *x, numel(x));
                    for b in 0..n {
                        for ch in 0..c {
                            for p in 0..plane {
                                g[(b * c + ch) * plane + p] += gout[(b * plane + p) * c + ch];
                            }
                        }
                    }
                }
            }
            Op::Fused { inputs, local, .. } => {
                for (x, l) in inputs.iter().zip(local) {
                    if rg(x) {
                        let g = slot(grads, *x, l.len());
                        g.iter_mut().zip(l).for_each(|(a, &v)| *a += gout[0] * v);
                    }
                }
            }
        }
    }
}
