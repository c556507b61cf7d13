use rand::Rng;

use crate::autodiff::{BnHyper, BnMode, Graph, Module, Parameter, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn kaiming<T: Scalar>(shape: &[usize], rng: &mut impl Rng) -> Tensor<T> {
    let fan_in: usize = shape[1..].iter().product();
    Tensor::randn(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Passes its input through unchanged as a separate graph node, so the
/// backbone and auxiliary branch can both consume it.
pub fn silence<T: Scalar>(g: &mut Graph<T>, x: Var) -> Var {
    g.identity(x)
}

/// Conv2d with autopad `k / 2`, then batch norm, then SiLU.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub weight: Parameter<T>,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Parameter<T>,
    pub running_var: Parameter<T>,
    pub stride: usize,
    pub bn: BnHyper,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(name: &str, cin: usize, cout: usize, k: usize, stride: usize, rng: &mut impl Rng) -> Result<Self> {
        if k.is_multiple_of(2) {
            return Err(invalid(format!("{name}: autopad needs an odd kernel, got {k}")));
        }
        if cin == 0 || cout == 0 || stride == 0 {
            return Err(invalid(format!("{name}: channels and stride must be positive")));
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.conv.weight"), kaiming(&[cout, cin, k, k], rng)),
            gamma: Parameter::new(format!("{name}.bn.weight"), Tensor::full(&[cout], T::one())).no_decay(),
            beta: Parameter::new(format!("{name}.bn.bias"), Tensor::zeros(&[cout])).no_decay(),
            running_mean: Parameter::buffer(format!("{name}.bn.running_mean"), Tensor::zeros(&[cout])),
            running_var: Parameter::buffer(format!("{name}.bn.running_var"), Tensor::full(&[cout], T::one())),
            stride,
            bn: BnHyper::default(),
        })
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn zero_weights(&mut self) {
        self.weight.value.data_mut().fill(T::zero());
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let w = g.param(&self.weight);
        let y = g.conv2d(x, w, None, self.stride, self.kernel() / 2)?;
        let gamma = g.param(&self.gamma);
        let beta = g.param(&self.beta);
        let y = g.batchnorm2d(
            y,
            gamma,
            beta,
            self.running_mean.value.data_mut(),
            self.running_var.value.data_mut(),
            mode,
            self.bn,
        )?;
        Ok(g.silu(y))
    }
}

impl<T: Scalar> Module<T> for ConvBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for p in [&self.weight, &self.gamma, &self.beta, &self.running_mean, &self.running_var] {
            f(p);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for p in [
            &mut self.weight,
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ] {
            f(p);
        }
    }
}

/// Two 3x3 conv blocks with a residual connection when `cin == cout`.
#[derive(Clone, Debug)]
pub struct RepNBottleneck<T> {
    pub cv1: ConvBlock<T>,
    pub cv2: ConvBlock<T>,
    pub residual: bool,
}

impl<T: Scalar> RepNBottleneck<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            cv1: ConvBlock::new(&format!("{name}.cv1"), cin, cout, 3, 1, rng)?,
            cv2: ConvBlock::new(&format!("{name}.cv2"), cout, cout, 3, 1, rng)?,
            residual: cin == cout,
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let y = self.cv1.forward(g, x, mode)?;
        let y = self.cv2.forward(g, y, mode)?;
        if self.residual {
            g.add(x, y)
        } else {
            Ok(y)
        }
    }
}

impl<T: Scalar> Module<T> for RepNBottleneck<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.cv1.visit(f);
        self.cv2.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.cv1.visit_mut(f);
        self.cv2.visit_mut(f);
    }
}

/// CSP wrapper: a bottleneck chain on one 1x1 projection, a plain 1x1
/// bypass on another, concatenated and fused by a final 1x1 conv.
#[derive(Clone, Debug)]
pub struct RepNCsp<T> {
    pub cv1: ConvBlock<T>,
    pub cv2: ConvBlock<T>,
    pub cv3: ConvBlock<T>,
    pub chain: Vec<RepNBottleneck<T>>,
}

impl<T: Scalar> RepNCsp<T> {
    pub fn new(name: &str, cin: usize, cout: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        let hidden = (cout / 2).max(1);
        let cv1 = ConvBlock::new(&format!("{name}.cv1"), cin, hidden, 1, 1, rng)?;
        let cv2 = ConvBlock::new(&format!("{name}.cv2"), cin, hidden, 1, 1, rng)?;
        let chain = (0..depth)
            .map(|i| RepNBottleneck::new(&format!("{name}.m.{i}"), hidden, hidden, rng))
            .collect::<Result<_>>()?;
        let cv3 = ConvBlock::new(&format!("{name}.cv3"), 2 * hidden, cout, 1, 1, rng)?;
        Ok(Self { cv1, cv2, cv3, chain })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let mut a = self.cv1.forward(g, x, mode)?;
        for b in &mut self.chain {
            a = b.forward(g, a, mode)?;
        }
        let b = self.cv2.forward(g, x, mode)?;
        let cat = g.concat_channels(&[a, b])?;
        self.cv3.forward(g, cat, mode)
    }
}

impl<T: Scalar> Module<T> for RepNCsp<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.cv1.visit(f);
        self.chain.iter().for_each(|b| b.visit(f));
        self.cv2.visit(f);
        self.cv3.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.cv1.visit_mut(f);
        self.chain.iter_mut().for_each(|b| b.visit_mut(f));
        self.cv2.visit_mut(f);
        self.cv3.visit_mut(f);
    }
}

/// GELAN aggregation block: 1x1 projection split into two halves; one half
/// passes through `depth` bottleneck stages with every stage output kept;
/// all retained maps are concatenated and fused by a 1x1 conv.
#[derive(Clone, Debug)]
pub struct RepNCspElan<T> {
    pub cv1: ConvBlock<T>,
    pub stages: Vec<RepNBottleneck<T>>,
    pub cv_out: ConvBlock<T>,
    pub mid: usize,
}

impl<T: Scalar> RepNCspElan<T> {
    pub fn new(name: &str, cin: usize, cout: usize, mid: usize, depth: usize, rng: &mut impl Rng) -> Result<Self> {
        if !mid.is_multiple_of(2) || mid == 0 {
            return Err(invalid(format!("{name}: mid channels must be even and positive, got {mid}")));
        }
        let half = mid / 2;
        let cv1 = ConvBlock::new(&format!("{name}.cv1"), cin, mid, 1, 1, rng)?;
        let stages = (0..depth)
            .map(|i| RepNBottleneck::new(&format!("{name}.stage.{i}"), half, half, rng))
            .collect::<Result<_>>()?;
        let cv_out = ConvBlock::new(&format!("{name}.cv_out"), (2 + depth) * half, cout, 1, 1, rng)?;
        Ok(Self {
            cv1,
            stages,
            cv_out,
            mid,
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let y = self.cv1.forward(g, x, mode)?;
        let half = self.mid / 2;
        let mut maps = g.split_channels(y, &[half, half])?;
        let mut cur = maps[1];
        for s in &mut self.stages {
            cur = s.forward(g, cur, mode)?;
            maps.push(cur);
        }
        let cat = g.concat_channels(&maps)?;
        self.cv_out.forward(g, cat, mode)
    }
}

impl<T: Scalar> Module<T> for RepNCspElan<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.cv1.visit(f);
        self.stages.iter().for_each(|b| b.visit(f));
        self.cv_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.cv1.visit_mut(f);
        self.stages.iter_mut().for_each(|b| b.visit_mut(f));
        self.cv_out.visit_mut(f);
    }
}

/// Downsampling by two: first channel half through a strided 3x3 conv
/// block, second half through 2x2 max-pool and a 1x1 conv block.
#[derive(Clone, Debug)]
pub struct ADown<T> {
    pub conv_half: ConvBlock<T>,
    pub pool_half: ConvBlock<T>,
    pub in_channels: usize,
}

impl<T: Scalar> ADown<T> {
    pub fn new(name: &str, cin: usize, cout: usize, rng: &mut impl Rng) -> Result<Self> {
        if !cin.is_multiple_of(2) || cin == 0 {
            return Err(invalid(format!("{name}: ADown needs even input channels, got {cin}")));
        }
        if !cout.is_multiple_of(2) || cout == 0 {
            return Err(invalid(format!("{name}: ADown needs even output channels, got {cout}")));
        }
        Ok(Self {
            conv_half: ConvBlock::new(&format!("{name}.cv1"), cin / 2, cout / 2, 3, 2, rng)?,
            pool_half: ConvBlock::new(&format!("{name}.cv2"), cin / 2, cout / 2, 1, 1, rng)?,
            in_channels: cin,
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let [_, c, h, w] = g.value(x).dims4("adown")?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::shape("adown", format!("spatial dims {h}x{w} must be even")));
        }
        if c != self.in_channels {
            return Err(Error::shape("adown", format!("expected {} channels, got {c}", self.in_channels)));
        }
        let halves = g.split_channels(x, &[c / 2, c / 2])?;
        let a = self.conv_half.forward(g, halves[0], mode)?;
        let b = g.maxpool2d(halves[1], 2, 2, 0)?;
        let b = self.pool_half.forward(g, b, mode)?;
        g.concat_channels(&[a, b])
    }
}

impl<T: Scalar> Module<T> for ADown<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.conv_half.visit(f);
        self.pool_half.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.conv_half.visit_mut(f);
        self.pool_half.visit_mut(f);
    }
}

/// Spatial pyramid pooling inside an ELAN shell: a 1x1 projection, three
/// chained stride-1 max-pools, all four maps concatenated and fused.
#[derive(Clone, Debug)]
pub struct SppElan<T> {
    pub cv1: ConvBlock<T>,
    pub cv_out: ConvBlock<T>,
    pub pool_kernel: usize,
}

impl<T: Scalar> SppElan<T> {
    pub fn new(name: &str, cin: usize, cout: usize, mid: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            cv1: ConvBlock::new(&format!("{name}.cv1"), cin, mid, 1, 1, rng)?,
            cv_out: ConvBlock::new(&format!("{name}.cv_out"), 4 * mid, cout, 1, 1, rng)?,
            pool_kernel: 5,
        })
    }

    /// The reduced map followed by the three pooled maps.
    pub fn pyramid(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<[Var; 4]> {
        let k = self.pool_kernel;
        let y = self.cv1.forward(g, x, mode)?;
        let p1 = g.maxpool2d(y, k, 1, k / 2)?;
        let p2 = g.maxpool2d(p1, k, 1, k / 2)?;
        let p3 = g.maxpool2d(p2, k, 1, k / 2)?;
        Ok([y, p1, p2, p3])
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let maps = self.pyramid(g, x, mode)?;
        let cat = g.concat_channels(&maps)?;
        self.cv_out.forward(g, cat, mode)
    }
}

impl<T: Scalar> Module<T> for SppElan<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.cv1.visit(f);
        self.cv_out.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.cv1.visit_mut(f);
        self.cv_out.visit_mut(f);
    }
}

/// 1x1 conv (with bias) to `sum(splits)` channels, split in order.
#[derive(Clone, Debug)]
pub struct CbLinear<T> {
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
    pub splits: Vec<usize>,
}

impl<T: Scalar> CbLinear<T> {
    pub fn new(name: &str, cin: usize, splits: &[usize], rng: &mut impl Rng) -> Result<Self> {
        if splits.is_empty() || splits.contains(&0) {
            return Err(invalid(format!("{name}: split sizes must be non-empty and positive")));
        }
        let total = splits.iter().sum();
        Ok(Self {
            weight: Parameter::new(format!("{name}.conv.weight"), kaiming(&[total, cin, 1, 1], rng)),
            bias: Parameter::new(format!("{name}.conv.bias"), Tensor::zeros(&[total])).no_decay(),
            splits: splits.to_vec(),
        })
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let w = g.param(&self.weight);
        let b = g.param(&self.bias);
        let y = g.conv2d(x, w, Some(b), 1, 0)?;
        if self.splits.len() == 1 {
            return Ok(vec![y]);
        }
        g.split_channels(y, &self.splits)
    }
}

impl<T: Scalar> Module<T> for CbLinear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        f(&self.weight);
        f(&self.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

/// Sums `pieces`, each nearest-resized to the target's spatial size, onto `target`.
pub fn cb_fuse<T: Scalar>(g: &mut Graph<T>, pieces: &[Var], target: Var) -> Result<Var> {
    let [n, c, h, w] = g.value(target).dims4("cb_fuse")?;
    let mut acc = target;
    for &p in pieces {
        let [pn, pc, ph, pw] = g.value(p).dims4("cb_fuse")?;
        if pn != n || pc != c {
            return Err(Error::shape(
                "cb_fuse",
                format!("piece {:?} does not match target N={n}, C={c}", g.shape(p)),
            ));
        }
        let resized = if (ph, pw) == (h, w) { p } else { g.resize_nearest(p, h, w)? };
        acc = g.add(acc, resized)?;
    }
    Ok(acc)
}

/// Additive coupling: `y1 = x1 + f(x2)`, `y2 = x2 + g(y1)`, exactly invertible.
#[derive(Clone, Debug)]
pub struct RevCouple<T> {
    pub f: ConvBlock<T>,
    pub g: ConvBlock<T>,
    pub channels: usize,
}

impl<T: Scalar> RevCouple<T> {
    pub fn new(name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        if !channels.is_multiple_of(2) || channels == 0 {
            return Err(invalid(format!("{name}: coupling needs even channels, got {channels}")));
        }
        let half = channels / 2;
        Ok(Self {
            f: ConvBlock::new(&format!("{name}.f"), half, half, 3, 1, rng)?,
            g: ConvBlock::new(&format!("{name}.g"), half, half, 3, 1, rng)?,
            channels,
        })
    }

    fn halves(&self, g: &mut Graph<T>, x: Var) -> Result<Vec<Var>> {
        let c = g.value(x).dims4("rev_couple")?[1];
        if c != self.channels {
            return Err(Error::shape(
                "rev_couple",
                format!("expected {} channels, got {c}", self.channels),
            ));
        }
        g.split_channels(x, &[c / 2, c / 2])
    }

    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: BnMode) -> Result<Var> {
        let h = self.halves(g, x)?;
        let fx2 = self.f.forward(g, h[1], mode)?;
        let y1 = g.add(h[0], fx2)?;
        let gy1 = self.g.forward(g, y1, mode)?;
        let y2 = g.add(h[1], gy1)?;
        g.concat_channels(&[y1, y2])
    }

    /// Recovers the input of [`RevCouple::forward`]. Never updates
    /// batch-norm running statistics.
    pub fn inverse(&mut self, g: &mut Graph<T>, y: Var, mode: BnMode) -> Result<Var> {
        let mode = mode.frozen();
        let h = self.halves(g, y)?;
        let gy1 = self.g.forward(g, h[0], mode)?;
        let x2 = g.sub(h[1], gy1)?;
        let fx2 = self.f.forward(g, x2, mode)?;
        let x1 = g.sub(h[0], fx2)?;
        g.concat_channels(&[x1, x2])
    }
}

impl<T: Scalar> Module<T> for RevCouple<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.f.visit(f);
        self.g.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.f.visit_mut(f);
        self.g.visit_mut(f);
    }
}

/// Per-scale 1x1 prediction conv producing `N x S x S x (B*5 + C)` grids.
///
/// Each predictor's slots are `x, y, w, h, confidence`; `x, y, w, h` leave
/// the head already squashed to `[0, 1]`, confidence and class logits raw.
#[derive(Clone, Debug)]
pub struct DetectHead<T> {
    pub weights: Vec<Parameter<T>>,
    pub biases: Vec<Parameter<T>>,
    pub boxes: usize,
    pub classes: usize,
}

/// Initial confidence-logit bias; keeps early objectness near zero.
pub const CONF_BIAS_INIT: f64 = -4.0;

impl<T: Scalar> DetectHead<T> {
    pub fn new(name: &str, in_channels: &[usize], boxes: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if boxes == 0 || classes == 0 {
            return Err(invalid(format!("{name}: need B >= 1 and C >= 1")));
        }
        let depth = boxes * 5 + classes;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for (i, &cin) in in_channels.iter().enumerate() {
            weights.push(Parameter::new(
                format!("{name}.{i}.weight"),
                kaiming(&[depth, cin, 1, 1], rng),
            ));
            let mut b = Tensor::zeros(&[depth]);
            for k in 0..boxes {
                b.data_mut()[k * 5 + 4] = T::of(CONF_BIAS_INIT);
            }
            biases.push(Parameter::new(format!("{name}.{i}.bias"), b).no_decay());
        }
        Ok(Self {
            weights,
            biases,
            boxes,
            classes,
        })
    }

    pub fn depth(&self) -> usize {
        self.boxes * 5 + self.classes
    }

    /// Last-axis positions that pass through a sigmoid.
    pub fn sigmoid_mask(&self) -> Vec<bool> {
        (0..self.depth())
            .map(|i| i < self.boxes * 5 && i % 5 < 4)
            .collect()
    }

    pub fn forward(&mut self, g: &mut Graph<T>, features: &[Var]) -> Result<Vec<Var>> {
        if features.len() != self.weights.len() {
            return Err(Error::shape(
                "detect_head",
                format!("{} feature maps for {} scales", features.len(), self.weights.len()),
            ));
        }
        let mask = self.sigmoid_mask();
        let mut out = Vec::with_capacity(features.len());
        for (i, &f) in features.iter().enumerate() {
            let w = g.param(&self.weights[i]);
            let b = g.param(&self.biases[i]);
            let y = g.conv2d(f, w, Some(b), 1, 0)?;
            let y = g.to_nhwc(y)?;
            out.push(g.partial_sigmoid(y, mask.clone())?);
        }
        Ok(out)
    }
}

impl<T: Scalar> Module<T> for DetectHead<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        for (w, b) in self.weights.iter().zip(&self.biases) {
            f(w);
            f(b);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            f(w);
            f(b);
        }
    }
}
