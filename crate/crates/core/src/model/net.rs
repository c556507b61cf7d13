use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{BnMode, Graph, Module, Parameter, Scalar, Tensor, Var};
use crate::error::{Error, Result};
use crate::nn::{cb_fuse, silence, ADown, CbLinear, ConvBlock, DetectHead, RepNCspElan, RevCouple, SppElan};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running-stat updates, auxiliary branch executed.
    Train,
    /// Running statistics, main branch only.
    Infer,
}

/// Raw per-scale grids, each `N x S x S x (B*5 + C)`, smallest stride first.
#[derive(Clone, Debug)]
pub struct Predictions {
    pub main: Vec<Var>,
    pub aux: Option<Vec<Var>>,
}

#[derive(Clone, Debug)]
struct Stage<T> {
    down: ADown<T>,
    elan: RepNCspElan<T>,
    stride: usize,
}

/// Training-only integration network: a tap per head-scale backbone feature
/// emitting one slice per target scale, fused per scale, passed through a
/// reversible coupling and its own prediction head.
#[derive(Clone, Debug)]
struct AuxBranch<T> {
    taps: Vec<CbLinear<T>>,
    couples: Vec<RevCouple<T>>,
    head: DetectHead<T>,
}

impl<T: Scalar> Module<T> for AuxBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.taps.iter().for_each(|t| t.visit(f));
        self.couples.iter().for_each(|c| c.visit(f));
        self.head.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.taps.iter_mut().for_each(|t| t.visit_mut(f));
        self.couples.iter_mut().for_each(|c| c.visit_mut(f));
        self.head.visit_mut(f);
    }
}

/// The detector: backbone, top-down neck, per-scale heads and, optionally,
/// the auxiliary branch used only while training.
#[derive(Clone, Debug)]
pub struct Model<T> {
    config: ModelConfig,
    stem: ConvBlock<T>,
    stages: Vec<Stage<T>>,
    spp: SppElan<T>,
    /// One aggregation block per non-deepest scale, deepest-but-one first.
    neck: Vec<RepNCspElan<T>>,
    head: DetectHead<T>,
    aux: Option<AuxBranch<T>>,
    stripped: bool,
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let rng = &mut rng;
        let d = config.depth;
        let stem = ConvBlock::new("backbone.stem", 3, config.stage_channels(2), 3, 2, rng)?;

        let deepest = *config.strides.last().expect("validated");
        let mut stages = Vec::new();
        let mut c_prev = config.stage_channels(2);
        let mut stride = 4;
        while stride <= deepest {
            let c = config.stage_channels(stride);
            let name = format!("backbone.s{stride}");
            stages.push(Stage {
                down: ADown::new(&format!("{name}.down"), c_prev, c, rng)?,
                elan: RepNCspElan::new(&format!("{name}.elan"), c, c, c, d, rng)?,
                stride,
            });
            c_prev = c;
            stride *= 2;
        }
        let c_deep = config.stage_channels(deepest);
        let spp = SppElan::new("backbone.spp", c_deep, c_deep, c_deep / 2, rng)?;

        let mut neck = Vec::new();
        let mut c_up = c_deep;
        for &s in config.strides.iter().rev().skip(1) {
            let c = config.stage_channels(s);
            neck.push(RepNCspElan::new(&format!("neck.s{s}"), c_up + c, c, c, d, rng)?);
            c_up = c;
        }
        let head_in: Vec<usize> = config.strides.iter().map(|&s| config.stage_channels(s)).collect();
        let head = DetectHead::new("head", &head_in, config.boxes, config.classes, rng)?;

        let aux = if config.aux_enabled {
            let a = config.aux_channels();
            let n = config.strides.len();
            let mut taps = Vec::new();
            let mut couples = Vec::new();
            for &s in &config.strides {
                taps.push(CbLinear::new(&format!("aux.tap.s{s}"), config.stage_channels(s), &vec![a; n], rng)?);
                couples.push(RevCouple::new(&format!("aux.rev.s{s}"), a, rng)?);
            }
            let head = DetectHead::new("aux.head", &vec![a; n], config.boxes, config.classes, rng)?;
            let mut branch = AuxBranch { taps, couples, head };
            branch.set_aux_only();
            Some(branch)
        } else {
            None
        };
        Ok(Self {
            config,
            stem,
            stages,
            spp,
            neck,
            head,
            aux,
            stripped: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn has_aux(&self) -> bool {
        self.aux.is_some()
    }

    pub fn is_stripped(&self) -> bool {
        self.stripped
    }

    /// Trainable parameters belonging to the auxiliary branch.
    pub fn aux_param_count(&self) -> usize {
        self.aux.as_ref().map_or(0, |a| a.param_count())
    }

    /// Removes the auxiliary branch. The result only runs in [`Mode::Infer`].
    pub fn strip_auxiliary(&self) -> Self {
        let mut m = self.clone();
        m.aux = None;
        m.stripped = true;
        m
    }

    pub fn forward(&mut self, g: &mut Graph<T>, images: Var, mode: Mode) -> Result<Predictions> {
        match mode {
            Mode::Train => self.forward_with(g, images, true, BnMode::Batch),
            Mode::Infer => self.forward_with(g, images, false, BnMode::Running),
        }
    }

    /// Forward with the branch selection and normalization mode chosen
    /// independently. `with_aux` is ignored when the model has no branch.
    pub fn forward_with(&mut self, g: &mut Graph<T>, images: Var, with_aux: bool, bn: BnMode) -> Result<Predictions> {
        if self.stripped && (with_aux || bn.uses_batch_stats()) {
            return Err(Error::InvalidArgument(
                "auxiliary branch was stripped; model is inference-only".into(),
            ));
        }
        let s = self.config.input_size;
        match g.shape(images) {
            [_, 3, h, w] if *h == s && *w == s => {}
            other => {
                return Err(Error::shape(
                    "model",
                    format!("expected images N x 3 x {s} x {s}, got {other:?}"),
                ))
            }
        }
        let x = silence(g, images);
        let mut y = self.stem.forward(g, x, bn)?;
        let mut feats = Vec::new();
        for st in &mut self.stages {
            y = st.down.forward(g, y, bn)?;
            y = st.elan.forward(g, y, bn)?;
            if self.config.strides.contains(&st.stride) {
                feats.push(y);
            }
        }
        let deep = self.spp.forward(g, y, bn)?;

        let n = feats.len();
        let mut heads_in = vec![deep; n];
        let mut up = deep;
        for (k, elan) in self.neck.iter_mut().enumerate() {
            let level = n - 2 - k;
            let u = g.upsample_nearest(up, 2)?;
            let cat = g.concat_channels(&[u, feats[level]])?;
            up = elan.forward(g, cat, bn)?;
            heads_in[level] = up;
        }
        let main = self.head.forward(g, &heads_in)?;

        let aux = match (&mut self.aux, with_aux) {
            (Some(branch), true) => {
                let mut sliced = Vec::with_capacity(n);
                for (tap, &f) in branch.taps.iter_mut().zip(&feats) {
                    sliced.push(tap.forward(g, f)?);
                }
                let mut fused = Vec::with_capacity(n);
                for t in 0..n {
                    let pieces: Vec<Var> = (0..n).filter(|&s| s != t).map(|s| sliced[s][t]).collect();
                    let f = cb_fuse(g, &pieces, sliced[t][t])?;
                    fused.push(branch.couples[t].forward(g, f, bn)?);
                }
                Some(branch.head.forward(g, &fused)?)
            }
            _ => None,
        };
        Ok(Predictions { main, aux })
    }

    /// Adds gradients recorded in `g` to each parameter's accumulator.
    pub fn accumulate_grads(&mut self, g: &Graph<T>) {
        self.visit_mut(&mut |p| {
            if p.trainable {
                if let Some(grad) = g.param_grad(&p.name) {
                    p.accumulate_grad(grad);
                }
            }
        });
    }

    pub fn zero_grads(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    /// Every parameter and buffer in a fixed order.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push((p.name.clone(), p.value.clone())));
        out
    }

    /// Overwrites parameters by name. Every model tensor must be supplied with
    /// a matching shape; extra entries are rejected too.
    pub fn load_state<U: Scalar>(&mut self, state: &[(String, Tensor<U>)]) -> Result<()> {
        let mut by_name: HashMap<&str, &Tensor<U>> = HashMap::new();
        for (name, t) in state {
            if by_name.insert(name, t).is_some() {
                return Err(Error::Checkpoint(format!("duplicate entry {name}")));
            }
        }
        let mut err = None;
        let mut used = 0;
        self.visit_mut(&mut |p| {
            if err.is_some() {
                return;
            }
            match by_name.get(p.name.as_str()) {
                Some(t) if t.shape() == p.value.shape() => {
                    p.value = t.cast();
                    used += 1;
                }
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "{}: shape {:?} does not match model shape {:?}",
                        p.name,
                        t.shape(),
                        p.value.shape()
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("{}: missing from state", p.name))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if used != state.len() {
            return Err(Error::Checkpoint(format!(
                "state has {} entries the model does not use",
                state.len() - used
            )));
        }
        Ok(())
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> Result<Model<U>> {
        let mut m = Model::<U>::new(self.config.clone())?;
        if self.stripped {
            m = m.strip_auxiliary();
        }
        m.load_state(&self.state())?;
        Ok(m)
    }
}

impl<T: Scalar> Module<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        self.stem.visit(f);
        for st in &self.stages {
            st.down.visit(f);
            st.elan.visit(f);
        }
        self.spp.visit(f);
        self.neck.iter().for_each(|m| m.visit(f));
        self.head.visit(f);
        if let Some(a) = &self.aux {
            a.visit(f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        self.stem.visit_mut(f);
        for st in &mut self.stages {
            st.down.visit_mut(f);
            st.elan.visit_mut(f);
        }
        self.spp.visit_mut(f);
        self.neck.iter_mut().for_each(|m| m.visit_mut(f));
        self.head.visit_mut(f);
        if let Some(a) = &mut self.aux {
            a.visit_mut(f);
        }
    }
}
