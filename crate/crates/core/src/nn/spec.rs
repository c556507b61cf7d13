use rand::Rng;

use super::blocks::*;
use crate::autodiff::{BnMode, Graph, Module, Parameter, Scalar, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockKind {
    ConvBlock,
    RepNBottleneck,
    RepNCsp,
    RepNCspElan,
    ADown,
    SppElan,
    Silence,
    Upsample,
    Concat,
    CbLinear,
    CbFuse,
    Detect,
    RevCouple,
}

impl BlockKind {
    pub const ALL: [BlockKind; 13] = [
        BlockKind::ConvBlock,
        BlockKind::RepNBottleneck,
        BlockKind::RepNCsp,
        BlockKind::RepNCspElan,
        BlockKind::ADown,
        BlockKind::SppElan,
        BlockKind::Silence,
        BlockKind::Upsample,
        BlockKind::Concat,
        BlockKind::CbLinear,
        BlockKind::CbFuse,
        BlockKind::Detect,
        BlockKind::RevCouple,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::ConvBlock => "ConvBlock",
            BlockKind::RepNBottleneck => "RepNBottleneck",
            BlockKind::RepNCsp => "RepNCSP",
            BlockKind::RepNCspElan => "RepNCSPELAN",
            BlockKind::ADown => "ADown",
            BlockKind::SppElan => "SPPELAN",
            BlockKind::Silence => "Silence",
            BlockKind::Upsample => "Upsample",
            BlockKind::Concat => "Concat",
            BlockKind::CbLinear => "CBLinear",
            BlockKind::CbFuse => "CBFuse",
            BlockKind::Detect => "Detect",
            BlockKind::RevCouple => "RevCouple",
        }
    }
}

/// Declarative description of one block.
///
/// Field meaning per kind: `kernel`/`stride` for ConvBlock, `depth` for the
/// bottleneck stacks, `stride` as the resize factor for Upsample, `splits`
/// for CBLinear (output sizes) and Detect (input channels per scale),
/// `boxes`/`classes` for Detect. Unused fields are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub mid_channels: usize,
    pub depth: usize,
    pub kernel: usize,
    pub stride: usize,
    pub splits: Vec<usize>,
    pub boxes: usize,
    pub classes: usize,
}

impl BlockSpec {
    pub fn new(kind: BlockKind, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind,
            in_channels,
            out_channels,
            mid_channels: out_channels,
            depth: 1,
            kernel: 3,
            stride: 1,
            splits: vec![out_channels],
            boxes: 1,
            classes: 1,
        }
    }

    /// Output shapes for the given input shapes, without running anything.
    pub fn output_shapes(&self, inputs: &[[usize; 4]]) -> Result<Vec<Vec<usize>>> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::Config(format!("{}: no inputs", self.kind.name())))?;
        let [n, c, h, w] = first;
        let bad = |msg: String| Err(Error::Config(format!("{}: {msg}", self.kind.name())));
        if !matches!(self.kind, BlockKind::Concat | BlockKind::CbFuse | BlockKind::Detect | BlockKind::Silence | BlockKind::Upsample)
            && c != self.in_channels
        {
            return bad(format!("input has {c} channels, spec says {}", self.in_channels));
        }
        let same = |cout: usize| Ok(vec![vec![n, cout, h, w]]);
        match self.kind {
            BlockKind::ConvBlock => {
                let p = self.kernel / 2;
                let oh = (h + 2 * p - self.kernel) / self.stride + 1;
                let ow = (w + 2 * p - self.kernel) / self.stride + 1;
                Ok(vec![vec![n, self.out_channels, oh, ow]])
            }
            BlockKind::RepNBottleneck | BlockKind::RepNCsp | BlockKind::RepNCspElan | BlockKind::SppElan => {
                same(self.out_channels)
            }
            BlockKind::ADown => {
                if h % 2 != 0 || w % 2 != 0 {
                    return bad(format!("odd spatial dims {h}x{w}"));
                }
                Ok(vec![vec![n, self.out_channels, h / 2, w / 2]])
            }
            BlockKind::Silence => same(c),
            BlockKind::Upsample => Ok(vec![vec![n, c, h * self.stride, w * self.stride]]),
            BlockKind::Concat => {
                let total = inputs.iter().map(|s| s[1]).sum();
                same(total)
            }
            BlockKind::CbLinear => Ok(self.splits.iter().map(|&s| vec![n, s, h, w]).collect()),
            BlockKind::CbFuse => {
                let [_, tc, th, tw] = *inputs.last().unwrap();
                Ok(vec![vec![n, tc, th, tw]])
            }
            BlockKind::Detect => Ok(inputs
                .iter()
                .map(|s| vec![s[0], s[2], s[3], self.boxes * 5 + self.classes])
                .collect()),
            BlockKind::RevCouple => same(c),
        }
    }

    pub fn build<T: Scalar>(&self, name: &str, rng: &mut impl Rng) -> Result<Block<T>> {
        let (cin, cout) = (self.in_channels, self.out_channels);
        Ok(match self.kind {
            BlockKind::ConvBlock => Block::Conv(ConvBlock::new(name, cin, cout, self.kernel, self.stride, rng)?),
            BlockKind::RepNBottleneck => Block::Bottleneck(RepNBottleneck::new(name, cin, cout, rng)?),
            BlockKind::RepNCsp => Block::Csp(RepNCsp::new(name, cin, cout, self.depth, rng)?),
            BlockKind::RepNCspElan => {
                Block::Elan(RepNCspElan::new(name, cin, cout, self.mid_channels, self.depth, rng)?)
            }
            BlockKind::ADown => Block::ADown(ADown::new(name, cin, cout, rng)?),
            BlockKind::SppElan => Block::Spp(SppElan::new(name, cin, cout, self.mid_channels, rng)?),
            BlockKind::Silence => Block::Silence,
            BlockKind::Upsample => Block::Upsample(self.stride),
            BlockKind::Concat => Block::Concat,
            BlockKind::CbLinear => Block::CbLinear(CbLinear::new(name, cin, &self.splits, rng)?),
            BlockKind::CbFuse => Block::CbFuse,
            BlockKind::Detect => Block::Detect(DetectHead::new(name, &self.splits, self.boxes, self.classes, rng)?),
            BlockKind::RevCouple => Block::RevCouple(RevCouple::new(name, cin, rng)?),
        })
    }
}

/// Any block behind a uniform many-in, many-out interface.
#[derive(Clone, Debug)]
pub enum Block<T> {
    Conv(ConvBlock<T>),
    Bottleneck(RepNBottleneck<T>),
    Csp(RepNCsp<T>),
    Elan(RepNCspElan<T>),
    ADown(ADown<T>),
    Spp(SppElan<T>),
    Silence,
    Upsample(usize),
    Concat,
    CbLinear(CbLinear<T>),
    /// Last input is the fusion target; the rest are pieces.
    CbFuse,
    Detect(DetectHead<T>),
    RevCouple(RevCouple<T>),
}

impl<T: Scalar> Block<T> {
    pub fn forward(&mut self, g: &mut Graph<T>, inputs: &[Var], mode: BnMode) -> Result<Vec<Var>> {
        let one = |inputs: &[Var]| -> Result<Var> {
            match inputs {
                [x] => Ok(*x),
                _ => Err(Error::shape("block", format!("expected 1 input, got {}", inputs.len()))),
            }
        };
        Ok(match self {
            Block::Conv(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::Bottleneck(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::Csp(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::Elan(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::ADown(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::Spp(b) => vec![b.forward(g, one(inputs)?, mode)?],
            Block::Silence => vec![silence(g, one(inputs)?)],
            Block::Upsample(f) => vec![g.upsample_nearest(one(inputs)?, *f)?],
            Block::Concat => vec![g.concat_channels(inputs)?],
            Block::CbLinear(b) => b.forward(g, one(inputs)?)?,
            Block::CbFuse => {
                let (target, pieces) = inputs
                    .split_last()
                    .ok_or_else(|| Error::shape("cb_fuse", "no target"))?;
                vec![cb_fuse(g, pieces, *target)?]
            }
            Block::Detect(b) => b.forward(g, inputs)?,
            Block::RevCouple(b) => vec![b.forward(g, one(inputs)?, mode)?],
        })
    }
}

impl<T: Scalar> Module<T> for Block<T> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>)) {
        match self {
            Block::Conv(b) => b.visit(f),
            Block::Bottleneck(b) => b.visit(f),
            Block::Csp(b) => b.visit(f),
            Block::Elan(b) => b.visit(f),
            Block::ADown(b) => b.visit(f),
            Block::Spp(b) => b.visit(f),
            Block::CbLinear(b) => b.visit(f),
            Block::Detect(b) => b.visit(f),
            Block::RevCouple(b) => b.visit(f),
            Block::Silence | Block::Upsample(_) | Block::Concat | Block::CbFuse => {}
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>)) {
        match self {
            Block::Conv(b) => b.visit_mut(f),
            Block::Bottleneck(b) => b.visit_mut(f),
            Block::Csp(b) => b.visit_mut(f),
            Block::Elan(b) => b.visit_mut(f),
            Block::ADown(b) => b.visit_mut(f),
            Block::Spp(b) => b.visit_mut(f),
            Block::CbLinear(b) => b.visit_mut(f),
            Block::Detect(b) => b.visit_mut(f),
            Block::RevCouple(b) => b.visit_mut(f),
            Block::Silence | Block::Upsample(_) | Block::Concat | Block::CbFuse => {}
        }
    }
}
