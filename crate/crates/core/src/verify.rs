//! Finite-difference suites over every tensor primitive, every block kind and
//! the full detector loss. Shared by the `grad-check` command and the tests.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, BnHyper, BnMode, GradCheckOptions, GradCheckReport, Graph, Module, Tensor, Var};
use crate::data::{encode_targets, Annotation};
use crate::detect::GridLayout;
use crate::error::Result;
use crate::model::{compute_loss_with, plan_loss, LossHyper, LossOptions, Model, ModelConfig};
use crate::nn::{block_grad_check, BlockKind, BlockSpec};

#[derive(Clone, Debug)]
pub struct SuiteRow {
    pub name: String,
    pub report: GradCheckReport,
}

impl SuiteRow {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

/// Fixed random linear functional of `y`, so every output element matters.
fn readout(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = (0..g.value(y).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    g.dot(y, w)
}

/// Values spaced at least 1e-2 apart, so no pooling window is near a tie.
fn jittered(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.05 - n as f64 * 0.025).collect();
    v.shuffle(rng);
    v.iter_mut().for_each(|x| *x += rng.random_range(0.0..0.01));
    Tensor::new(shape, v).expect("shape")
}

type Builder = Box<dyn FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>>;

/// One check per primitive op, on shapes drawn from `seed`.
pub fn primitive_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<SuiteRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let n = r.random_range(1..=2);
    let c = r.random_range(1..=3);
    let h = r.random_range(3..=6);
    let w = r.random_range(3..=6);
    let x = Tensor::<f64>::randn(&[n, c, h, w], 1.0, r);
    let k = [1, 3][r.random_range(0..2)];
    let stride = r.random_range(1..=2);
    let pad = r.random_range(0..=k / 2);
    let cout = r.random_range(1..=3);
    let wt = Tensor::<f64>::randn(&[cout, c, k, k], 0.5, r);
    let bias = Tensor::<f64>::randn(&[cout], 0.5, r);
    let gamma = Tensor::<f64>::uniform(&[c], 0.5, 1.5, r);
    let beta = Tensor::<f64>::randn(&[c], 0.5, r);
    let x2 = Tensor::<f64>::randn(&[n, c, h, w], 1.0, r);
    let y2 = Tensor::<f64>::randn(&[n, 2, h, w], 1.0, r);
    let pooled = jittered(&[n, c, h, w], r);
    let pk = r.random_range(2..=3);
    let ppad = r.random_range(0..=pk / 2);
    let mask: Vec<bool> = (0..w).map(|_| r.random_bool(0.5)).collect();
    let factor = r.random_range(1..=3);
    let (rh, rw) = (r.random_range(1..=8), r.random_range(1..=8));
    let dotw: Vec<f64> = (0..x.numel()).map(|_| r.random_range(-1.0..1.0)).collect();
    let alpha = r.random_range(-2.0..2.0);
    let slice_start = r.random_range(0..c);
    let slice_len = r.random_range(1..=c - slice_start);

    let cases: Vec<(&str, Vec<Tensor<f64>>, Builder)> = vec![
        ("conv2d", vec![x.clone(), wt, bias], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, pad)?;
            readout(g, y, seed)
        })),
        ("batchnorm2d", vec![x.clone(), gamma, beta], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let (mut m, mut var) = (vec![0.0; c], vec![1.0; c]);
            let y = g.batchnorm2d(v[0], v[1], v[2], &mut m, &mut var, BnMode::BatchFrozen, BnHyper::default())?;
            readout(g, y, seed)
        })),
        ("silu", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.silu(v[0]);
            readout(g, y, seed)
        })),
        ("sigmoid", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.partial_sigmoid(v[0], mask.clone())?;
            readout(g, y, seed)
        })),
        ("maxpool2d", vec![pooled], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.maxpool2d(v[0], pk, 1 + (pk == 2) as usize, ppad)?;
            readout(g, y, seed)
        })),
        ("upsample_nearest", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.upsample_nearest(v[0], factor)?;
            readout(g, y, seed)
        })),
        ("resize_nearest", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.resize_nearest(v[0], rh, rw)?;
            readout(g, y, seed)
        })),
        ("concat_channels", vec![x.clone(), y2], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.concat_channels(&[v[0], v[1]])?;
            readout(g, y, seed)
        })),
        ("slice_channels", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.slice_channels(v[0], slice_start, slice_len)?;
            readout(g, y, seed)
        })),
        ("add", vec![x.clone(), x2.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.add(v[0], v[1])?;
            readout(g, y, seed)
        })),
        ("sub", vec![x.clone(), x2.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.sub(v[0], v[1])?;
            readout(g, y, seed)
        })),
        ("mul", vec![x.clone(), x2], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.mul(v[0], v[1])?;
            readout(g, y, seed)
        })),
        ("scale", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.scale(v[0], alpha);
            readout(g, y, seed)
        })),
        ("sum", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.mul(v[0], v[0])?;
            Ok(g.sum(y))
        })),
        ("dot", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.silu(v[0]);
            g.dot(y, dotw.clone())
        })),
        ("to_nhwc", vec![x.clone()], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.to_nhwc(v[0])?;
            readout(g, y, seed)
        })),
        ("identity", vec![x], Box::new(move |g: &mut Graph<f64>, v: &[Var]| {
            let y = g.identity(v[0]);
            let z = g.mul(y, v[0])?;
            readout(g, z, seed)
        })),
    ];
    let mut rows = Vec::new();
    for (name, inputs, mut build) in cases {
        let report = grad_check(&inputs, GradCheckOptions { seed, ..opts }, |g, v| build(g, v))?;
        rows.push(SuiteRow {
            name: name.to_string(),
            report,
        });
    }
    Ok(rows)
}

/// One check per block kind. `channels` (even, >= 2) sets the width.
pub fn block_suite(channels: usize, seed: u64, opts: GradCheckOptions) -> Result<Vec<SuiteRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let c = channels.max(2) & !1;
    let n = r.random_range(1..=2);
    let hw = 2 * r.random_range(2..=3);
    let mut rows = Vec::new();
    for kind in BlockKind::ALL {
        let mut spec = BlockSpec::new(kind, c, c);
        let mut shapes = vec![[n, c, hw, hw]];
        match kind {
            BlockKind::ConvBlock => {
                spec.out_channels = c + 1;
                spec.kernel = [1, 3][r.random_range(0..2)];
                spec.stride = r.random_range(1..=2);
            }
            BlockKind::RepNBottleneck => {
                if r.random_bool(0.5) {
                    spec.out_channels = c + 2;
                }
            }
            BlockKind::SppElan => spec.mid_channels = c / 2,
            BlockKind::Upsample => spec.stride = 2,
            BlockKind::Concat => shapes.push([n, c / 2, hw, hw]),
            BlockKind::CbLinear => spec.splits = vec![c / 2, c, 1],
            BlockKind::CbFuse => shapes = vec![[n, c, hw / 2, hw / 2], [n, c, hw * 2, hw * 2], [n, c, hw, hw]],
            BlockKind::Detect => {
                shapes = vec![[n, c, hw, hw], [n, c + 2, hw / 2, hw / 2]];
                spec.splits = vec![c, c + 2];
                spec.boxes = 2;
                spec.classes = 3;
            }
            _ => {}
        }
        let mut block = spec.build::<f64>(kind.name(), r)?;
        // exercise non-trivial affine parameters and heads
        block.visit_mut(&mut |p| {
            if p.trainable && p.name.contains(".bn.") {
                p.value = Tensor::uniform(p.value.shape(), 0.5, 1.5, r);
            }
        });
        let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| Tensor::randn(s, 1.0, r)).collect();
        let report = block_grad_check(&mut block, &inputs, GradCheckOptions { seed, ..opts })?;
        rows.push(SuiteRow {
            name: kind.name().to_string(),
            report,
        });
    }
    Ok(rows)
}

/// One to three in-image boxes; cell collisions are left to the encoder.
fn random_annotations(rng: &mut impl Rng, classes: usize) -> Vec<Annotation> {
    (0..rng.random_range(1..=3))
        .map(|_| {
            let w = rng.random_range(0.1..0.6);
            let h = rng.random_range(0.1..0.6);
            Annotation::new(
                rng.random_range(0..classes),
                rng.random_range(w / 2.0..1.0 - w / 2.0),
                rng.random_range(h / 2.0..1.0 - h / 2.0),
                w,
                h,
            )
        })
        .collect()
}

/// Checks the full composite loss (main and auxiliary branches) with respect
/// to every trainable parameter, under a predictor assignment frozen at the
/// unperturbed point.
pub fn detector_loss_check(cfg: &ModelConfig, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport> {
    let mut model = Model::<f64>::new(cfg.clone().with_seed(seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2;
    let s = cfg.input_size;
    let images = Tensor::<f64>::uniform(&[n, 3, s, s], 0.0, 1.0, &mut rng);
    let anns: Vec<Vec<Annotation>> = (0..n).map(|_| random_annotations(&mut rng, cfg.classes)).collect();
    let targets: Vec<Tensor<f64>> = cfg
        .grid_sizes()
        .into_iter()
        .map(|gs| {
            let layout = GridLayout::new(gs, cfg.boxes, cfg.classes);
            let grids: Vec<Tensor<f64>> = anns.iter().map(|a| encode_targets(a, layout).grid).collect();
            Tensor::stack(&grids)
        })
        .collect::<Result<_>>()?;
    let hyper = LossHyper::default();
    let (b, c) = (cfg.boxes, cfg.classes);

    let plan = {
        let mut g = Graph::new();
        let x = g.input(images.clone(), false);
        let preds = model.forward_with(&mut g, x, true, BnMode::BatchFrozen)?;
        plan_loss(&g, &preds, &targets, b, c)?
    };
    let loss_opts = LossOptions {
        plan: Some(plan),
        aux_scales: Vec::new(),
    };
    let mut names = Vec::new();
    let mut params = Vec::new();
    model.visit(&mut |p| {
        if p.trainable {
            names.push(p.name.clone());
            params.push(p.value.clone());
        }
    });
    grad_check(&params, GradCheckOptions { seed, ..opts }, |g, vars| {
        for (name, &v) in names.iter().zip(vars) {
            g.bind_param(name, v);
        }
        let x = g.input(images.clone(), false);
        let preds = model.forward_with(g, x, true, BnMode::BatchFrozen)?;
        Ok(compute_loss_with(g, &preds, &targets, b, c, &hyper, &loss_opts)?.total)
    })
}
