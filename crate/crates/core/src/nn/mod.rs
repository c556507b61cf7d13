//! Detector building blocks: conv blocks, GELAN aggregation, downsampling,
//! pyramid pooling, auxiliary-branch taps and fusion, reversible coupling,
//! and the grid prediction head.

mod blocks;
mod spec;

pub use blocks::*;
pub use spec::{Block, BlockKind, BlockSpec};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check, BnMode, GradCheckOptions, GradCheckReport, Module, Tensor, Var};
use crate::error::Result;

/// Finite-difference check of a block with respect to its inputs and every
/// trainable parameter, through a fixed random linear readout of all outputs.
///
/// Batch norm runs on batch statistics without updating running estimates.
pub fn block_grad_check(block: &mut Block<f64>, inputs: &[Tensor<f64>], opts: GradCheckOptions) -> Result<GradCheckReport> {
    let mut names = Vec::new();
    let mut tensors = inputs.to_vec();
    block.visit(&mut |p| {
        if p.trainable {
            names.push(p.name.clone());
            tensors.push(p.value.clone());
        }
    });
    let n_in = inputs.len();
    let seed = opts.seed;
    grad_check(&tensors, opts, |g, vars| {
        for (name, &v) in names.iter().zip(&vars[n_in..]) {
            g.bind_param(name, v);
        }
        let outs = block.forward(g, &vars[..n_in], BnMode::BatchFrozen)?;
        let mut total: Option<Var> = None;
        for (i, &o) in outs.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
            let w = (0..g.value(o).numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let r = g.dot(o, w)?;
            total = Some(match total {
                Some(t) => g.add(t, r)?,
                None => r,
            });
        }
        Ok(total.expect("blocks produce at least one output"))
    })
}
