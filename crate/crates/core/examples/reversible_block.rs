//! The auxiliary branch's reversible coupling: run it forward, invert the
//! output, and report how closely the input comes back.

use gridsight::autodiff::{BnMode, Graph, Tensor};
use gridsight::nn::RevCouple;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gridsight::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut block = RevCouple::<f64>::new("rev", 8, &mut rng)?;
    let x = Tensor::<f64>::randn(&[2, 8, 6, 6], 1.0, &mut rng);

    let mut g = Graph::new();
    let v = g.input(x.clone(), false);
    let y = block.forward(&mut g, v, BnMode::Running)?;
    let y = g.value(y).clone();

    let mut g = Graph::new();
    let v = g.input(y.clone(), false);
    let back = block.inverse(&mut g, v, BnMode::Running)?;
    println!("|y - x|max          {:.3e}", y.max_abs_diff(&x));
    println!("|inverse(y) - x|max {:.3e}", g.value(back).max_abs_diff(&x));
    Ok(())
}
