//! Builds a tiny conv -> silu -> sum graph, backpropagates, and compares one
//! weight gradient against a central difference.

use gridsight::autodiff::{Graph, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn forward(x: &Tensor<f64>, w: &Tensor<f64>) -> gridsight::Result<(Graph<f64>, Var, f64)> {
    let mut g = Graph::new();
    let xv = g.input(x.clone(), false);
    let wv = g.input(w.clone(), true);
    let y = g.conv2d(xv, wv, None, 1, 1)?;
    let y = g.silu(y);
    let l = g.sum(y);
    g.backward(l)?;
    let v = g.value(l).data()[0];
    Ok((g, wv, v))
}

fn main() -> gridsight::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = Tensor::<f64>::randn(&[1, 2, 5, 5], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(&[3, 2, 3, 3], 0.3, &mut rng);
    let (g, wv, loss) = forward(&x, &w)?;
    let analytic = g.grad(wv).expect("weight grad").data()[4];

    let h = 1e-5;
    let mut wp = w.clone();
    wp.data_mut()[4] += h;
    let mut wm = w.clone();
    wm.data_mut()[4] -= h;
    let numeric = (forward(&x, &wp)?.2 - forward(&x, &wm)?.2) / (2.0 * h);
    println!("loss {loss:.6}  ops {}", g.op_count());
    println!("dL/dw[4]: analytic {analytic:.9}  numeric {numeric:.9}");
    Ok(())
}
