use std::time::Instant;

use gridsight::autodiff::{Graph, Module, Tensor};
use gridsight::model::{compute_loss, LossHyper, Mode, Model, ModelConfig, Sgd};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gridsight::Result<()> {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "c".into());
    let batch: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(8);
    let cfg = ModelConfig::preset(&preset)?;
    let mut model = Model::<f32>::new(cfg.clone())?;
    println!("params {} (aux {})", model.param_count(), model.aux_param_count());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = cfg.input_size;
    let images = Tensor::<f32>::uniform(&[batch, 3, s, s], 0.0, 1.0, &mut rng);
    let d = cfg.boxes * 5 + cfg.classes;
    let targets: Vec<Tensor<f32>> = cfg.grid_sizes().iter().map(|&g| Tensor::zeros(&[batch, g, g, d])).collect();
    let mut opt = Sgd::new(1e-3, 0.9, 5e-4);
    for _ in 0..3 {
        let t0 = Instant::now();
        let mut g = Graph::new();
        let x = g.input(images.clone(), false);
        let preds = model.forward(&mut g, x, Mode::Train)?;
        let t1 = Instant::now();
        let loss = compute_loss(&mut g, &preds, &targets, cfg.boxes, cfg.classes, &LossHyper::default())?;
        g.backward(loss.total)?;
        let t2 = Instant::now();
        model.accumulate_grads(&g);
        opt.step(&mut model);
        println!(
            "forward {:?} backward {:?} total {:?} ops {}",
            t1 - t0,
            t2 - t1,
            t0.elapsed(),
            g.op_count()
        );
    }
    let t0 = Instant::now();
    let mut g = Graph::new();
    let x = g.input(images.batch_item(0), false);
    model.forward(&mut g, x, Mode::Infer)?;
    println!("infer 1 image {:?}", t0.elapsed());
    Ok(())
}
