//! Generates the synthetic shapes set and trains a preset on it.
//!
//! cargo run --release --example train_synthetic -- [n_train] [epochs] [lr] [preset]

use std::time::Instant;

use gridsight::data::{load_dataset, synth_shapes, SynthConfig};
use gridsight::model::{Model, ModelConfig};
use gridsight::train::{train, TrainConfig};

fn main() -> gridsight::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let n_train: usize = arg(0, "800").parse().expect("n_train");
    let epochs: usize = arg(1, "30").parse().expect("epochs");
    let lr: f64 = arg(2, "0.01").parse().expect("lr");
    let preset = arg(3, "c");

    let dir = std::env::temp_dir().join(format!("gridsight-synth-{n_train}"));
    let synth = SynthConfig {
        n_train,
        n_val: 100,
        ..SynthConfig::default()
    };
    if !dir.join("classes.txt").exists() {
        synth_shapes(&dir, &synth)?;
    }
    let cfg = ModelConfig::preset(&preset)?.with_classes(synth.classes);
    let train_set = load_dataset(&dir, "train", cfg.classes, cfg.input_size)?;
    let val = load_dataset(&dir, "val", cfg.classes, cfg.input_size)?;
    let mut model = Model::<f32>::new(cfg)?;
    let tc = TrainConfig {
        epochs,
        lr,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let history = train(&mut model, &train_set, Some(&val), &tc, |r, _| {
        let e = r.eval.as_ref().expect("val set");
        println!(
            "epoch {:>3}  loss {:.4}  P {:.3} R {:.3}  map50 {:.4}  map50-95 {:.4}  [{:.0?}]",
            r.epoch,
            r.loss.total,
            e.precision,
            e.recall,
            e.map50,
            e.map50_95,
            t0.elapsed()
        );
        Ok(())
    })?;
    if let Some(last) = history.epochs.last().and_then(|r| r.eval.as_ref()) {
        print!("{}", last.table());
    }
    Ok(())
}
