//! Trains briefly on 200 synthetic images, then runs the CLI's
//! detect command on the validation images and writes annotated copies.
//!
//! cargo run --release --example detect_images -- [epochs]

use gridsight::cli::{cmd_detect, cmd_gen_data, cmd_train, DetectArgs, GenDataArgs, TrainArgs};

fn main() -> gridsight::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(12);
    let root = std::env::temp_dir().join("gridsight-detect");
    let data = root.join("data");
    cmd_gen_data(&GenDataArgs { n: 200, n_val: Some(4), classes: 3, size: 160, seed: 1, out: data.clone() })?;
    let run = root.join("run");
    cmd_train(&TrainArgs {
        data: data.clone(),
        config: "c".into(),
        epochs,
        batch: 8,
        lr: 0.01,
        seed: 0,
        out: run.clone(),
        no_aux: false,
    })?;
    let out = root.join("annotated");
    cmd_detect(&DetectArgs {
        ckpt: run.join("best.gsd"),
        input: data.join("images").join("val"),
        out: out.clone(),
        conf: 0.25,
        iou: 0.45,
    })?;
    println!("annotated images in {}", out.display());
    Ok(())
}
