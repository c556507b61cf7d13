//! Writes a small synthetic shapes dataset and prints per-class box counts.
//!
//! cargo run --example gen_shapes -- [out_dir] [n_train]

use std::path::PathBuf;

use gridsight::data::{load_dataset, synth_shapes, SynthConfig};

fn main() -> gridsight::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("gridsight-shapes"));
    let n_train = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(64);
    let cfg = SynthConfig { n_train, n_val: n_train / 8, ..SynthConfig::default() };
    synth_shapes(&out, &cfg)?;

    let ds = load_dataset(&out, "train", cfg.classes, cfg.size)?;
    let mut counts = vec![0usize; cfg.classes];
    for s in &ds.samples {
        for a in &s.annotations {
            counts[a.class_id] += 1;
        }
    }
    println!("{} images in {}", ds.len(), out.display());
    for (name, n) in ds.class_names.iter().zip(&counts) {
        println!("  {name:<10} {n} boxes");
    }
    Ok(())
}
