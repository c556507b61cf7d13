//! Saves a model, strips the auxiliary branch, saves again, and reloads both.

use gridsight::autodiff::Module;
use gridsight::io::{decode_checkpoint, load_checkpoint, save_checkpoint};
use gridsight::model::{Model, ModelConfig};

fn main() -> gridsight::Result<()> {
    let dir = std::env::temp_dir().join("gridsight-ckpt");
    std::fs::create_dir_all(&dir)?;
    let full = Model::<f32>::new(ModelConfig::preset_c())?;
    let stripped = full.strip_auxiliary();
    for (name, m) in [("full", &full), ("stripped", &stripped)] {
        let path = dir.join(format!("{name}.gsd"));
        save_checkpoint(m, &path)?;
        let bytes = std::fs::read(&path)?;
        let back = load_checkpoint(&path)?;
        let same = m.state().iter().zip(back.state()).all(|((_, a), (_, b))| a.data() == b.data());
        println!(
            "{name:<9} {:>8} bytes  {:>3} tensors  params {:>6}  reload identical: {same}",
            bytes.len(),
            decode_checkpoint(&bytes)?.manifest.len(),
            back.param_count()
        );
    }

    let path = dir.join("full.gsd");
    let mut bytes = std::fs::read(&path)?;
    let n = bytes.len();
    bytes[n - 100] ^= 1;
    std::fs::write(&path, &bytes)?;
    match load_checkpoint(&path) {
        Err(e) => println!("corrupted copy rejected: {e}"),
        Ok(_) => println!("corrupted copy loaded?!"),
    }
    Ok(())
}
