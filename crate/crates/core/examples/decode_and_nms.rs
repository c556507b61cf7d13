//! Decodes a hand-written 2x2 grid with two predictors per cell, then shows
//! class-aware and class-agnostic suppression.

use gridsight::detect::{decode_grid, nms, GridLayout};

fn main() -> gridsight::Result<()> {
    let layout = GridLayout::new(2, 2, 2);
    let mut raw = vec![0.0f64; layout.cell_len()];
    // per cell: [x y w h conf] x 2 predictors, then 2 class logits
    let cells: [[f64; 12]; 4] = [
        [0.5, 0.5, 0.4, 0.4, 3.0, 0.4, 0.6, 0.35, 0.4, 2.5, 2.0, -2.0],
        [0.2, 0.5, 0.3, 0.3, -3.0, 0.5, 0.5, 0.2, 0.2, -4.0, 0.0, 0.0],
        [0.9, 0.1, 0.4, 0.4, 2.0, 0.5, 0.5, 0.1, 0.1, -5.0, -1.0, 1.5],
        [0.1, 0.1, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 0.5, -5.0, 1.0, 1.0],
    ];
    for (k, c) in cells.iter().enumerate() {
        raw[k * layout.depth()..(k + 1) * layout.depth()].copy_from_slice(c);
    }
    let boxes = decode_grid(&raw, layout, 0.1)?;
    println!("decoded:");
    for b in &boxes {
        println!("  {b:?}");
    }
    for aware in [true, false] {
        let kept = nms(&boxes, 0.45, aware);
        println!("nms (class-aware: {aware}) keeps {}:", kept.len());
        for b in &kept {
            println!("  class {} score {:.3} at ({:.3}, {:.3})", b.class_id, b.score, b.cx, b.cy);
        }
    }
    Ok(())
}
