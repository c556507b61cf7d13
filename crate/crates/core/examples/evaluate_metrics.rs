//! Precision, recall and mAP on a hand-built two-image set, including the
//! per-class table and the precision/recall curve.

use gridsight::detect::BBox;
use gridsight::metrics::{evaluate, map_at, pr_curve_csv};

fn main() -> gridsight::Result<()> {
    let names = vec!["circle".to_string(), "square".to_string()];
    let gts = vec![
        vec![BBox::new(0.3, 0.3, 0.2, 0.2, 0, 1.0), BBox::new(0.7, 0.6, 0.3, 0.2, 1, 1.0)],
        vec![BBox::new(0.5, 0.5, 0.4, 0.4, 1, 1.0)],
    ];
    let dets = vec![
        vec![
            BBox::new(0.31, 0.3, 0.2, 0.21, 0, 0.92),
            BBox::new(0.72, 0.6, 0.28, 0.2, 1, 0.81),
            BBox::new(0.1, 0.9, 0.1, 0.1, 0, 0.40),
        ],
        vec![BBox::new(0.55, 0.5, 0.4, 0.35, 1, 0.66)],
    ];
    let report = evaluate(&dets, &gts, &names)?;
    print!("{}", report.table());
    for t in [0.5, 0.75, 0.9] {
        println!("mAP@{t}: {:.4}", map_at(&dets, &gts, names.len(), t)?);
    }
    print!("{}", pr_curve_csv(&dets, &gts, &names)?);
    Ok(())
}
