//! Finite-difference check of every primitive op and block kind, plus the
//! full detector loss on the tiny config.
//!
//! cargo run --release --example grad_check -- [seed]

use gridsight::autodiff::GradCheckOptions;
use gridsight::cli::suite_table;
use gridsight::model::ModelConfig;
use gridsight::verify::{block_suite, detector_loss_check, primitive_suite, SuiteRow};

fn main() -> gridsight::Result<()> {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let opts = GradCheckOptions::default();
    let mut rows: Vec<(String, SuiteRow)> = Vec::new();
    rows.extend(primitive_suite(seed, opts)?.into_iter().map(|r| ("op".to_string(), r)));
    rows.extend(block_suite(4, seed, opts)?.into_iter().map(|r| ("block".to_string(), r)));
    let report = detector_loss_check(&ModelConfig::tiny(), seed, opts)?;
    rows.push(("model".into(), SuiteRow { name: "detector_loss".into(), report }));
    print!("{}", suite_table(&rows));
    let failed = rows.iter().filter(|(_, r)| !r.passed()).count();
    println!("{failed} of {} failed", rows.len());
    Ok(())
}
