//! Times stripped presets frame by frame on a generated stream.
//!
//! cargo run --release --example stream_latency -- [frames] [fps_target]

use gridsight::cli::{run_stream, FrameSource};
use gridsight::model::{Model, ModelConfig};
use gridsight::train::DetectOptions;

fn main() -> gridsight::Result<()> {
    let n = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(50);
    let fps_target = std::env::args().nth(2).and_then(|s| s.parse().ok());
    let source = FrameSource::Synth { n, seed: 0, size: 160 };
    for cfg in [ModelConfig::preset_c(), ModelConfig::preset_e()] {
        let model = Model::<f32>::new(cfg)?.strip_auxiliary();
        let out = run_stream(&model, &source, &DetectOptions::default(), fps_target)?;
        print!("{}", out.latency.text());
        let found: usize = out.frames.iter().map(|(_, d)| d.len()).sum();
        println!("{found} detections from an untrained model\n");
    }
    Ok(())
}
