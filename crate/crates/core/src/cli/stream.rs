//! Frame streaming: a decode stage feeding inference through a bounded,
//! FIFO hand-off.

use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tensor;
use crate::data::{is_supported_image, read_image, render_sample, resize_image};
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::io::LatencyReport;
use crate::model::Model;
use crate::train::{predict_timed, DetectOptions};

/// Capacity of the decode → inference channel.
pub const HANDOFF_CAPACITY: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum FrameSource {
    /// Image files in a directory, ordered by the number in their stem
    /// (then by name).
    Dir(PathBuf),
    /// `n` synthetic-shapes frames of the given size.
    Synth { n: usize, seed: u64, size: usize },
}

impl FrameSource {
    /// Parses `synth:N[:SEED[:SIZE]]` or a directory path. `default_size`
    /// applies to synthetic frames without an explicit size.
    pub fn parse(spec: &str, default_size: usize) -> Result<Self> {
        let Some(rest) = spec.strip_prefix("synth:") else {
            return Ok(FrameSource::Dir(PathBuf::from(spec)));
        };
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || Error::InvalidArgument(format!("bad generator spec `{spec}`, expected synth:N[:SEED[:SIZE]]"));
        if parts.is_empty() || parts.len() > 3 {
            return Err(bad());
        }
        let n = parts[0].parse().map_err(|_| bad())?;
        let seed = parts.get(1).map(|s| s.parse()).transpose().map_err(|_| bad())?.unwrap_or(0);
        let size = parts.get(2).map(|s| s.parse()).transpose().map_err(|_| bad())?.unwrap_or(default_size);
        Ok(FrameSource::Synth { n, seed, size })
    }
}

fn frame_number(p: &Path) -> Option<u64> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(|c| c.is_ascii_digit()).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!("frame directory {} not found", dir.display())));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.is_file() && is_supported_image(p));
    paths.sort_by(|a, b| frame_number(a).cmp(&frame_number(b)).then_with(|| a.cmp(b)));
    Ok(paths)
}

struct Frame {
    id: String,
    tensor: Tensor<f32>,
}

#[derive(Clone, Debug)]
pub struct StreamOutput {
    /// `(frame id, detections)` in source order.
    pub frames: Vec<(String, Vec<BBox>)>,
    pub latency: LatencyReport,
}

/// Runs every frame through `model` one at a time. Only the forward pass is
/// timed. With `fps_target`, frames are released no faster than the target.
pub fn run_stream(
    model: &Model<f32>,
    source: &FrameSource,
    opts: &DetectOptions,
    fps_target: Option<f64>,
) -> Result<StreamOutput> {
    let size = model.config().input_size;
    let (tx, rx) = sync_channel::<Result<Frame>>(HANDOFF_CAPACITY);
    let source = source.clone();
    let paths = match &source {
        FrameSource::Dir(d) => list_frames(d)?,
        FrameSource::Synth { .. } => Vec::new(),
    };
    let total = match &source {
        FrameSource::Dir(_) => paths.len(),
        FrameSource::Synth { n, .. } => *n,
    };
    if total == 0 {
        return Err(Error::InvalidArgument("frame source is empty".into()));
    }
    let mut model = model.clone();
    let start = Instant::now();
    let mut out = Vec::with_capacity(total);
    let mut times = Vec::with_capacity(total);
    std::thread::scope(|s| -> Result<()> {
        s.spawn(move || {
            let send = |f: Result<Frame>| tx.send(f).is_ok();
            match source {
                FrameSource::Dir(_) => {
                    for p in &paths {
                        let id = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                        let frame = read_image(p).and_then(|img| {
                            Ok(Frame {
                                id,
                                tensor: resize_image(&img.to_tensor(), size)?,
                            })
                        });
                        if !send(frame) {
                            return;
                        }
                    }
                }
                FrameSource::Synth { n, seed, size: fs } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    for k in 0..n {
                        let (img, _) = render_sample(&mut rng, 3, fs.max(16));
                        let frame = resize_image(&img.to_tensor(), size).map(|tensor| Frame {
                            id: format!("frame_{k:05}"),
                            tensor,
                        });
                        if !send(frame) {
                            return;
                        }
                    }
                }
            }
        });
        let period = fps_target.filter(|f| *f > 0.0).map(|f| Duration::from_secs_f64(1.0 / f));
        for (k, frame) in rx.iter().enumerate() {
            let frame = frame?;
            if let Some(p) = period {
                let due = start + p * k as u32;
                if let Some(wait) = due.checked_duration_since(Instant::now()) {
                    std::thread::sleep(wait);
                }
            }
            let (mut dets, t) = predict_timed(&mut model, frame.tensor.reshape(&[1, 3, size, size])?, opts)?;
            times.push(t.as_secs_f64() * 1000.0);
            out.push((frame.id, dets.pop().unwrap_or_default()));
        }
        Ok(())
    })?;
    let wall = start.elapsed().as_secs_f64();
    let latency = LatencyReport::new(&model.config().name, times, wall, fps_target)?;
    Ok(StreamOutput { frames: out, latency })
}
