use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-frame inference wall-clock times. Values are measurements and are
/// not reproducible across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub preset: String,
    pub frames_ms: Vec<f64>,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    /// Frames per second the inference time alone would allow.
    pub fps: f64,
    /// Frames over the whole stream's wall time, pacing and I/O included.
    pub achieved_fps: f64,
    pub fps_target: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl LatencyReport {
    pub fn new(preset: &str, frames_ms: Vec<f64>, wall_secs: f64, fps_target: Option<f64>) -> Result<Self> {
        if frames_ms.is_empty() {
            return Err(Error::InvalidArgument("latency report needs at least one frame".into()));
        }
        let mut sorted = frames_ms.clone();
        sorted.sort_by(f64::total_cmp);
        let mean_ms = frames_ms.iter().sum::<f64>() / frames_ms.len() as f64;
        Ok(Self {
            preset: preset.to_string(),
            mean_ms,
            p50_ms: percentile(&sorted, 50.0),
            p95_ms: percentile(&sorted, 95.0),
            fps: if mean_ms > 0.0 { 1000.0 / mean_ms } else { f64::INFINITY },
            achieved_fps: if wall_secs > 0.0 { frames_ms.len() as f64 / wall_secs } else { f64::INFINITY },
            frames_ms,
            fps_target,
        })
    }

    pub fn frames(&self) -> usize {
        self.frames_ms.len()
    }

    pub fn meets_target(&self) -> Option<bool> {
        self.fps_target.map(|t| self.fps >= t)
    }

    /// Achieved throughput never beats the inference-only bound by more
    /// than `slack` (relative).
    pub fn consistent(&self, slack: f64) -> bool {
        self.achieved_fps <= self.fps * (1.0 + slack)
    }

    pub fn text(&self) -> String {
        let mut s = format!(
            "preset {}: {} frames, mean {:.3} ms, p50 {:.3} ms, p95 {:.3} ms, {:.1} fps inference-bound, {:.1} fps achieved (wall-clock, non-deterministic)\n",
            self.preset,
            self.frames(),
            self.mean_ms,
            self.p50_ms,
            self.p95_ms,
            self.fps,
            self.achieved_fps
        );
        if let (Some(t), Some(ok)) = (self.fps_target, self.meets_target()) {
            writeln!(s, "target {t:.1} fps: {}", if ok { "met" } else { "missed" }).unwrap();
        }
        s
    }

    pub fn csv(&self) -> String {
        let mut s = String::from("# latency values are wall-clock measurements and non-deterministic\n");
        s.push_str("frame,latency_ms\n");
        for (k, ms) in self.frames_ms.iter().enumerate() {
            writeln!(s, "{k},{ms:.6}").unwrap();
        }
        writeln!(s, "mean,{:.6}", self.mean_ms).unwrap();
        writeln!(s, "p50,{:.6}", self.p50_ms).unwrap();
        writeln!(s, "p95,{:.6}", self.p95_ms).unwrap();
        writeln!(s, "fps,{:.6}", self.fps).unwrap();
        writeln!(s, "achieved_fps,{:.6}", self.achieved_fps).unwrap();
        s
    }
}
