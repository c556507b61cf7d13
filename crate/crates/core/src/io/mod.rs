//! On-disk formats: checkpoints, metrics CSV, detection dumps, latency reports.

mod checkpoint;
mod dump;
mod latency;
mod metrics_csv;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_into, read_checkpoint, save_checkpoint,
    CheckpointData, ManifestEntry, FORMAT_VERSION, MAGIC,
};
pub use dump::{format_detections, parse_detections};
pub use latency::{percentile, LatencyReport};
pub use metrics_csv::{
    metrics_header, metrics_row, parse_metrics_csv, schema_line, MetricsRow, METRICS_COLUMNS, METRICS_SCHEMA_VERSION,
};
