//! Precision, recall, detection-to-truth matching, interpolated average
//! precision and mAP summaries.

mod ap;
mod matching;
mod report;

pub use ap::{average_precision, class_aps, coco_thresholds, map_at, map_range};
pub use matching::{match_detections, precision, recall, MatchRecord, Matching};
pub use report::{evaluate, pr_curve_csv, ClassReport, EvalReport};
