//! Grid decoding of raw head outputs into scored boxes, and duplicate suppression.

mod bbox;
mod decode;
mod nms;

pub use bbox::{iou, iou_xyxy, BBox};
pub use decode::{class_score, decode_grid, sigmoid, softmax, GridLayout};
pub use nms::nms;

/// Default class-specific score threshold.
pub const DEFAULT_CONF_THRESH: f64 = 0.25;
/// Default NMS overlap threshold.
pub const DEFAULT_NMS_IOU: f64 = 0.45;
