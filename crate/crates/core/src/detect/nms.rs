use std::cmp::Ordering;

use super::{iou, BBox};

/// Descending score, then smaller class id, then input order.
fn rank(boxes: &[BBox]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        boxes[b]
            .score
            .partial_cmp(&boxes[a].score)
            .unwrap_or(Ordering::Equal)
            .then(boxes[a].class_id.cmp(&boxes[b].class_id))
            .then(a.cmp(&b))
    });
    order
}

/// Greedy non-maximum suppression.
///
/// A box survives iff its IoU with every already-kept box (of the same
/// class when `class_aware`) is below `iou_thresh`. Output is in rank order.
pub fn nms(boxes: &[BBox], iou_thresh: f64, class_aware: bool) -> Vec<BBox> {
    let mut kept: Vec<BBox> = Vec::new();
    for i in rank(boxes) {
        let cand = &boxes[i];
        let suppressed = kept
            .iter()
            .filter(|k| !class_aware || k.class_id == cand.class_id)
            .any(|k| iou(k, cand) >= iou_thresh);
        if !suppressed {
            kept.push(*cand);
        }
    }
    kept
}
