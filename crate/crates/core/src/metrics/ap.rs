use super::matching::{match_detections, MatchRecord};
use crate::detect::BBox;
use crate::error::Result;

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn coco_thresholds() -> [f64; 10] {
    std::array::from_fn(|k| (50 + 5 * k) as f64 / 100.0)
}

/// 101-point interpolated average precision of score-sorted records against
/// `n_gt` ground truths. Zero when `n_gt == 0`.
pub fn average_precision<'a>(records: impl IntoIterator<Item = &'a MatchRecord>, n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let mut curve = Vec::new();
    let mut tp = 0usize;
    for (k, r) in records.into_iter().enumerate() {
        tp += r.is_tp as usize;
        curve.push((tp as f64 / n_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // precision envelope: best precision at any recall >= r
    for k in (0..curve.len().saturating_sub(1)).rev() {
        curve[k].1 = curve[k].1.max(curve[k + 1].1);
    }
    let mut sum = 0.0;
    let mut idx = 0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        while idx < curve.len() && curve[idx].0 < r {
            idx += 1;
        }
        if idx < curve.len() {
            sum += curve[idx].1;
        }
    }
    sum / 101.0
}

/// Per-class AP at one IoU threshold; `None` for classes without ground truth.
pub fn class_aps(dets: &[Vec<BBox>], gts: &[Vec<BBox>], classes: usize, iou_thresh: f64) -> Result<Vec<Option<f64>>> {
    let m = match_detections(dets, gts, classes, iou_thresh)?;
    Ok((0..classes)
        .map(|c| (m.gt_per_class[c] > 0).then(|| average_precision(m.class_records(c), m.gt_per_class[c])))
        .collect())
}

fn mean_present(aps: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = aps.iter().flatten().copied().collect();
    if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Mean AP over classes that have ground truth.
pub fn map_at(dets: &[Vec<BBox>], gts: &[Vec<BBox>], classes: usize, iou_thresh: f64) -> Result<f64> {
    Ok(mean_present(&class_aps(dets, gts, classes, iou_thresh)?))
}

/// Mean of [`map_at`] over the ten thresholds 0.50:0.05:0.95.
pub fn map_range(dets: &[Vec<BBox>], gts: &[Vec<BBox>], classes: usize) -> Result<f64> {
    let mut sum = 0.0;
    for t in coco_thresholds() {
        sum += map_at(dets, gts, classes, t)?;
    }
    Ok(sum / 10.0)
}
