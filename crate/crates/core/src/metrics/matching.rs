use crate::detect::{iou, BBox};
use crate::error::{Error, Result};

/// `tp / (tp + fp)`, or 0 when nothing was predicted.
pub fn precision(tp: usize, fp: usize) -> f64 {
    if tp + fp == 0 {
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    }
}

/// `tp / (tp + fn)`, or 1 when there was nothing to find.
pub fn recall(tp: usize, fn_: usize) -> f64 {
    if tp + fn_ == 0 {
        1.0
    } else {
        tp as f64 / (tp + fn_) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchRecord {
    pub image_id: usize,
    pub det: BBox,
    pub is_tp: bool,
    /// Index into that image's ground-truth list.
    pub matched_gt: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching {
    /// All detections, sorted by score descending (stable in image, then
    /// per-image input order).
    pub records: Vec<MatchRecord>,
    pub gt_per_class: Vec<usize>,
    pub fn_per_class: Vec<usize>,
}

impl Matching {
    pub fn false_negatives(&self) -> usize {
        self.fn_per_class.iter().sum()
    }

    pub fn class_records(&self, class: usize) -> impl Iterator<Item = &MatchRecord> {
        self.records.iter().filter(move |r| r.det.class_id == class)
    }
}

fn check_classes(boxes: &[Vec<BBox>], classes: usize, what: &str) -> Result<()> {
    for (img, list) in boxes.iter().enumerate() {
        if let Some(b) = list.iter().find(|b| b.class_id >= classes) {
            return Err(Error::InvalidArgument(format!(
                "{what} in image {img} has class {} outside [0, {classes})",
                b.class_id
            )));
        }
    }
    Ok(())
}

/// Greedy per-image, per-class matching. Detections are visited by score
/// (descending, stable); each claims the unmatched same-class ground truth
/// of highest IoU (first on ties) if that IoU reaches `iou_thresh`.
pub fn match_detections(dets: &[Vec<BBox>], gts: &[Vec<BBox>], classes: usize, iou_thresh: f64) -> Result<Matching> {
    if dets.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} detection lists for {} images",
            dets.len(),
            gts.len()
        )));
    }
    check_classes(dets, classes, "detection")?;
    check_classes(gts, classes, "ground truth")?;
    let mut records = Vec::new();
    let mut gt_per_class = vec![0; classes];
    let mut tp_per_class = vec![0; classes];
    for (image_id, (d, g)) in dets.iter().zip(gts).enumerate() {
        for b in g {
            gt_per_class[b.class_id] += 1;
        }
        let mut order: Vec<usize> = (0..d.len()).collect();
        order.sort_by(|&a, &b| d[b].score.total_cmp(&d[a].score));
        let mut taken = vec![false; g.len()];
        for k in order {
            let det = d[k];
            let mut best: Option<(usize, f64)> = None;
            for (gi, gt) in g.iter().enumerate() {
                if taken[gi] || gt.class_id != det.class_id {
                    continue;
                }
                let v = iou(&det, gt);
                if best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((gi, v));
                }
            }
            let matched = best.filter(|&(_, v)| v >= iou_thresh).map(|(gi, _)| gi);
            if let Some(gi) = matched {
                taken[gi] = true;
                tp_per_class[det.class_id] += 1;
            }
            records.push(MatchRecord {
                image_id,
                det,
                is_tp: matched.is_some(),
                matched_gt: matched,
            });
        }
    }
    records.sort_by(|a, b| b.det.score.total_cmp(&a.det.score));
    let fn_per_class = gt_per_class.iter().zip(&tp_per_class).map(|(g, t)| g - t).collect();
    Ok(Matching {
        records,
        gt_per_class,
        fn_per_class,
    })
}
