use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::ap::{average_precision, coco_thresholds};
use super::matching::{match_detections, precision, recall, Matching};
use crate::detect::BBox;
use crate::error::Result;
use crate::model::LossBreakdown;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub name: String,
    pub gt: usize,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub ap50: f64,
    pub ap50_95: f64,
}

/// Evaluation summary. Precision, recall and the per-class counts are taken
/// at `score_threshold`, the cut that maximizes micro-averaged F1 at IoU 0.5.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub classes: Vec<ClassReport>,
    pub precision: f64,
    pub recall: f64,
    pub map50: f64,
    pub map50_95: f64,
    pub score_threshold: f64,
    pub images: usize,
    pub detections: usize,
    pub loss: Option<LossBreakdown>,
}

/// Score cut maximizing micro F1; ties prefer the higher cut. Returns
/// `+inf` when there are no detections.
fn f1_best_threshold(m: &Matching) -> f64 {
    let n_gt: usize = m.gt_per_class.iter().sum();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut tp = 0;
    for (k, r) in m.records.iter().enumerate() {
        tp += r.is_tp as usize;
        let at_cut_end = m.records.get(k + 1).is_none_or(|n| n.det.score != r.det.score);
        if !at_cut_end {
            continue;
        }
        let p = precision(tp, k + 1 - tp);
        let rc = recall(tp, n_gt - tp);
        let f1 = if p + rc > 0.0 { 2.0 * p * rc / (p + rc) } else { 0.0 };
        if f1 > best.0 {
            best = (f1, r.det.score);
        }
    }
    best.1
}

pub fn evaluate(dets: &[Vec<BBox>], gts: &[Vec<BBox>], class_names: &[String]) -> Result<EvalReport> {
    let classes = class_names.len();
    let m50 = match_detections(dets, gts, classes, 0.5)?;
    let cut = f1_best_threshold(&m50);
    let mut reports = Vec::with_capacity(classes);
    let mut ap_sums = vec![0.0; classes];
    for t in coco_thresholds() {
        let m = if t == 0.5 { m50.clone() } else { match_detections(dets, gts, classes, t)? };
        for (c, s) in ap_sums.iter_mut().enumerate() {
            *s += average_precision(m.class_records(c), m.gt_per_class[c]);
        }
    }
    let (mut tp_all, mut fp_all) = (0, 0);
    for (c, name) in class_names.iter().enumerate() {
        let kept = m50.class_records(c).filter(|r| r.det.score >= cut);
        let (tp, fp) = kept.fold((0, 0), |(tp, fp), r| if r.is_tp { (tp + 1, fp) } else { (tp, fp + 1) });
        let gt = m50.gt_per_class[c];
        tp_all += tp;
        fp_all += fp;
        reports.push(ClassReport {
            name: name.clone(),
            gt,
            tp,
            fp,
            fn_: gt - tp,
            precision: precision(tp, fp),
            recall: recall(tp, gt - tp),
            ap50: average_precision(m50.class_records(c), gt),
            ap50_95: ap_sums[c] / 10.0,
        });
    }
    let present: Vec<&ClassReport> = reports.iter().filter(|r| r.gt > 0).collect();
    let mean = |f: fn(&ClassReport) -> f64| {
        if present.is_empty() {
            0.0
        } else {
            present.iter().map(|r| f(r)).sum::<f64>() / present.len() as f64
        }
    };
    let n_gt: usize = m50.gt_per_class.iter().sum();
    Ok(EvalReport {
        precision: precision(tp_all, fp_all),
        recall: recall(tp_all, n_gt - tp_all),
        map50: mean(|r| r.ap50),
        map50_95: mean(|r| r.ap50_95),
        classes: reports,
        score_threshold: cut,
        images: dets.len(),
        detections: m50.records.len(),
        loss: None,
    })
}

impl EvalReport {
    /// Human-readable aligned table.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let w = self.classes.iter().map(|c| c.name.len()).max().unwrap_or(3).max(5);
        writeln!(
            s,
            "{:<w$} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9} {:>9}",
            "class", "gt", "tp", "fp", "fn", "precision", "recall", "AP50", "AP50-95"
        )
        .unwrap();
        for c in &self.classes {
            writeln!(
                s,
                "{:<w$} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                c.name, c.gt, c.tp, c.fp, c.fn_, c.precision, c.recall, c.ap50, c.ap50_95
            )
            .unwrap();
        }
        writeln!(
            s,
            "{:<w$} {:>6} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
            "all",
            self.classes.iter().map(|c| c.gt).sum::<usize>(),
            self.classes.iter().map(|c| c.tp).sum::<usize>(),
            self.classes.iter().map(|c| c.fp).sum::<usize>(),
            self.classes.iter().map(|c| c.fn_).sum::<usize>(),
            self.precision,
            self.recall,
            self.map50,
            self.map50_95
        )
        .unwrap();
        writeln!(
            s,
            "precision/recall at score >= {:.4} (best F1); {} detections over {} images",
            self.score_threshold, self.detections, self.images
        )
        .unwrap();
        s
    }

    /// Machine-readable per-class rows plus an `all` row.
    pub fn csv(&self) -> String {
        let mut s = String::from("class,gt,tp,fp,fn,precision,recall,ap50,ap50_95\n");
        for c in &self.classes {
            writeln!(
                s,
                "{},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                c.name, c.gt, c.tp, c.fp, c.fn_, c.precision, c.recall, c.ap50, c.ap50_95
            )
            .unwrap();
        }
        writeln!(
            s,
            "all,{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            self.classes.iter().map(|c| c.gt).sum::<usize>(),
            self.classes.iter().map(|c| c.tp).sum::<usize>(),
            self.classes.iter().map(|c| c.fp).sum::<usize>(),
            self.classes.iter().map(|c| c.fn_).sum::<usize>(),
            self.precision,
            self.recall,
            self.map50,
            self.map50_95
        )
        .unwrap();
        s
    }
}

/// Raw precision-recall points at IoU 0.5, one row per detection in score
/// order: `class,score,precision,recall`.
pub fn pr_curve_csv(dets: &[Vec<BBox>], gts: &[Vec<BBox>], class_names: &[String]) -> Result<String> {
    let m = match_detections(dets, gts, class_names.len(), 0.5)?;
    let mut s = String::from("class,score,precision,recall\n");
    for (c, name) in class_names.iter().enumerate() {
        let n_gt = m.gt_per_class[c];
        let mut tp = 0;
        for (k, r) in m.class_records(c).enumerate() {
            tp += r.is_tp as usize;
            writeln!(
                s,
                "{name},{:.6},{:.6},{:.6}",
                r.det.score,
                precision(tp, k + 1 - tp),
                recall(tp, n_gt - tp)
            )
            .unwrap();
        }
    }
    Ok(s)
}
