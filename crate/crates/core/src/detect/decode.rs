use super::BBox;
use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Layout of one grid cell: `B` predictors of `x, y, w, h, confidence`
/// followed by `C` class logits shared by the cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridLayout {
    pub s: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl GridLayout {
    pub fn new(s: usize, boxes: usize, classes: usize) -> Self {
        Self { s, boxes, classes }
    }

    /// Values per cell, `B*5 + C`.
    pub fn depth(&self) -> usize {
        self.boxes * 5 + self.classes
    }

    pub fn cell_len(&self) -> usize {
        self.s * self.s * self.depth()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Class-specific score: conditional class probability times box confidence.
pub fn class_score(p_class_given_obj: f64, confidence: f64) -> f64 {
    p_class_given_obj * confidence
}

/// Decodes one image's raw `S x S x (B*5 + C)` grid into boxes whose
/// class-specific score is at least `conf_thresh`.
///
/// Cells are visited row-major, predictors in index order. Each predictor
/// yields at most one box, labelled with the cell's most probable class.
pub fn decode_grid<T: Scalar>(raw: &[T], layout: GridLayout, conf_thresh: f64) -> Result<Vec<BBox>> {
    let d = layout.depth();
    if raw.len() != layout.cell_len() {
        return Err(Error::shape(
            "decode_grid",
            format!(
                "{} values do not form a {s}x{s}x{d} grid (B={}, C={})",
                raw.len(),
                layout.boxes,
                layout.classes,
                s = layout.s
            ),
        ));
    }
    let s = layout.s as f64;
    let mut out = Vec::new();
    for (cell_idx, cell) in raw.chunks_exact(d).enumerate() {
        let (i, j) = (cell_idx / layout.s, cell_idx % layout.s);
        let logits: Vec<f64> = cell[layout.boxes * 5..].iter().map(|v| v.as_f64()).collect();
        let probs = softmax(&logits);
        let (class_id, p) = probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        for b in 0..layout.boxes {
            let slot = &cell[b * 5..b * 5 + 5];
            let confidence = sigmoid(slot[4].as_f64());
            let score = class_score(p, confidence);
            if !(score >= conf_thresh) {
                continue;
            }
            let cand = BBox::new(
                (j as f64 + slot[0].as_f64()) / s,
                (i as f64 + slot[1].as_f64()) / s,
                slot[2].as_f64(),
                slot[3].as_f64(),
                class_id,
                score,
            );
            if let Some(b) = cand.clipped() {
                out.push(b);
            }
        }
    }
    Ok(out)
}
