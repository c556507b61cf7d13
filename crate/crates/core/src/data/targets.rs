use super::labels::Annotation;
use crate::autodiff::{Scalar, Tensor};
use crate::detect::GridLayout;

/// Grid-encoded supervision for one image at one scale.
#[derive(Clone, Debug)]
pub struct EncodedTargets<T> {
    /// `S x S x (B*5 + C)`; the object, if any, lives in predictor slot 0.
    pub grid: Tensor<T>,
    /// Row-major per-cell flag: cell holds an object.
    pub object_mask: Vec<bool>,
    /// Annotations lost to the one-object-per-cell rule.
    pub dropped: usize,
}

/// Cell `(i, j)` owning a box centre, clamped to the grid.
pub fn cell_of(cx: f64, cy: f64, s: usize) -> (usize, usize) {
    let sf = s as f64;
    let clamp = |v: f64| ((v * sf).floor().max(0.0) as usize).min(s - 1);
    (clamp(cy), clamp(cx))
}

/// Writes each annotation into the cell containing its centre, as
/// cell-relative `x, y`, image-relative `w, h`, objectness 1 and a one-hot
/// class. When two annotations share a cell the larger one is kept (ties keep
/// the earlier annotation).
pub fn encode_targets<T: Scalar>(annotations: &[Annotation], layout: GridLayout) -> EncodedTargets<T> {
    let (s, d) = (layout.s, layout.depth());
    let mut owner: Vec<Option<usize>> = vec![None; s * s];
    let mut dropped = 0;
    for (k, a) in annotations.iter().enumerate() {
        let (i, j) = cell_of(a.cx, a.cy, s);
        let slot = &mut owner[i * s + j];
        match *slot {
            None => *slot = Some(k),
            Some(prev) => {
                dropped += 1;
                if a.area() > annotations[prev].area() {
                    *slot = Some(k);
                }
            }
        }
    }
    let mut grid = Tensor::zeros(&[s, s, d]);
    let data = grid.data_mut();
    let sf = s as f64;
    for (cell, o) in owner.iter().enumerate() {
        let Some(k) = *o else { continue };
        let a = &annotations[k];
        let (i, j) = (cell / s, cell % s);
        let v = &mut data[cell * d..(cell + 1) * d];
        v[0] = T::of(a.cx * sf - j as f64);
        v[1] = T::of(a.cy * sf - i as f64);
        v[2] = T::of(a.w);
        v[3] = T::of(a.h);
        v[4] = T::one();
        v[layout.boxes * 5 + a.class_id] = T::one();
    }
    EncodedTargets {
        grid,
        object_mask: owner.iter().map(Option::is_some).collect(),
        dropped,
    }
}

/// The raw head output that decodes exactly to an encoded target: confidence
/// logits become `+inf` / `-inf`, object cells carry `ln(one-hot)` class
/// logits and empty cells uniform zeros.
pub fn targets_as_raw(target: &Tensor<f64>, layout: GridLayout) -> Tensor<f64> {
    let d = layout.depth();
    let mut raw = target.clone();
    for cell in raw.data_mut().chunks_exact_mut(d) {
        let object = cell[4] > 0.5;
        for b in 0..layout.boxes {
            cell[b * 5 + 4] = if b == 0 && object { f64::INFINITY } else { f64::NEG_INFINITY };
        }
        if object {
            for v in &mut cell[layout.boxes * 5..] {
                *v = v.ln();
            }
        }
    }
    raw
}
