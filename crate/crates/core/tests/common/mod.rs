#![allow(dead_code)]

use std::collections::BTreeMap;

use gridsight::autodiff::{BnMode, Module, Tensor};
use gridsight::data::Annotation;
use gridsight::detect::{BBox, GridLayout};
use gridsight::nn::RevCouple;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Naive zero-padded cross-correlation.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, bias: Option<&[f64]>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.dims4("oracle").unwrap();
    let [cout, _, kh, kw] = w.dims4("oracle").unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut s = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                s += x.data()[((i * cin + ci) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = s;
                }
            }
        }
    }
    Tensor::new(&[n, cout, oh, ow], out).unwrap()
}

/// Naive max pool; padded positions never win.
pub fn maxpool_oracle(x: &Tensor<f64>, k: usize, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4("oracle").unwrap();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut out = vec![f64::NEG_INFINITY; n * c * oh * ow];
    for p in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out[(p * oh + oy) * ow + ox];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pad as isize;
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                            *o = o.max(x.data()[(p * h + iy as usize) * w + ix as usize]);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, c, oh, ow], out).unwrap()
}

pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

/// Per-channel batch normalization with batch statistics (biased variance).
pub fn batchnorm_oracle(x: &Tensor<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor<f64> {
    let [n, c, h, w] = x.dims4("oracle").unwrap();
    let plane = h * w;
    let mut out = x.data().to_vec();
    for ch in 0..c {
        let vals: Vec<f64> = (0..n).flat_map(|i| x.data()[(i * c + ch) * plane..][..plane].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        for i in 0..n {
            for v in &mut out[(i * c + ch) * plane..][..plane] {
                *v = gamma[ch] * (*v - mean) / (var + eps).sqrt() + beta[ch];
            }
        }
    }
    Tensor::new(x.shape(), out).unwrap()
}

/// Solves the least-squares problem `min |A w - b|` for every column of `b`
/// via ridge-regularized normal equations and Gaussian elimination; returns
/// the fitted values `A w`. `a` is row-major `rows x cols`.
pub fn least_squares_fit(a: &[Vec<f64>], b: &[Vec<f64>], ridge: f64) -> Vec<Vec<f64>> {
    let cols = a[0].len();
    let outs = b[0].len();
    let mut m = vec![vec![0.0; cols + outs]; cols];
    for (row, target) in a.iter().zip(b) {
        for i in 0..cols {
            for j in 0..cols {
                m[i][j] += row[i] * row[j];
            }
            for k in 0..outs {
                m[i][cols + k] += row[i] * target[k];
            }
        }
    }
    for (i, r) in m.iter_mut().enumerate() {
        r[i] += ridge;
    }
    for p in 0..cols {
        let piv = (p..cols).max_by(|&x, &y| m[x][p].abs().total_cmp(&m[y][p].abs())).unwrap();
        m.swap(p, piv);
        let d = m[p][p];
        for v in &mut m[p] {
            *v /= d;
        }
        for r in 0..cols {
            if r != p {
                let f = m[r][p];
                if f != 0.0 {
                    let prow = m[p].clone();
                    for (v, pv) in m[r].iter_mut().zip(&prow) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    a.iter()
        .map(|row| (0..outs).map(|k| (0..cols).map(|i| row[i] * m[i][cols + k]).sum()).collect())
        .collect()
}

// ---- detection oracles ----


pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let (ax1, ay1, ax2, ay2) = (a.cx - a.w / 2.0, a.cy - a.h / 2.0, a.cx + a.w / 2.0, a.cy + a.h / 2.0);
    let (bx1, by1, bx2, by2) = (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0);
    let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
    let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
    let inter = iw * ih;
    let union = (ax2 - ax1).max(0.0) * (ay2 - ay1).max(0.0) + (bx2 - bx1).max(0.0) * (by2 - by1).max(0.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Enumerates every (cell, predictor, class) candidate and keeps, per
/// predictor, the best-scoring class if it clears the threshold.
pub fn decode_oracle(raw: &[f64], s: usize, nb: usize, nc: usize, thresh: f64) -> Vec<BBox> {
    let d = nb * 5 + nc;
    let mut out = Vec::new();
    for i in 0..s {
        for j in 0..s {
            let cell = &raw[(i * s + j) * d..][..d];
            let logits = &cell[nb * 5..];
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
            let z: f64 = exps.iter().sum();
            for b in 0..nb {
                let conf = 1.0 / (1.0 + (-cell[b * 5 + 4]).exp());
                let mut best: Option<(usize, f64)> = None;
                for (k, e) in exps.iter().enumerate() {
                    let score = (e / z) * conf;
                    if best.is_none_or(|(_, bs)| score > bs) {
                        best = Some((k, score));
                    }
                }
                let (k, score) = best.unwrap();
                if score < thresh || score.is_nan() {
                    continue;
                }
                let cx = (j as f64 + cell[b * 5]) / s as f64;
                let cy = (i as f64 + cell[b * 5 + 1]) / s as f64;
                let (w, h) = (cell[b * 5 + 2], cell[b * 5 + 3]);
                let (x1, y1, x2, y2) = (cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
                let b = if x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0 {
                    BBox::new(cx, cy, w, h, k, score)
                } else {
                    let (x1, y1, x2, y2) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
                    BBox::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1, k, score)
                };
                if b.w > 0.0 && b.h > 0.0 {
                    out.push(b);
                }
            }
        }
    }
    out
}

/// Textbook NMS: repeatedly take the best remaining box and delete every
/// remaining box that overlaps it too much.
pub fn nms_oracle(boxes: &[BBox], thresh: f64, class_aware: bool) -> Vec<BBox> {
    let mut remaining: Vec<(usize, BBox)> = boxes.iter().copied().enumerate().collect();
    let mut kept = Vec::new();
    while !remaining.is_empty() {
        let mut best = 0;
        for k in 1..remaining.len() {
            let (bi, b) = remaining[best];
            let (ci, c) = remaining[k];
            let better = c.score > b.score
                || (c.score == b.score && (c.class_id < b.class_id || (c.class_id == b.class_id && ci < bi)));
            if better {
                best = k;
            }
        }
        let (_, top) = remaining.remove(best);
        kept.push(top);
        remaining.retain(|(_, b)| (class_aware && b.class_id != top.class_id) || iou_oracle(b, &top) < thresh);
    }
    kept
}

/// Per image and class: detections by descending score each take the
/// best unmatched truth. Returns `(image, det index, is_tp)` triples and
/// per-class truth counts.
pub fn match_oracle(dets: &[Vec<BBox>], gts: &[Vec<BBox>], classes: usize, thresh: f64) -> (Vec<(usize, usize, bool)>, Vec<usize>) {
    let mut out = Vec::new();
    let mut n_gt = vec![0; classes];
    for (img, (d, g)) in dets.iter().zip(gts).enumerate() {
        for c in 0..classes {
            let truths: Vec<usize> = (0..g.len()).filter(|&k| g[k].class_id == c).collect();
            n_gt[c] += truths.len();
            let mut mine: Vec<usize> = (0..d.len()).filter(|&k| d[k].class_id == c).collect();
            mine.sort_by(|&a, &b| d[b].score.partial_cmp(&d[a].score).unwrap().then(a.cmp(&b)));
            let mut used = vec![false; truths.len()];
            for k in mine {
                let mut best = (usize::MAX, -1.0);
                for (t, &gi) in truths.iter().enumerate() {
                    let v = iou_oracle(&d[k], &g[gi]);
                    if !used[t] && v > best.1 {
                        best = (t, v);
                    }
                }
                let tp = best.0 != usize::MAX && best.1 >= thresh;
                if tp {
                    used[best.0] = true;
                }
                out.push((img, k, tp));
            }
        }
    }
    (out, n_gt)
}

/// 101-point AP by sweeping every score cut: each cut gives one
/// (recall, precision) point; interpolated precision at r is the best
/// precision among cuts with recall >= r. Scores must be distinct.
pub fn ap_oracle(scored: &[(f64, bool)], n_gt: usize) -> f64 {
    if n_gt == 0 {
        return 0.0;
    }
    let points: Vec<(f64, f64)> = scored
        .iter()
        .map(|&(cut, _)| {
            let kept: Vec<bool> = scored.iter().filter(|(s, _)| *s >= cut).map(|(_, tp)| *tp).collect();
            let tp = kept.iter().filter(|t| **t).count();
            (tp as f64 / n_gt as f64, tp as f64 / kept.len() as f64)
        })
        .collect();
    let mut sum = 0.0;
    for step in 0..=100 {
        let r = step as f64 / 100.0;
        sum += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
    }
    sum / 101.0
}

pub fn random_box(r: &mut impl Rng, classes: usize) -> BBox {
    let w = r.random_range(0.05..0.6);
    let h = r.random_range(0.05..0.6);
    BBox::new(
        r.random_range(w / 2.0..1.0 - w / 2.0),
        r.random_range(h / 2.0..1.0 - h / 2.0),
        w,
        h,
        r.random_range(0..classes),
        r.random_range(0.0..1.0),
    )
}

/// A box near `b`: same class, jittered geometry, fresh score.
pub fn jitter_box(r: &mut impl Rng, b: &BBox, amount: f64) -> BBox {
    let j = |r: &mut dyn rand::RngCore| (r.random::<f64>() - 0.5) * 2.0 * amount;
    BBox::new(
        (b.cx + j(r) * b.w).clamp(0.01, 0.99),
        (b.cy + j(r) * b.h).clamp(0.01, 0.99),
        (b.w * (1.0 + j(r))).clamp(0.01, 1.0),
        (b.h * (1.0 + j(r))).clamp(0.01, 1.0),
        b.class_id,
        r.random_range(0.0..1.0),
    )
}

pub fn random_cluster(seed: u64, n: usize) -> Vec<BBox> {
    let mut r = rng(seed);
    let classes = r.random_range(1..=3);
    let seeds: Vec<BBox> = (0..r.random_range(1..=6)).map(|_| random_box(&mut r, classes)).collect();
    (0..n)
        .map(|_| {
            let s = seeds[r.random_range(0..seeds.len())];
            jitter_box(&mut r, &s, 0.3)
        })
        .collect()
}

/// Random image set: truths plus detections that are jittered truths,
/// duplicates and clutter, all with distinct scores.
pub fn random_instance(seed: u64) -> (Vec<Vec<BBox>>, Vec<Vec<BBox>>, usize) {
    let mut r = rng(seed);
    let classes = r.random_range(1..=3);
    let images = r.random_range(1..=3);
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..images {
        let g: Vec<BBox> = (0..r.random_range(0..=5)).map(|_| random_box(&mut r, classes)).collect();
        let mut d = Vec::new();
        for _ in 0..r.random_range(0..=10) {
            if !g.is_empty() && r.random_bool(0.7) {
                let t = g[r.random_range(0..g.len())];
                let amount = r.random_range(0.0..0.4);
                d.push(jitter_box(&mut r, &t, amount));
            } else {
                d.push(random_box(&mut r, classes));
            }
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts, classes)
}

pub fn random_couple(seed: u64) -> (RevCouple<f64>, Tensor<f64>, BnMode) {
    let mut r = rng(seed);
    let c = 2 * r.random_range(1..=4);
    let (n, h, w) = (r.random_range(1..=3), r.random_range(2..=7), r.random_range(2..=7));
    let mut b = RevCouple::<f64>::new("r", c, &mut r).unwrap();
    b.visit_mut(&mut |p| {
        if p.name.ends_with("running_var") {
            p.value = Tensor::uniform(p.value.shape(), 0.5, 2.0, &mut r);
        } else if !p.name.ends_with("conv.weight") {
            p.value = Tensor::randn(p.value.shape(), 0.5, &mut r);
        }
    });
    let scale = r.random_range(0.1..10.0);
    let mode = if r.random_bool(0.5) { BnMode::Running } else { BnMode::BatchFrozen };
    (b, Tensor::randn(&[n, c, h, w], scale, &mut r), mode)
}

/// In-image annotations with edges on a 1/256 lattice, so every coordinate
/// is exact in binary.
pub fn dyadic_annotations(r: &mut impl Rng, classes: usize) -> Vec<Annotation> {
    let span = |r: &mut dyn rand::RngCore| {
        let a = r.random_range(0..256u32);
        let b = r.random_range(a + 1..=256);
        ((a + b) as f64 / 512.0, (b - a) as f64 / 256.0)
    };
    (0..r.random_range(0..12))
        .map(|_| {
            let (cx, w) = span(r);
            let (cy, h) = span(r);
            Annotation::new(r.random_range(0..classes), cx, cy, w, h)
        })
        .collect()
}

/// Sources that survive the one-object-per-cell rule.
pub fn survivors(anns: &[Annotation], s: usize) -> Vec<Annotation> {
    let mut best: BTreeMap<(usize, usize), Annotation> = BTreeMap::new();
    for a in anns {
        let i = ((a.cy * s as f64).floor() as usize).min(s - 1);
        let j = ((a.cx * s as f64).floor() as usize).min(s - 1);
        match best.get(&(i, j)) {
            Some(b) if b.w * b.h >= a.w * a.h => {}
            _ => {
                best.insert((i, j), *a);
            }
        }
    }
    best.into_values().collect()
}

/// Random decoder input: box slots in [0, 1), everything else a logit.
pub fn random_raw_grid(r: &mut impl Rng) -> (Vec<f64>, GridLayout, f64) {
    let (s, b, c) = (r.random_range(1..=5), r.random_range(1..=3), r.random_range(1..=4));
    let layout = GridLayout::new(s, b, c);
    let raw: Vec<f64> = (0..layout.cell_len())
        .map(|k| {
            let pos = k % layout.depth();
            if pos < b * 5 && pos % 5 < 4 {
                r.random_range(0.0..1.0)
            } else {
                r.random_range(-4.0..4.0)
            }
        })
        .collect();
    let thresh = r.random_range(0.01..0.6);
    (raw, layout, thresh)
}
