use serde::{Deserialize, Serialize};

/// One detection or annotation: image-normalized center-format box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub class_id: usize,
    pub score: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, class_id: usize, score: f64) -> Self {
        Self {
            cx,
            cy,
            w,
            h,
            class_id,
            score,
        }
    }

    pub fn from_xyxy(x1: f64, y1: f64, x2: f64, y2: f64, class_id: usize, score: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1, class_id, score)
    }

    pub fn xyxy(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Clips to the unit square. Coordinates are only recomputed when an
    /// edge actually lies outside, so in-bounds boxes stay bit-identical.
    /// Returns `None` when nothing of positive area remains.
    pub fn clipped(&self) -> Option<Self> {
        let [x1, y1, x2, y2] = self.xyxy();
        let inside = x1 >= 0.0 && y1 >= 0.0 && x2 <= 1.0 && y2 <= 1.0;
        let b = if inside {
            *self
        } else {
            let (x1, y1) = (x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
            let (x2, y2) = (x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0));
            Self::from_xyxy(x1, y1, x2, y2, self.class_id, self.score)
        };
        (b.w > 0.0 && b.h > 0.0).then_some(b)
    }
}

/// Intersection over union of two `[x1, y1, x2, y2]` boxes; 0 when the union is empty.
pub fn iou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = iw * ih;
    let area = |r: [f64; 4]| (r[2] - r[0]).max(0.0) * (r[3] - r[1]).max(0.0);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Intersection over union of two boxes (class and score ignored).
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    iou_xyxy(a.xyxy(), b.xyxy())
}
