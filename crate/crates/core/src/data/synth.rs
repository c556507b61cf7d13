use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::{write_ppm, RgbImage};
use super::labels::{format_labels, Annotation};
use crate::error::{Error, Result};

pub const GLYPH_NAMES: [&str; 5] = ["disk", "square", "triangle", "ring", "cross"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub classes: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 800,
            n_val: 100,
            classes: 3,
            size: 160,
            seed: 7,
        }
    }
}

/// Whether pixel centre offset `(dx, dy)` from a glyph centre, with glyph
/// half-extent `r`, is inside the glyph of class `class`.
fn inside(class: usize, dx: f64, dy: f64, r: f64) -> bool {
    match class {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= r && dy.abs() <= r,
        2 => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2.0,
        3 => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
        _ => {
            let t = 0.3 * r;
            (dx.abs() <= r && dy.abs() <= t) || (dx.abs() <= t && dy.abs() <= r)
        }
    }
}

fn overlaps(a: &[usize; 4], b: &[usize; 4], margin: usize) -> bool {
    a[0] <= b[2] + margin && b[0] <= a[2] + margin && a[1] <= b[3] + margin && b[1] <= a[3] + margin
}

/// Renders one image: per-pixel uniform noise with 1-3 solid glyphs that do
/// not touch. Labels are the tight bounding boxes of the painted pixels.
pub fn render_sample(rng: &mut impl Rng, classes: usize, size: usize) -> (RgbImage, Vec<Annotation>) {
    let mut img = RgbImage::new(size, size);
    rng.fill(&mut img.pixels[..]);
    let count = rng.random_range(1..=3);
    let sf = size as f64;
    let mut placed: Vec<[usize; 4]> = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..count {
        for _attempt in 0..50 {
            let class = rng.random_range(0..classes);
            let r = rng.random_range(0.075..0.175) * sf;
            let cx = rng.random_range(r + 1.0..sf - r - 1.0);
            let cy = rng.random_range(r + 1.0..sf - r - 1.0);
            let color: [u8; 3] = rng.random();
            let x0 = (cx - r - 1.0).floor().max(0.0) as usize;
            let y0 = (cy - r - 1.0).floor().max(0.0) as usize;
            let x1 = ((cx + r + 1.0).ceil() as usize).min(size - 1);
            let y1 = ((cy + r + 1.0).ceil() as usize).min(size - 1);
            let mut bb = [usize::MAX, usize::MAX, 0, 0];
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if inside(class, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                        bb = [bb[0].min(x), bb[1].min(y), bb[2].max(x), bb[3].max(y)];
                    }
                }
            }
            if bb[0] == usize::MAX || placed.iter().any(|p| overlaps(p, &bb, 2)) {
                continue;
            }
            for y in y0..=y1 {
                for x in x0..=x1 {
                    if inside(class, x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                        img.put(x, y, color);
                    }
                }
            }
            placed.push(bb);
            let (x1, y1) = ((bb[2] + 1) as f64, (bb[3] + 1) as f64);
            let (x0, y0) = (bb[0] as f64, bb[1] as f64);
            labels.push(Annotation::new(
                class,
                (x0 + x1) / 2.0 / sf,
                (y0 + y1) / 2.0 / sf,
                (x1 - x0) / sf,
                (y1 - y0) / sf,
            ));
            break;
        }
    }
    (img, labels)
}

/// Writes `root/images/{train,val}/*.ppm`, `root/labels/{train,val}/*.txt`
/// and `root/classes.txt`. Byte-identical output for a given config.
pub fn synth_shapes(root: &Path, cfg: &SynthConfig) -> Result<()> {
    if cfg.classes == 0 || cfg.classes > GLYPH_NAMES.len() {
        return Err(Error::Config(format!(
            "synthetic data supports 1 to {} classes, got {}",
            GLYPH_NAMES.len(),
            cfg.classes
        )));
    }
    if cfg.size < 16 {
        return Err(Error::Config(format!("image size {} too small (min 16)", cfg.size)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for (split, n) in [("train", cfg.n_train), ("val", cfg.n_val)] {
        let img_dir = root.join("images").join(split);
        let lbl_dir = root.join("labels").join(split);
        std::fs::create_dir_all(&img_dir)?;
        std::fs::create_dir_all(&lbl_dir)?;
        for k in 0..n {
            let (img, labels) = render_sample(&mut rng, cfg.classes, cfg.size);
            let stem = format!("{split}_{k:05}");
            write_ppm(&img_dir.join(format!("{stem}.ppm")), &img)?;
            std::fs::write(lbl_dir.join(format!("{stem}.txt")), format_labels(&labels))?;
        }
    }
    let names: String = GLYPH_NAMES[..cfg.classes].iter().map(|n| format!("{n}\n")).collect();
    std::fs::write(root.join("classes.txt"), names)?;
    Ok(())
}
