use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::detect::BBox;
use crate::error::{Error, Result};

/// One line per detection: `image_id class_id score cx cy w h`. Floats use
/// the shortest exact representation, so a reload is lossless.
pub fn format_detections(ids: &[String], dets: &[Vec<BBox>]) -> String {
    let mut s = String::new();
    for (id, boxes) in ids.iter().zip(dets) {
        for b in boxes {
            writeln!(s, "{id} {} {} {} {} {} {}", b.class_id, b.score, b.cx, b.cy, b.w, b.h).unwrap();
        }
    }
    s
}

/// Parses a dump back into per-image lists ordered like `ids`. Unknown image
/// ids are an error; images without lines get no detections.
pub fn parse_detections(path: &Path, text: &str, ids: &[String]) -> Result<Vec<Vec<BBox>>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut out = vec![Vec::new(); ids.len()];
    for (k, line) in text.lines().enumerate() {
        let bad = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: k + 1,
            msg,
        };
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let img = *index.get(f[0]).ok_or_else(|| bad(format!("unknown image id `{}`", f[0])))?;
        let class_id = f[1].parse().map_err(|e| bad(format!("class id: {e}")))?;
        let mut v = [0.0; 5];
        for (slot, s) in v.iter_mut().zip(&f[2..]) {
            *slot = s.parse().map_err(|e| bad(format!("`{s}`: {e}")))?;
        }
        out[img].push(BBox::new(v[1], v[2], v[3], v[4], class_id, v[0]));
    }
    Ok(out)
}
