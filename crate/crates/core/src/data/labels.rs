use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::BBox;
use crate::error::{Error, Result};

/// One labelled object: class and normalized center-format box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub class_id: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Annotation {
    pub fn new(class_id: usize, cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { class_id, cx, cy, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// As a box with score 1.
    pub fn to_bbox(&self) -> BBox {
        BBox::new(self.cx, self.cy, self.w, self.h, self.class_id, 1.0)
    }
}

/// Parses one `class_id cx cy w h` line. Errors carry no location; the
/// caller attaches `file:line`.
pub fn parse_label_line(line: &str, classes: usize) -> std::result::Result<Annotation, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    if fields.len() != 5 {
        return Err(format!("expected 5 space-separated fields, found {}", fields.len()));
    }
    let class_id: usize = fields[0]
        .parse()
        .map_err(|_| format!("class id {:?} is not a non-negative integer", fields[0]))?;
    if class_id >= classes {
        return Err(format!("class id {class_id} out of range for {classes} classes"));
    }
    let mut v = [0.0; 4];
    for (slot, (name, text)) in v.iter_mut().zip(["cx", "cy", "w", "h"].iter().zip(&fields[1..])) {
        let x: f64 = text.parse().map_err(|_| format!("{name} {text:?} is not a number"))?;
        if !(0.0..=1.0).contains(&x) {
            return Err(format!("{name} {x} outside [0, 1]"));
        }
        *slot = x;
    }
    let [cx, cy, w, h] = v;
    if w <= 0.0 || h <= 0.0 {
        return Err(format!("box size {w} x {h} must be positive"));
    }
    Ok(Annotation::new(class_id, cx, cy, w, h))
}

/// Parses a whole label file body.
pub fn parse_labels(path: &Path, text: &str, classes: usize) -> Result<Vec<Annotation>> {
    let text = text.strip_suffix('\n').unwrap_or(text);
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split('\n')
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix('\r').unwrap_or(line);
            parse_label_line(line, classes).map_err(|msg| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg,
            })
        })
        .collect()
}

pub fn read_labels(path: &Path, classes: usize) -> Result<Vec<Annotation>> {
    let text = std::fs::read_to_string(path)?;
    parse_labels(path, &text, classes)
}

pub fn format_labels(annotations: &[Annotation]) -> String {
    let mut s = String::new();
    for a in annotations {
        writeln!(s, "{} {:.6} {:.6} {:.6} {:.6}", a.class_id, a.cx, a.cy, a.w, a.h).unwrap();
    }
    s
}

/// `classes.txt`: one name per line, index = class id.
pub fn read_class_names(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}
