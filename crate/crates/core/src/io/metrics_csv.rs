use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::EpochRecord;

/// Bumped whenever the column set or order changes.
pub const METRICS_SCHEMA_VERSION: u32 = 1;
pub const METRICS_COLUMNS: &str = "epoch,box_loss,cls_loss,obj_loss,aux_loss,precision,recall,map50,map50_95";

/// First line of every metrics file; readers refuse other versions.
pub fn schema_line() -> String {
    format!("# gridsight-metrics schema_version={METRICS_SCHEMA_VERSION}")
}

pub fn metrics_header() -> String {
    format!("{}\n{METRICS_COLUMNS}\n", schema_line())
}

/// One row. Validation columns are empty when the epoch was not evaluated.
pub fn metrics_row(r: &EpochRecord) -> String {
    let mut s = format!(
        "{},{:.6},{:.6},{:.6},{:.6}",
        r.epoch, r.loss.box_loss, r.loss.cls_loss, r.loss.obj_loss, r.loss.aux_loss
    );
    match &r.eval {
        Some(e) => write!(s, ",{:.6},{:.6},{:.6},{:.6}", e.precision, e.recall, e.map50, e.map50_95).unwrap(),
        None => s.push_str(",,,,"),
    }
    s.push('\n');
    s
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    /// box, cls, obj, aux.
    pub losses: [f64; 4],
    /// precision, recall, map50, map50_95.
    pub eval: Option<[f64; 4]>,
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let bad = |line: usize, msg: String| Error::Parse {
        path: "<metrics>".into(),
        line,
        msg,
    };
    let mut lines = text.lines();
    if lines.next() != Some(schema_line().as_str()) {
        return Err(bad(1, format!("expected `{}`", schema_line())));
    }
    if lines.next() != Some(METRICS_COLUMNS) {
        return Err(bad(2, "unexpected column header".into()));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(bad(k + 3, format!("expected 9 fields, got {}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(k + 3, format!("`{s}`: {e}")));
        let epoch = f[0].parse().map_err(|e| bad(k + 3, format!("epoch: {e}")))?;
        let losses = [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?];
        let eval = if f[5..].iter().all(|s| s.is_empty()) {
            None
        } else {
            Some([num(f[5])?, num(f[6])?, num(f[7])?, num(f[8])?])
        };
        rows.push(MetricsRow { epoch, losses, eval });
    }
    Ok(rows)
}
