use std::time::{Duration, Instant};

use crate::autodiff::{Graph, Tensor};
use crate::data::Dataset;
use crate::detect::{decode_grid, nms, BBox, GridLayout};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Mode, Model};

/// Worker count from `GRIDSIGHT_THREADS`, default 1.
pub fn thread_count() -> usize {
    std::env::var("GRIDSIGHT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectOptions {
    pub conf_thresh: f64,
    pub iou_thresh: f64,
    pub class_aware: bool,
}

impl Default for DetectOptions {
    fn default() -> Self {
        Self {
            conf_thresh: crate::detect::DEFAULT_CONF_THRESH,
            iou_thresh: crate::detect::DEFAULT_NMS_IOU,
            class_aware: true,
        }
    }
}

impl DetectOptions {
    /// Low score cut used when building precision-recall curves.
    pub fn for_eval() -> Self {
        Self {
            conf_thresh: 0.001,
            ..Self::default()
        }
    }
}

/// Runs the main branch on `images` (`N x 3 x S x S`) and returns, per image,
/// the decoded boxes of every scale after NMS.
pub fn predict(model: &mut Model<f32>, images: Tensor<f32>, opts: &DetectOptions) -> Result<Vec<Vec<BBox>>> {
    Ok(predict_timed(model, images, opts)?.0)
}

/// Like [`predict`], also returning the wall-clock time of the network
/// forward pass alone (grid decoding and NMS excluded).
pub fn predict_timed(
    model: &mut Model<f32>,
    images: Tensor<f32>,
    opts: &DetectOptions,
) -> Result<(Vec<Vec<BBox>>, Duration)> {
    let n = images.shape().first().copied().unwrap_or(0);
    let mut g = Graph::new();
    let x = g.input(images, false);
    let start = Instant::now();
    let preds = model.forward(&mut g, x, Mode::Infer)?;
    let elapsed = start.elapsed();
    let cfg = model.config();
    let mut out = vec![Vec::new(); n];
    for (&v, s) in preds.main.iter().zip(cfg.grid_sizes()) {
        let layout = GridLayout::new(s, cfg.boxes, cfg.classes);
        let data = g.value(v).data();
        let per = layout.cell_len();
        for (i, boxes) in out.iter_mut().enumerate() {
            boxes.extend(decode_grid(&data[i * per..(i + 1) * per], layout, opts.conf_thresh)?);
        }
    }
    let out = out
        .into_iter()
        .map(|b| nms(&b, opts.iou_thresh, opts.class_aware))
        .collect();
    Ok((out, elapsed))
}

/// Detections for every sample, in dataset order. Work is split across
/// `threads` model copies; the result does not depend on the split.
pub fn predict_dataset(model: &Model<f32>, ds: &Dataset, batch: usize, opts: &DetectOptions, threads: usize) -> Result<Vec<Vec<BBox>>> {
    let idx: Vec<usize> = (0..ds.len()).collect();
    let run = |model: &mut Model<f32>, part: &[usize]| -> Result<Vec<Vec<BBox>>> {
        let mut out = Vec::with_capacity(part.len());
        for chunk in part.chunks(batch.max(1)) {
            let imgs: Vec<Tensor<f32>> = chunk.iter().map(|&i| ds.samples[i].image.clone()).collect();
            out.extend(predict(model, Tensor::stack(&imgs)?, opts)?);
        }
        Ok(out)
    };
    let threads = threads.clamp(1, ds.len().max(1));
    if threads == 1 {
        return run(&mut model.clone(), &idx);
    }
    let per = ds.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Vec<BBox>>>> = std::thread::scope(|s| {
        let handles: Vec<_> = idx
            .chunks(per)
            .map(|part| {
                let mut m = model.clone();
                let run = &run;
                s.spawn(move || run(&mut m, part))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("worker panicked".into()))))
            .collect()
    });
    let mut out = Vec::with_capacity(ds.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn ground_truth(ds: &Dataset) -> Vec<Vec<BBox>> {
    ds.samples
        .iter()
        .map(|s| s.annotations.iter().map(|a| a.to_bbox()).collect())
        .collect()
}

/// Predicts on the dataset and scores it.
pub fn evaluate_model(model: &Model<f32>, ds: &Dataset, opts: &DetectOptions) -> Result<(EvalReport, Vec<Vec<BBox>>)> {
    let dets = predict_dataset(model, ds, 16, opts, thread_count())?;
    let names = &ds.class_names[..model.config().classes.min(ds.class_names.len())];
    let report = evaluate(&dets, &ground_truth(ds), names)?;
    Ok((report, dets))
}
