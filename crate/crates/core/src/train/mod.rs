//! Training loop, batched inference and dataset evaluation.

mod infer;

pub use infer::{evaluate_model, ground_truth, predict, predict_dataset, predict_timed, thread_count, DetectOptions};

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::{batch_iter, Dataset};
use crate::detect::GridLayout;
use crate::error::{Error, Result};
use crate::metrics::EvalReport;
use crate::model::{compute_loss, LossBreakdown, LossHyper, Mode, Model, Sgd};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Fraction of all steps spent ramping the learning rate up linearly.
    pub warmup_frac: f64,
    pub seed: u64,
    pub shuffle: bool,
    pub loss: LossHyper,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            warmup_frac: 0.03,
            seed: 0,
            shuffle: true,
            loss: LossHyper::default(),
        }
    }
}

impl TrainConfig {
    /// Learning rate at global step `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        let warmup = (self.warmup_frac * total as f64).ceil() as usize;
        if step < warmup {
            self.lr * (step + 1) as f64 / warmup as f64
        } else {
            self.lr
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    pub eval: Option<EvalReport>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

/// One optimization step on a batch; returns its loss breakdown.
pub fn train_step(
    model: &mut Model<f32>,
    opt: &mut Sgd<f32>,
    images: crate::autodiff::Tensor<f32>,
    targets: &[crate::autodiff::Tensor<f32>],
    hyper: &LossHyper,
) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let x = g.input(images, false);
    let preds = model.forward(&mut g, x, Mode::Train)?;
    let (b, c) = (model.config().boxes, model.config().classes);
    let loss = compute_loss(&mut g, &preds, targets, b, c, hyper)?;
    if !loss.breakdown.total.is_finite() {
        return Err(Error::NonFinite { op: "yolo_loss" });
    }
    g.backward(loss.total)?;
    model.accumulate_grads(&g);
    opt.step(model);
    Ok(loss.breakdown)
}

pub fn layouts(model: &Model<f32>) -> Vec<GridLayout> {
    let cfg = model.config();
    cfg.grid_sizes()
        .into_iter()
        .map(|s| GridLayout::new(s, cfg.boxes, cfg.classes))
        .collect()
}

/// Trains `model` in place. After each epoch the model is evaluated on
/// `val` (when given) and `on_epoch` sees the record and current weights.
/// Deterministic for a fixed seed.
pub fn train(
    model: &mut Model<f32>,
    train_set: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<f32>) -> Result<()>,
) -> Result<TrainHistory> {
    if train_set.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let layouts = layouts(model);
    let mut opt = Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay);
    let per_epoch = train_set.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut history = TrainHistory::default();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut sum = LossBreakdown::default();
        let mut batches = 0;
        for batch in batch_iter::<f32>(train_set, cfg.batch_size, &layouts, cfg.seed, epoch, cfg.shuffle) {
            let batch = batch?;
            opt.lr = cfg.lr_at(step, total);
            let diverged = |what: String| Error::Diverged { epoch, step, what };
            let l = match train_step(model, &mut opt, batch.images, &batch.targets, &cfg.loss) {
                Ok(l) => l,
                Err(Error::NonFinite { op }) => return Err(diverged(format!("non-finite value in {op}"))),
                Err(e) => return Err(e),
            };
            sum.add(&l);
            batches += 1;
            step += 1;
        }
        let loss = sum.scaled(1.0 / batches as f64);
        log::info!(
            "epoch {epoch}/{}: loss {:.4} (box {:.4} obj {:.4} cls {:.4} aux {:.4})",
            cfg.epochs,
            loss.total,
            loss.box_loss,
            loss.obj_loss,
            loss.cls_loss,
            loss.aux_loss
        );
        let eval = match val {
            Some(v) if !v.is_empty() => {
                let (report, _) = evaluate_model(model, v, &DetectOptions::for_eval())?;
                log::info!("epoch {epoch}: map50 {:.4} map50-95 {:.4}", report.map50, report.map50_95);
                Some(report)
            }
            _ => None,
        };
        let record = EpochRecord { epoch, loss, eval };
        on_epoch(&record, model)?;
        history.epochs.push(record);
    }
    Ok(history)
}
