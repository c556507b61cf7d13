use serde::{Deserialize, Serialize};

use super::net::Predictions;
use crate::autodiff::{Graph, Scalar, Tensor, Var};
use crate::detect::{iou, BBox};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossHyper {
    pub lambda_coord: f64,
    pub lambda_noobj: f64,
    pub lambda_aux: f64,
}

impl Default for LossHyper {
    fn default() -> Self {
        Self {
            lambda_coord: 5.0,
            lambda_noobj: 0.5,
            lambda_aux: 0.25,
        }
    }
}

/// Loss components, already divided by the batch size. `aux` is the raw
/// auxiliary sum; `total = box + obj + cls + lambda_aux * aux`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub box_loss: f64,
    pub cls_loss: f64,
    pub obj_loss: f64,
    pub aux_loss: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            box_loss: self.box_loss * k,
            cls_loss: self.cls_loss * k,
            obj_loss: self.obj_loss * k,
            aux_loss: self.aux_loss * k,
            total: self.total * k,
        }
    }

    pub fn add(&mut self, o: &Self) {
        self.box_loss += o.box_loss;
        self.cls_loss += o.cls_loss;
        self.obj_loss += o.obj_loss;
        self.aux_loss += o.aux_loss;
        self.total += o.total;
    }
}

/// Responsible predictor and its (detached) IoU target for every object cell
/// of one prediction grid, indexed by flat cell `(n * S + i) * S + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridPlan {
    pub cells: Vec<Option<(usize, f64)>>,
}

/// Frozen predictor assignment for a whole prediction set. Computing the
/// loss under a fixed plan makes it a smooth function of the predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct LossPlan {
    pub main: Vec<GridPlan>,
    pub aux: Vec<GridPlan>,
}

#[derive(Clone, Debug, Default)]
pub struct LossOptions {
    pub plan: Option<LossPlan>,
    /// Per-scale switch for the auxiliary terms; empty keeps all scales.
    pub aux_scales: Vec<bool>,
}

pub struct Loss {
    pub total: Var,
    pub breakdown: LossBreakdown,
}

#[derive(Default)]
struct Terms {
    box_loss: f64,
    obj_loss: f64,
    cls_loss: f64,
}

impl Terms {
    fn sum(&self) -> f64 {
        self.box_loss + self.obj_loss + self.cls_loss
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn grid_dims(pred: &[usize], target: &[usize], boxes: usize, classes: usize) -> Result<(usize, usize)> {
    match pred {
        [n, s, s2, d] if s == s2 && *d == boxes * 5 + classes && pred == target => Ok((*n, *s)),
        _ => Err(Error::shape(
            "yolo_loss",
            format!("prediction {pred:?} and target {target:?} disagree (B={boxes}, C={classes})"),
        )),
    }
}

fn cell_box(raw: &[f64], i: usize, j: usize, s: usize) -> BBox {
    let sf = s as f64;
    BBox::new((j as f64 + raw[0]) / sf, (i as f64 + raw[1]) / sf, raw[2], raw[3], 0, 0.0)
}

/// Assigns, for every object cell, the predictor whose decoded box overlaps
/// the ground truth most (ties to the lowest index) and records that IoU.
pub fn plan_grid(pred: &[f64], target: &[f64], n: usize, s: usize, boxes: usize, classes: usize) -> GridPlan {
    let d = boxes * 5 + classes;
    let mut cells = Vec::with_capacity(n * s * s);
    for cell in 0..n * s * s {
        let (i, j) = ((cell / s) % s, cell % s);
        let p = &pred[cell * d..(cell + 1) * d];
        let t = &target[cell * d..(cell + 1) * d];
        if t[4] <= 0.5 {
            cells.push(None);
            continue;
        }
        let gt = cell_box(t, i, j, s);
        let mut best = (0, f64::NEG_INFINITY);
        for b in 0..boxes {
            let v = iou(&cell_box(&p[b * 5..], i, j, s), &gt);
            if v > best.1 {
                best = (b, v);
            }
        }
        cells.push(Some(best));
    }
    GridPlan { cells }
}

/// Loss of one grid and its gradient with respect to the raw predictions,
/// both divided by `n`.
fn grid_loss(pred: &[f64], target: &[f64], plan: &GridPlan, n: usize, boxes: usize, classes: usize, h: &LossHyper) -> (Terms, Vec<f64>) {
    let d = boxes * 5 + classes;
    let inv_n = 1.0 / n as f64;
    let mut terms = Terms::default();
    let mut grad = vec![0.0; pred.len()];
    let sqrt_floor = 1e-12;
    for (cell, assign) in plan.cells.iter().enumerate() {
        let p = &pred[cell * d..(cell + 1) * d];
        let t = &target[cell * d..(cell + 1) * d];
        let gr = &mut grad[cell * d..(cell + 1) * d];
        for b in 0..boxes {
            if matches!(assign, Some((r, _)) if *r == b) {
                continue;
            }
            let c = sigmoid(p[b * 5 + 4]);
            terms.obj_loss += h.lambda_noobj * c * c;
            gr[b * 5 + 4] += 2.0 * h.lambda_noobj * c * c * (1.0 - c);
        }
        let Some((r, target_iou)) = *assign else {
            continue;
        };
        let o = r * 5;
        for k in 0..2 {
            let e = p[o + k] - t[k];
            terms.box_loss += h.lambda_coord * e * e;
            gr[o + k] += 2.0 * h.lambda_coord * e;
        }
        for k in 2..4 {
            let pv = p[o + k].max(sqrt_floor);
            let e = pv.sqrt() - t[k].max(sqrt_floor).sqrt();
            terms.box_loss += h.lambda_coord * e * e;
            if p[o + k] > sqrt_floor {
                gr[o + k] += h.lambda_coord * e / pv.sqrt();
            }
        }
        let c = sigmoid(p[o + 4]);
        let e = c - target_iou;
        terms.obj_loss += e * e;
        gr[o + 4] += 2.0 * e * c * (1.0 - c);

        let logits = &p[boxes * 5..];
        let onehot = &t[boxes * 5..];
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|&q| (q - m).exp()).sum::<f64>().ln();
        let mass: f64 = onehot.iter().sum();
        for k in 0..classes {
            if onehot[k] != 0.0 {
                terms.cls_loss -= onehot[k] * (logits[k] - lse);
            }
            gr[boxes * 5 + k] += (logits[k] - lse).exp() * mass - onehot[k];
        }
    }
    terms.box_loss *= inv_n;
    terms.obj_loss *= inv_n;
    terms.cls_loss *= inv_n;
    grad.iter_mut().for_each(|v| *v *= inv_n);
    (terms, grad)
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.as_f64()).collect()
}

/// Computes the assignment the loss would use for the current predictions.
pub fn plan_loss<T: Scalar>(g: &Graph<T>, preds: &Predictions, targets: &[Tensor<T>], boxes: usize, classes: usize) -> Result<LossPlan> {
    let plan_set = |vars: &[Var]| -> Result<Vec<GridPlan>> {
        check_scales(vars, targets)?;
        vars.iter()
            .zip(targets)
            .map(|(&v, t)| {
                let (n, s) = grid_dims(g.shape(v), t.shape(), boxes, classes)?;
                Ok(plan_grid(&to_f64(g.value(v)), &to_f64(t), n, s, boxes, classes))
            })
            .collect()
    };
    Ok(LossPlan {
        main: plan_set(&preds.main)?,
        aux: match &preds.aux {
            Some(a) => plan_set(a)?,
            None => Vec::new(),
        },
    })
}

fn check_scales<T>(vars: &[Var], targets: &[Tensor<T>]) -> Result<()> {
    if vars.len() != targets.len() {
        return Err(Error::shape(
            "yolo_loss",
            format!("{} prediction scales but {} target scales", vars.len(), targets.len()),
        ));
    }
    Ok(())
}

/// One fused loss node per grid; returns the per-grid terms and nodes.
fn branch_loss<T: Scalar>(
    g: &mut Graph<T>,
    vars: &[Var],
    targets: &[Tensor<T>],
    plans: Option<&[GridPlan]>,
    keep: &dyn Fn(usize) -> bool,
    boxes: usize,
    classes: usize,
    hyper: &LossHyper,
) -> Result<(Terms, Option<Var>)> {
    check_scales(vars, targets)?;
    let mut total = Terms::default();
    let mut node: Option<Var> = None;
    for (k, (&v, t)) in vars.iter().zip(targets).enumerate() {
        let (n, s) = grid_dims(g.shape(v), t.shape(), boxes, classes)?;
        if !keep(k) {
            continue;
        }
        let pred = to_f64(g.value(v));
        let tgt = to_f64(t);
        let computed;
        let plan = match plans {
            Some(p) => p.get(k).ok_or_else(|| Error::shape("yolo_loss", "plan is missing a scale"))?,
            None => {
                computed = plan_grid(&pred, &tgt, n, s, boxes, classes);
                &computed
            }
        };
        if plan.cells.len() != n * s * s {
            return Err(Error::shape("yolo_loss", "plan does not match the grid"));
        }
        let (terms, grad) = grid_loss(&pred, &tgt, plan, n, boxes, classes, hyper);
        let local = grad.into_iter().map(T::of).collect();
        let f = g.fused_scalar("yolo_loss", T::of(terms.sum()), vec![v], vec![local])?;
        node = Some(match node {
            Some(acc) => g.add(acc, f)?,
            None => f,
        });
        total.box_loss += terms.box_loss;
        total.obj_loss += terms.obj_loss;
        total.cls_loss += terms.cls_loss;
    }
    Ok((total, node))
}

/// Composite detection loss over the main grids and, when present, the
/// auxiliary grids, which are supervised with the same targets.
pub fn compute_loss<T: Scalar>(
    g: &mut Graph<T>,
    preds: &Predictions,
    targets: &[Tensor<T>],
    boxes: usize,
    classes: usize,
    hyper: &LossHyper,
) -> Result<Loss> {
    compute_loss_with(g, preds, targets, boxes, classes, hyper, &LossOptions::default())
}

pub fn compute_loss_with<T: Scalar>(
    g: &mut Graph<T>,
    preds: &Predictions,
    targets: &[Tensor<T>],
    boxes: usize,
    classes: usize,
    hyper: &LossHyper,
    opts: &LossOptions,
) -> Result<Loss> {
    let all = |_: usize| true;
    let main_plan = opts.plan.as_ref().map(|p| p.main.as_slice());
    let (main, main_node) = branch_loss(g, &preds.main, targets, main_plan, &all, boxes, classes, hyper)?;
    let mut total = main_node.expect("at least one scale");
    let mut aux_sum = 0.0;
    if let Some(aux) = &preds.aux {
        let aux_plan = opts.plan.as_ref().map(|p| p.aux.as_slice());
        let keep = |k: usize| opts.aux_scales.get(k).copied().unwrap_or(true);
        let (terms, node) = branch_loss(g, aux, targets, aux_plan, &keep, boxes, classes, hyper)?;
        aux_sum = terms.sum();
        if let Some(node) = node {
            let scaled = g.scale(node, T::of(hyper.lambda_aux));
            total = g.add(total, scaled)?;
        }
    }
    let breakdown = LossBreakdown {
        box_loss: main.box_loss,
        cls_loss: main.cls_loss,
        obj_loss: main.obj_loss,
        aux_loss: aux_sum,
        total: main.sum() + hyper.lambda_aux * aux_sum,
    };
    Ok(Loss { total, breakdown })
}
