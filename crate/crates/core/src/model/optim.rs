use std::collections::HashMap;

use crate::autodiff::{Module, Scalar};

/// SGD with heavy-ball momentum and L2 weight decay:
/// `v <- momentum * v + grad + decay * p`, `p <- p - lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, Vec<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    /// Updates every trainable parameter, then clears all gradients.
    /// A parameter without a gradient is treated as having a zero gradient.
    pub fn step(&mut self, model: &mut impl Module<T>) {
        let (lr, mu) = (T::of(self.lr), T::of(self.momentum));
        let wd = self.weight_decay;
        let velocity = &mut self.velocity;
        model.visit_mut(&mut |p| {
            if !p.trainable {
                return;
            }
            let decay = if p.decay { T::of(wd) } else { T::zero() };
            let v = velocity
                .entry(p.name.clone())
                .or_insert_with(|| vec![T::zero(); p.value.numel()]);
            let grad = p.grad.take();
            let values = p.value.data_mut();
            for (k, (vk, pk)) in v.iter_mut().zip(values.iter_mut()).enumerate() {
                let gk = grad.as_ref().map_or(T::zero(), |g| g.data()[k]);
                *vk = mu * *vk + gk + decay * *pk;
                *pk -= lr * *vk;
            }
        });
    }
}
