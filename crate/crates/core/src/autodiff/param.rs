use super::{Scalar, Tensor};

/// A named model tensor: trainable weight or non-trainable buffer
/// (batch-norm running statistics).
#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
    pub trainable: bool,
    /// Belongs to the auxiliary training branch.
    pub aux_only: bool,
    /// Subject to weight decay.
    pub decay: bool,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
            trainable: true,
            aux_only: false,
            decay: true,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            trainable: false,
            decay: false,
            ..Self::new(name, value)
        }
    }

    pub fn no_decay(mut self) -> Self {
        self.decay = false;
        self
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn accumulate_grad(&mut self, g: &Tensor<T>) {
        match &mut self.grad {
            Some(acc) => acc
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(a, &b)| *a += b),
            None => self.grad = Some(g.clone()),
        }
    }
}

/// Anything that owns parameters.
pub trait Module<T: Scalar> {
    fn visit(&self, f: &mut dyn FnMut(&Parameter<T>));

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter<T>));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable {
                n += p.numel()
            }
        });
        n
    }

    fn set_aux_only(&mut self) {
        self.visit_mut(&mut |p| p.aux_only = true);
    }
}
