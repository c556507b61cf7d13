use super::Scalar;

/// Batch-norm statistics source.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    /// Normalize with batch statistics and update the running estimates.
    Batch,
    /// Batch statistics without touching the running estimates.
    BatchFrozen,
    /// Normalize with the running estimates only.
    Running,
}

impl BnMode {
    pub fn uses_batch_stats(self) -> bool {
        !matches!(self, BnMode::Running)
    }

    /// The same statistics source with running-stat updates suppressed.
    pub fn frozen(self) -> Self {
        match self {
            BnMode::Batch => BnMode::BatchFrozen,
            other => other,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BnHyper {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnHyper {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            momentum: 0.03,
        }
    }
}

/// Per-channel mean and biased variance over `N, H, W`.
pub(crate) fn channel_stats<T: Scalar>(x: &[T], n: usize, c: usize, plane: usize) -> (Vec<T>, Vec<T>) {
    let m = T::of((n * plane) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            s += x[off..off + plane].iter().copied().sum::<T>();
        }
        let mu = s / m;
        let mut v = T::zero();
        for i in 0..n {
            let off = (i * c + ch) * plane;
            v += x[off..off + plane]
                .iter()
                .map(|&e| (e - mu) * (e - mu))
                .sum::<T>();
        }
        mean[ch] = mu;
        var[ch] = v / m;
    }
    (mean, var)
}
