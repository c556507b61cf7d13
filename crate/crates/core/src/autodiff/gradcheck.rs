//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{GradFault, Graph, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Lower bound on the relative-error denominator, so gradients that are
    /// zero up to rounding compare on an absolute scale.
    pub floor: f64,
    /// Elements probed per input; `None` probes every element.
    pub max_per_input: Option<usize>,
    pub seed: u64,
    /// Corrupts one op's backward rule in the analytic pass (negative control).
    #[doc(hidden)]
    pub fault: Option<GradFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            max_per_input: Some(24),
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckSample {
    pub input: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub samples: Vec<GradCheckSample>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.samples.iter().all(|s| s.rel_err <= self.tol)
    }

    pub fn worst(&self) -> Option<&GradCheckSample> {
        self.samples
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Relative error with a denominator floor.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the gradients `builder` produces by backpropagation against
/// central finite differences of its scalar output.
///
/// `builder` receives a fresh graph and one gradient-tracking leaf per
/// input, and must return a scalar.
pub fn grad_check<F>(inputs: &[Tensor<f64>], opts: GradCheckOptions, mut builder: F) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut eval = |values: &[Tensor<f64>]| -> Result<(Graph<f64>, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.input(t.clone(), true)).collect();
        let out = builder(&mut g, &vars)?;
        Ok((g, vars, out))
    };

    let (mut g, vars, out) = eval(inputs)?;
    if let Some(f) = opts.fault {
        g.inject_fault(f);
    }
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| match g.grad(v) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; g.value(v).numel()],
        })
        .collect();
    drop(g);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut samples = Vec::new();
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let picks: Vec<usize> = match opts.max_per_input {
            Some(m) if m < n => {
                let mut v = sample(&mut rng, n, m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        for e in picks {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + opts.h;
            let (g, _, o) = eval(&work)?;
            let plus = g.value(o).data()[0];
            work[i].data_mut()[e] = orig - opts.h;
            let (g, _, o) = eval(&work)?;
            let minus = g.value(o).data()[0];
            work[i].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = analytic[i][e];
            samples.push(GradCheckSample {
                input: i,
                element: e,
                analytic: a,
                numeric,
                rel_err: relative_error(a, numeric, opts.floor),
            });
        }
    }
    Ok(GradCheckReport {
        samples,
        tol: opts.tol,
    })
}
