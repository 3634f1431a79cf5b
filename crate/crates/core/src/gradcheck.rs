//! Central finite-difference gradient checking against the tape.

use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub eps: f64,
    /// Relative tolerance per coordinate.
    pub rel_tol: f64,
    /// Magnitudes below this are compared absolutely, not relatively.
    pub abs_floor: f64,
    /// Coordinates sampled per input (all of them when the input is smaller).
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-6, rel_tol: 1e-4, abs_floor: 1e-6, max_coords: 64, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
    pub rel_tol: f64,
}

impl GradCheckReport {
    pub fn checked(&self) -> usize {
        self.coords.len()
    }

    pub fn passed(&self) -> usize {
        self.coords.iter().filter(|c| c.rel_error < self.rel_tol).count()
    }

    pub fn pass_fraction(&self) -> f64 {
        if self.coords.is_empty() {
            1.0
        } else {
            self.passed() as f64 / self.checked() as f64
        }
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Compares `d build / d inputs` from the tape with central differences.
///
/// `build` records a scalar-valued function of the supplied variables; it is
/// re-run on fresh tapes for every perturbation.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], build: F, opts: &GradCheckOptions) -> GradCheckReport
where
    F: Fn(&Tape<f64>, &[Var]) -> Var,
{
    let eval = |values: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|v| tape.constant(v.clone())).collect();
        let out = build(&tape, &vars);
        tape.value(out).item()
    };

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|v| tape.variable(v.clone())).collect();
    let out = build(&tape, &vars);
    let grads = tape.backward(out);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport { coords: Vec::new(), rel_tol: opts.rel_tol };
    let mut values: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let n = inputs[i].len();
        let indices: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            let mut idx = sample(&mut rng, n, opts.max_coords).into_vec();
            idx.sort_unstable();
            idx
        };
        for index in indices {
            let analytic = grads.get(*var).map_or(0.0, |g| g.data()[index]);
            let orig = values[i].data()[index];
            values[i].data_mut()[index] = orig + opts.eps;
            let plus = eval(&values);
            values[i].data_mut()[index] = orig - opts.eps;
            let minus = eval(&values);
            values[i].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let scale = analytic.abs().max(numeric.abs()).max(opts.abs_floor);
            report.coords.push(CoordCheck {
                input: i,
                index,
                analytic,
                numeric,
                rel_error: (analytic - numeric).abs() / scale,
            });
        }
    }
    report
}
