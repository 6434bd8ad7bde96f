//! Central finite-difference verification of graph gradients.
//!
//! The check only evaluates the loss closure forward, perturbing one real
//! or imaginary coordinate at a time, so it is independent of every
//! backward rule it verifies.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Which half of a complex coordinate was perturbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

#[derive(Clone, Debug)]
pub struct CoordCheck {
    pub input: usize,
    pub flat: usize,
    pub part: Part,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checks: Vec<CoordCheck>,
}

impl GradReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.checks
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Coordinates per input; `None` checks every coordinate.
    pub samples_per_input: Option<usize>,
    /// Perturb imaginary parts as well as real parts.
    pub imaginary: bool,
    /// Inputs whose imaginary parts are never perturbed (real-typed leaves).
    pub real_inputs: Vec<usize>,
    /// Relative error uses `max(|a|, |n|, floor)` as its denominator.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            samples_per_input: None,
            imaginary: true,
            real_inputs: Vec::new(),
            floor: 1e-8,
            seed: 0,
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `backward` against central differences of `loss_fn`.
///
/// `loss_fn` receives the inputs bound as trainable leaves and must return
/// a real scalar.
pub fn check_gradients<T, F>(inputs: &[Tensor<T>], loss_fn: F, opts: &GradCheckOptions) -> Result<GradReport>
where
    T: Scalar,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    let eval = |tensors: &[Tensor<T>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = tensors.iter().map(|t| g.param(t.clone())).collect();
        let loss = loss_fn(&mut g, &vars)?;
        Ok(g.value(loss).re()[0].as_f64())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = loss_fn(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradReport::default();
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let h = T::of(opts.step);
    for (input, t) in inputs.iter().enumerate() {
        let coords: Vec<usize> = match opts.samples_per_input {
            Some(k) if k < t.len() => sample(&mut rng, t.len(), k).into_vec(),
            _ => (0..t.len()).collect(),
        };
        let parts: &[Part] = if opts.imaginary && !opts.real_inputs.contains(&input) { &[Part::Re, Part::Im] } else { &[Part::Re] };
        for &flat in &coords {
            for &part in parts {
                let original = match part {
                    Part::Re => t.re()[flat],
                    Part::Im => t.im()[flat],
                };
                let set = |w: &mut Tensor<T>, v: T| match part {
                    Part::Re => w.re_mut()[flat] = v,
                    Part::Im => w.im_mut()[flat] = v,
                };
                set(&mut work[input], original + h);
                let up = eval(&work)?;
                set(&mut work[input], original - h);
                let down = eval(&work)?;
                set(&mut work[input], original);
                let numeric = (up - down) / (2.0 * opts.step);
                let a = match part {
                    Part::Re => analytic[input].re()[flat],
                    Part::Im => analytic[input].im()[flat],
                }
                .as_f64();
                report.checks.push(CoordCheck {
                    input,
                    flat,
                    part,
                    analytic: a,
                    numeric,
                    rel_error: relative_error(a, numeric, opts.floor),
                });
            }
        }
    }
    Ok(report)
}
