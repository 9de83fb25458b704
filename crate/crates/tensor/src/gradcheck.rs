//! Central finite-difference gradient checking.
//!
//! Only forward evaluations feed the numerical estimate, so a check never
//! depends on the backward rules it is validating.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{Graph, Result, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor: `|a − n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub per_input: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, floor: 1e-6, per_input: None }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `f` against central differences at `inputs`.
///
/// `f` receives a fresh graph and one trainable [`Var`] per input and must
/// return a scalar. When `per_input` caps the coordinates, the sample favors
/// coordinates with a nonzero analytic gradient.
pub fn check_gradients<F, R>(
    inputs: &[Tensor<f64>],
    options: GradCheckOptions,
    rng: &mut R,
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Graph<f64>, &[Var]) -> Result<Var>,
    R: Rng + ?Sized,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&g, &vars)?;
        let value = g.value_ref(out).item();
        Ok(value)
    };

    let g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&g, &vars)?;
    let grads = g.backward(loss)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: None, checked: 0 };
    let mut values = inputs.to_vec();
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[i].shape()));
        let coords = select_coords(analytic.data(), options.per_input, rng);
        for j in coords {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + options.step;
            let plus = eval(&values)?;
            values[i].data_mut()[j] = orig - options.step;
            let minus = eval(&values)?;
            values[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic.data()[j];
            let rel = relative_error(a, numeric, options.floor);
            report.checked += 1;
            report.max_abs_error = report.max_abs_error.max((a - numeric).abs());
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((i, j));
            }
        }
    }
    Ok(report)
}

fn select_coords<R: Rng + ?Sized>(grad: &[f64], cap: Option<usize>, rng: &mut R) -> Vec<usize> {
    let Some(cap) = cap.filter(|&c| c < grad.len()) else {
        return (0..grad.len()).collect();
    };
    let (mut nonzero, mut zero): (Vec<usize>, Vec<usize>) = (0..grad.len()).partition(|&j| grad[j] != 0.0);
    nonzero.shuffle(rng);
    zero.shuffle(rng);
    let take_zero = if nonzero.len() >= cap { cap / 4 } else { cap - nonzero.len() };
    let mut picked: Vec<usize> = nonzero.into_iter().take(cap - take_zero.min(cap)).collect();
    picked.extend(zero.into_iter().take(take_zero));
    picked.sort_unstable();
    picked
}
