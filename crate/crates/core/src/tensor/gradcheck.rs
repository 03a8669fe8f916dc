//! Central finite-difference checks for analytic gradients.
//!
//! The numeric side only ever evaluates forward values, so it stays
//! independent of every backward rule it is used to verify.

use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Denominator floor for relative errors, so gradients that are zero up to
/// rounding do not blow the ratio up.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    /// `(input, element, analytic, numeric)` of the worst entry.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl GradCheckReport {
    fn record(&mut self, input: usize, element: usize, analytic: f64, numeric: f64) {
        let e = rel_error(analytic, numeric);
        self.checked += 1;
        if e > self.max_rel_error || self.worst.is_none() {
            self.max_rel_error = self.max_rel_error.max(e);
            self.worst = Some((input, element, analytic, numeric));
        }
    }
}

/// Builds `f` on fresh graphs with every input as a parameter and compares
/// the backward pass against central differences with step `eps`.
///
/// `select(input_index, len)` picks which elements of each input to check;
/// use [`all_elements`] to check everything.
pub fn check<F, P>(f: F, inputs: &[Tensor<f64>], eps: f64, select: P) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
    P: Fn(usize, usize) -> Vec<usize>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.param(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        Ok(g.value(loss).data().iter().sum())
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| g.grad_or_zeros(v)).collect();

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for j in select(i, input.len()) {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            report.record(i, j, analytic[i].data()[j], (up - down) / (2.0 * eps));
        }
    }
    Ok(report)
}

pub fn all_elements(_input: usize, len: usize) -> Vec<usize> {
    (0..len).collect()
}
