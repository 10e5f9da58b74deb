//! Central finite differences, used as an independent oracle for the tape.
//!
//! Nothing here touches the backward rules: numeric gradients come from
//! forward evaluations only.

use crate::autodiff::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Default step for 64-bit checks.
pub const STEP: f64 = 1e-5;

/// `||a - n|| / max(||a||, ||n||)`, with a tiny floor so two zero vectors
/// compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n) * (a - n))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-10)
}

/// Numeric partial derivatives of `f` at the given flat coordinates of `x`.
pub fn numeric_gradient_at(
    x: &Tensor<f64>,
    coords: &[usize],
    h: f64,
    mut f: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<Vec<f64>> {
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &c in coords {
        let orig = probe.data()[c];
        probe.data_mut()[c] = orig + h;
        let up = f(&probe)?;
        probe.data_mut()[c] = orig - h;
        let down = f(&probe)?;
        probe.data_mut()[c] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Outcome of checking one graph function.
#[derive(Clone, Debug)]
pub struct Report {
    /// Relative error per input.
    pub errors: Vec<f64>,
}

impl Report {
    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks a scalar-valued graph function of several inputs against central
/// differences on every coordinate.
pub fn check(
    inputs: &[Tensor<f64>],
    h: f64,
    f: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
) -> Result<Report> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = f(&mut g, &vars)?;
    g.backward(loss)?;

    let eval = |vals: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let vs: Vec<Var> = vals.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let out = f(&mut g, &vs)?;
        Ok(g.value(out).item())
    };

    let mut errors = Vec::with_capacity(inputs.len());
    for (i, (input, &var)) in inputs.iter().zip(&vars).enumerate() {
        let analytic: Vec<f64> = match g.grad(var) {
            Some(t) => t.data().to_vec(),
            None => vec![0.0; input.len()],
        };
        let coords: Vec<usize> = (0..input.len()).collect();
        let numeric = numeric_gradient_at(input, &coords, h, |probe| {
            let mut vals = inputs.to_vec();
            vals[i] = probe.clone();
            eval(&vals)
        })?;
        errors.push(relative_error(&analytic, &numeric));
    }
    Ok(Report { errors })
}
