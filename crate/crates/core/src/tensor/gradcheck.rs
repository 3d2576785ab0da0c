use super::{Graph, Tensor, Var};
use crate::error::Result;

/// Result of comparing analytic gradients against central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error for every input element.
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tol
    }
}

/// Gradients smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-3;

/// Checks the gradient of the scalar graph `f(x)` at `x` by central differences with step `h`.
///
/// The relative error of element i is `|analytic − numeric| / max(|analytic|, |numeric|, 1e-3)`.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let loss = f(&mut g, xv)?;
    g.backward(loss)?;
    let analytic = g.grad(xv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; x.len()]);

    let eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.param(t);
        let out = f(&mut g, v)?;
        Ok(g.value(out).data()[0])
    };

    let mut rel_errors = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(SCALE_FLOOR);
        rel_errors.push((a - numeric).abs() / denom);
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { rel_errors, max_rel_error, tol })
}
