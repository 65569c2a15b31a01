//! Central-difference verification of tape gradients.

use serde::Serialize;

use super::graph::{Graph, ReduceMode, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Denominator floor of the relative error, so coordinates whose true
/// gradient is ~0 are judged on absolute agreement.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, Serialize)]
pub struct ParamCheck {
    pub index: usize,
    pub coords: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_coord: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares backprop gradients of `f` with central differences
/// `(f(p+h) − f(p−h)) / 2h`, coordinate by coordinate, for every parameter.
///
/// `f` records a scalar-valued computation on the graph it is handed; the
/// graph's parameters are `params` (perturbed copies during probing).
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var>,
{
    if h <= 0.0 || tol <= 0.0 {
        return Err(Error::Config("grad_check needs positive h and tol".into()));
    }
    let eval = |p: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new(p, ReduceMode::Sequential);
        let root = f(&mut g)?;
        let v = g.value(root);
        if v.len() != 1 {
            return Err(Error::Shape { op: "grad_check", detail: format!("output shape {:?}", v.shape()) });
        }
        let x = v.data()[0];
        if !x.is_finite() {
            return Err(Error::NonFinite("grad_check probe".into()));
        }
        Ok(x)
    };

    let analytic = {
        let mut g = Graph::new(params, ReduceMode::Sequential);
        let root = f(&mut g)?;
        g.backward(root)?.into_params()
    };

    let mut probe = params.to_vec();
    let mut report = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        let mut check = ParamCheck { index: pi, coords: grad.len(), max_rel_error: 0.0, max_abs_error: 0.0, worst_coord: 0 };
        for c in 0..grad.len() {
            let orig = probe[pi].data()[c];
            probe[pi].data_mut()[c] = orig + h;
            let up = eval(&probe)?;
            probe[pi].data_mut()[c] = orig - h;
            let down = eval(&probe)?;
            probe[pi].data_mut()[c] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[c];
            let rel = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if rel > check.max_rel_error {
                check.max_rel_error = rel;
                check.worst_coord = c;
            }
        }
        overall = overall.max(check.max_rel_error);
        report.push(check);
    }
    Ok(GradCheckReport { params: report, max_rel_error: overall, tol, passed: overall < tol })
}
