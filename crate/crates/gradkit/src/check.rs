//! Central-difference gradient checking.

use crate::error::Result;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

/// Largest relative error between `analytic` and the central difference
/// `(f(x+h) - f(x-h)) / 2h` taken at every coordinate of `point`.
pub fn compare_with_central_differences(
    point: &Tensor,
    analytic: &Tensor,
    h: f64,
    mut f: impl FnMut(&Tensor) -> Result<f64>,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x = point.data()[i];
        probe.data_mut()[i] = x + h;
        let up = f(&probe)?;
        probe.data_mut()[i] = x - h;
        let down = f(&probe)?;
        probe.data_mut()[i] = x;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok(worst)
}

/// Checks the tape gradient of a scalar function of one tensor.
///
/// `f` records its computation on the given tape starting from the input
/// variable and returns the scalar output variable.
pub fn grad_check<F>(f: F, point: &Tensor, h: f64) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, Var) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let x = tape.leaf(point.clone())?;
        let y = f(&mut tape, x)?;
        let grads = tape.backward(y)?;
        grads.wrt(x).cloned().unwrap_or_else(|| Tensor::zeros(point.shape()))
    };
    compare_with_central_differences(point, &analytic, h, |p| {
        let mut tape = Tape::new();
        let x = tape.leaf(p.clone())?;
        let y = f(&mut tape, x)?;
        Ok(tape.value(y).item())
    })
}

/// Per-parameter maximum relative error for a loss over a whole store.
///
/// `loss` must be a pure function of the store's parameter values.
pub fn grad_check_store(
    store: &ParamStore,
    analytic: &ParamGrads,
    h: f64,
    mut loss: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<(ParamId, f64)>> {
    let mut probe = store.clone();
    let mut report = Vec::new();
    for id in store.ids() {
        let point = store.value(id).clone();
        let zeros = Tensor::zeros(point.shape());
        let grad = analytic.get(id).unwrap_or(&zeros);
        let err = compare_with_central_differences(&point, grad, h, |p| {
            *probe.value_mut(id) = p.clone();
            loss(&probe)
        })?;
        *probe.value_mut(id) = point;
        report.push((id, err));
    }
    Ok(report)
}
