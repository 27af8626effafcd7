//! Central finite-difference verification of analytic gradients.
//!
//! Points where a primitive is not differentiable (ReLU at 0, max-pool ties) are not
//! detected here; callers keep inputs at least 1e-3 away from such kinks.

use super::graph::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Max over entries of `|analytic − fd| / max(|analytic|, 1e-3·max|analytic|, 1e-8)` for
/// one parameter, where `fd = (f(p+h) − f(p−h)) / 2h` and `build` rebuilds the scalar
/// loss. The floor keeps entries that are tiny next to the rest of the gradient from
/// measuring finite-difference cancellation noise instead of gradient error.
pub fn grad_check<F>(params: &mut ParamStore<f64>, param: ParamId, h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let analytic = analytic_grad(params, param, &build)?;
    let scale = max_abs(analytic.data());
    check_against(params, param, h, &build, &analytic, scale)
}

/// Runs [`grad_check`] over every parameter in the store and returns the worst error.
/// The floor uses the largest gradient entry across all parameters, so a parameter
/// whose whole gradient is negligible (an op with softmax weight ~1e-9) is not judged
/// on finite-difference noise alone.
pub fn grad_check_all<F>(params: &mut ParamStore<f64>, h: f64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let ids: Vec<ParamId> = params.ids().collect();
    let grads = ids
        .iter()
        .map(|&id| analytic_grad(params, id, &build))
        .collect::<Result<Vec<_>>>()?;
    let scale = grads.iter().fold(0.0f64, |m, g| m.max(max_abs(g.data())));
    let mut worst = 0.0f64;
    for (&id, analytic) in ids.iter().zip(&grads) {
        worst = worst.max(check_against(params, id, h, &build, analytic, scale)?);
    }
    Ok(worst)
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn analytic_grad<F>(params: &ParamStore<f64>, param: ParamId, build: &F) -> Result<Tensor<f64>>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let loss = build(&mut g)?;
    Ok(g.backward(loss)?.param(param).clone())
}

fn check_against<F>(
    params: &mut ParamStore<f64>,
    param: ParamId,
    h: f64,
    build: &F,
    analytic: &Tensor<f64>,
    scale: f64,
) -> Result<f64>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<NodeId>,
{
    let eval = |params: &ParamStore<f64>| -> Result<f64> {
        let mut g = Graph::new(params);
        let loss = build(&mut g)?;
        let v = g.value(loss).data()[0];
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Usage("non-finite loss during gradient check".into()))
        }
    };
    let floor = (1e-3 * scale).max(1e-8);
    let mut worst = 0.0f64;
    for i in 0..analytic.len() {
        let orig = params.value(param).data()[i];
        params.value_mut(param).data_mut()[i] = orig + h;
        let up = eval(params);
        params.value_mut(param).data_mut()[i] = orig - h;
        let down = eval(params);
        params.value_mut(param).data_mut()[i] = orig;
        let fd = (up? - down?) / (2.0 * h);
        let a = analytic.data()[i];
        worst = worst.max((a - fd).abs() / a.abs().max(floor));
    }
    Ok(worst)
}
