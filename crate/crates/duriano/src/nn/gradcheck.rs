//! Central finite-difference gradient checking. The numeric side only ever
//! calls the forward pass, so it stays independent of the backward
//! implementation it verifies.

use ndarray::Array2;

use super::layers::{ParamId, ParamSet};

/// Numeric gradient of `loss_fn` with respect to one parameter, by central
/// differences with step `eps`. `loss_fn` must be deterministic (fix seeds).
pub fn numeric_gradient(
    params: &mut ParamSet,
    id: ParamId,
    eps: f64,
    mut loss_fn: impl FnMut(&mut ParamSet) -> f64,
) -> Array2<f64> {
    let dim = params.value(id).dim();
    let mut grad = Array2::zeros(dim);
    for r in 0..dim.0 {
        for c in 0..dim.1 {
            let orig = params.value(id)[(r, c)];
            params.value_mut(id)[(r, c)] = orig + eps;
            let plus = loss_fn(params);
            params.value_mut(id)[(r, c)] = orig - eps;
            let minus = loss_fn(params);
            params.value_mut(id)[(r, c)] = orig;
            grad[(r, c)] = (plus - minus) / (2.0 * eps);
        }
    }
    grad
}

/// Worst-case relative disagreement between analytic and numeric
/// gradients: `|a - n| / max(|a| + |n|, 1e-6)` over all elements.
pub fn max_rel_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    assert_eq!(analytic.dim(), numeric.dim());
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}
