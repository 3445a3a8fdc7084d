//! Central finite differences, the reference every analytic gradient is checked against.
//!
//! Only forward evaluations of the closure are used, so the check is
//! independent of the backward rules it validates.

use crate::tensor::Tensor;

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for element `flat` of `inputs[which]`.
pub fn central_difference(
    mut f: impl FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    flat: usize,
    step: f64,
) -> f64 {
    let mut probe = inputs.to_vec();
    let x0 = inputs[which].data()[flat];
    probe[which].data_mut()[flat] = x0 + step;
    let plus = f(&probe);
    probe[which].data_mut()[flat] = x0 - step;
    let minus = f(&probe);
    (plus - minus) / (2.0 * step)
}

/// Full numerical gradient of `f` with respect to `inputs[which]`.
pub fn numerical_gradient(
    mut f: impl FnMut(&[Tensor]) -> f64,
    inputs: &[Tensor],
    which: usize,
    step: f64,
) -> Tensor {
    let mut out = Tensor::zeros(inputs[which].shape());
    for k in 0..inputs[which].len() {
        out.data_mut()[k] = central_difference(&mut f, inputs, which, k, step);
    }
    out
}

/// `|a - b| / max(|a|, |b|, floor)`; the floor keeps gradients that are
/// numerically zero from dividing by zero.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
