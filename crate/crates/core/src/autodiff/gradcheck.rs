//! Central finite differences, used as an independent oracle for gradients.

use super::Array;
use crate::scalar::Scalar;

/// Numerical gradient of `f` at `x` by central differences with step `eps`.
pub fn numeric_gradient<T: Scalar>(x: &Array<T>, eps: f64, mut f: impl FnMut(&Array<T>) -> f64) -> Array<T> {
    let mut probe = x.clone();
    let mut out = Array::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + T::from_f64c(eps);
        let fp = f(&probe);
        probe.data_mut()[i] = orig - T::from_f64c(eps);
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = T::from_f64c((fp - fm) / (2.0 * eps));
    }
    out
}

/// Max relative error `|a - n| / max(|a|, |n|, floor)` over elements.
pub fn max_rel_error<T: Scalar>(analytic: &Array<T>, numeric: &Array<T>, floor: f64) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| {
            let (a, n) = (a.to_f64c(), n.to_f64c());
            (a - n).abs() / a.abs().max(n.abs()).max(floor)
        })
        .fold(0.0, f64::max)
}
