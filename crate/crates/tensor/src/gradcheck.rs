//! Central finite differences for checking analytic gradients.

use crate::var::Array;

/// `(f(x + h e_i), f(x - h e_i))` for flat index `i` of `x`.
pub fn probe(f: &mut dyn FnMut(&Array) -> f64, x: &Array, index: usize, step: f64) -> (f64, f64) {
    let mut probe = x.as_standard_layout().into_owned();
    let base = probe.as_slice().unwrap()[index];
    probe.as_slice_mut().unwrap()[index] = base + step;
    let plus = f(&probe);
    probe.as_slice_mut().unwrap()[index] = base - step;
    let minus = f(&probe);
    (plus, minus)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for flat index `i` of `x`.
pub fn central_difference(f: &mut dyn FnMut(&Array) -> f64, x: &Array, index: usize, step: f64) -> f64 {
    let (plus, minus) = probe(f, x, index, step);
    (plus - minus) / (2.0 * step)
}

/// Bound on how far a kink inside `[x - h, x + h]` can move the central
/// difference: `|f(x + h) - 2 f(x) + f(x - h)| / 2h`. For smooth `f` this is
/// `h |f''| / 2`.
pub fn kink_bound(plus: f64, center: f64, minus: f64, step: f64) -> f64 {
    (plus - 2.0 * center + minus).abs() / (2.0 * step)
}

/// Relative error with an absolute floor so that tiny gradients near zero
/// are compared absolutely.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}
