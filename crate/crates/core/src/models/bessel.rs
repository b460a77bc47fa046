//! Bessel function `J0` used by the phase-averaged field likelihood.

/// Default truncation order of the `J0` power series.
pub const DEFAULT_ORDER: usize = 6;

/// `J0(a)` summed from its power series until terms drop below machine
/// precision. Accurate to ~1e-15 for `|a| < 8`.
pub fn j0_series(a: f64) -> f64 {
    let q = 0.25 * a * a;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut m = 1.0;
    while m < 200.0 {
        term *= -q / (m * m);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
        m += 1.0;
    }
    sum
}

/// Power series of `J0` truncated after the `a^order` term (`order` even).
///
/// For `order = 6` this is `1 - a^2/4 + a^4/64 - a^6/2304`.
pub fn j0_truncated(a: f64, order: usize) -> f64 {
    let q = 0.25 * a * a;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 1..=order / 2 {
        let m = m as f64;
        term *= -q / (m * m);
        sum += term;
    }
    sum
}

/// Sixth-order truncation in Horner form.
#[inline(always)]
pub fn j0_sixth(a: f64) -> f64 {
    let a2 = a * a;
    1.0 + a2 * (-1.0 / 4.0 + a2 * (1.0 / 64.0 - a2 / 2304.0))
}
