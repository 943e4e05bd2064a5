//! Quadrature rules used for normalization and moment checks.

use std::f64::consts::PI;

/// Interval count used for the fine composite rules over [0, π].
pub const FINE_INTERVALS: usize = 10_000;

/// Composite Simpson rule on `[a, b]` with `intervals` subintervals
/// (rounded up to the next even count).
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = (intervals.max(2) + 1) & !1;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * i as f64);
    }
    acc * h / 3.0
}

/// Uniform midpoints `(i + ½)·π/n` over [0, π].
pub fn midpoints(n: usize) -> Vec<f64> {
    let step = PI / n as f64;
    (0..n).map(|i| (i as f64 + 0.5) * step).collect()
}
