//! Central finite differences for verifying hand-derived gradients.

/// Default step for central differences.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Central-difference gradient of a scalar function at `point`.
pub fn central_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            probe[i] = point[i] + step;
            let up = f(&probe);
            probe[i] = point[i] - step;
            let down = f(&probe);
            probe[i] = point[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Derivative by Ridders' polynomial extrapolation of central differences
/// with shrinking steps starting at `step`. Returns the estimate with the
/// smallest error bound.
pub fn ridders_derivative<F: FnMut(f64) -> f64>(mut f: F, x: f64, step: f64) -> f64 {
    const SHRINK: f64 = 1.4;
    const TABLE: usize = 10;
    const SAFE: f64 = 2.0;
    let shrink2 = SHRINK * SHRINK;
    let mut a = [[0.0f64; TABLE]; TABLE];
    let mut h = step;
    a[0][0] = (f(x + h) - f(x - h)) / (2.0 * h);
    let mut best = a[0][0];
    let mut err = f64::INFINITY;
    for i in 1..TABLE {
        h /= SHRINK;
        a[0][i] = (f(x + h) - f(x - h)) / (2.0 * h);
        let mut fac = shrink2;
        for j in 1..=i {
            a[j][i] = (a[j - 1][i] * fac - a[j - 1][i - 1]) / (fac - 1.0);
            fac *= shrink2;
            let e = (a[j][i] - a[j - 1][i]).abs().max((a[j][i] - a[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = a[j][i];
            }
        }
        if (a[i][i] - a[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    best
}

/// [`ridders_derivative`] along every coordinate.
pub fn ridders_gradient<F>(f: F, point: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = point.to_vec();
    (0..point.len())
        .map(|i| {
            ridders_derivative(
                |t| {
                    probe[i] = t;
                    let v = f(&probe);
                    probe[i] = point[i];
                    v
                },
                point[i],
                step,
            )
        })
        .collect()
}

/// Central-difference derivative of a scalar function of one variable.
pub fn central_derivative<F: Fn(f64) -> f64>(f: F, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

/// Relative error `|a − b| / max(|a|, |b|, floor)`.
///
/// The floor keeps components whose true value is ~0 from dominating the
/// comparison with rounding noise.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Largest [`relative_error`] over two equally long gradients. The floor is
/// scaled by the larger gradient norm so near-zero components are compared
/// against the overall magnitude.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| relative_error(*a, *n, 1e-3 * scale))
        .fold(0.0, f64::max)
}
