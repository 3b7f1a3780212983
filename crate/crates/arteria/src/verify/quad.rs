//! Quadrature helpers for the oracle: adaptive Simpson along characteristics
//! and a cumulative rule for the windkessel Volterra term.

/// Adaptive Simpson on [a, b] to the given absolute tolerance.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 30)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        left + right + delta / 15.0
    } else {
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
}

/// Cumulative integral of uniformly sampled values: `out[j]` approximates
/// the integral from the first node to node j, using local quadratic
/// interpolation (globally third order).
pub fn cumulative_integral(values: &[f64], dt: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * dt * (values[0] + values[1]);
        return out;
    }
    for j in 0..n - 1 {
        let seg = if j == 0 {
            // first interval of the stencil (f0, f1, f2)
            dt * (5.0 * values[0] + 8.0 * values[1] - values[2]) / 12.0
        } else {
            // last interval of the stencil (f[j-1], f[j], f[j+1])
            dt * (-values[j - 1] + 8.0 * values[j] + 5.0 * values[j + 1]) / 12.0
        };
        out[j + 1] = out[j] + seg;
    }
    out
}
