//! Quadrature on uniform grids and adaptive Simpson integration.

/// Composite Simpson weights for `n` uniform intervals of width `h` (`n + 1` nodes).
///
/// Odd `n` falls back to the trapezoid rule. The weights always sum to `n * h`.
pub fn grid_weights(n: usize, h: f64) -> Vec<f64> {
    assert!(n >= 1, "need at least one interval");
    let mut w = vec![0.0; n + 1];
    if n.is_multiple_of(2) {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if i == 0 || i == n {
                h / 3.0
            } else if i % 2 == 1 {
                4.0 * h / 3.0
            } else {
                2.0 * h / 3.0
            };
        }
    } else {
        for (i, wi) in w.iter_mut().enumerate() {
            *wi = if i == 0 || i == n { 0.5 * h } else { h };
        }
    }
    w
}

/// Weighted sum of `values` with precomputed `weights`.
pub fn integrate(weights: &[f64], values: impl IntoIterator<Item = f64>) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance `rel_tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let scale = whole.abs().max(f64::MIN_POSITIVE);
    simpson_rec(&f, a, b, fa, fm, fb, whole, rel_tol * scale, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec<F: Fn(f64) -> f64>(
    f: &F,
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
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_length() {
        for n in [2, 3, 10, 11, 100] {
            let h = 0.37;
            let s: f64 = grid_weights(n, h).iter().sum();
            assert!((s - n as f64 * h).abs() < 1e-12, "n = {n}");
        }
    }

    #[test]
    fn simpson_is_exact_for_cubics() {
        let n = 10;
        let h = 0.2;
        let w = grid_weights(n, h);
        let got = integrate(&w, (0..=n).map(|i| (i as f64 * h).powi(3)));
        assert!((got - 2.0f64.powi(4) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_matches_closed_form() {
        let got = adaptive_simpson(|x| x.exp(), 0.0, 2.0, 1e-12);
        assert!((got - (2.0f64.exp() - 1.0)).abs() < 1e-10);
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-10), 0.0);
    }
}
