//! Spatial derivative fields `s = φ_x`, `p = φ_xx` and the discrete H² norm.

use crate::quad;

/// First derivative on a uniform grid: fourth-order central differences in the
/// interior and fourth-order one-sided stencils at the two nodes next to each end.
///
/// Grids with fewer than five nodes use second-order stencils.
pub fn derivative(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 3, "need at least three grid nodes");
    let mut d = vec![0.0; n];
    if n < 5 {
        let h2 = 2.0 * dx;
        d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / h2;
        d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / h2;
        for i in 1..n - 1 {
            d[i] = (f[i + 1] - f[i - 1]) / h2;
        }
        return d;
    }
    let h12 = 12.0 * dx;
    d[0] = boundary_slope(f, dx);
    d[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / h12;
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / h12;
    }
    let m = n - 1;
    d[m - 1] = (3.0 * f[m] + 10.0 * f[m - 1] - 18.0 * f[m - 2] + 6.0 * f[m - 3] - f[m - 4]) / h12;
    d[m] = (25.0 * f[m] - 48.0 * f[m - 1] + 36.0 * f[m - 2] - 16.0 * f[m - 3] + 3.0 * f[m - 4]) / h12;
    d
}

/// The one-sided stencil `derivative` uses at `x = 0`.
pub fn boundary_slope(f: &[f64], dx: f64) -> f64 {
    if f.len() < 5 {
        return (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx);
    }
    (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * dx)
}

/// `(s, p) = (φ_x, φ_xx)`, with `p` obtained by differencing `s`.
pub fn derivative_fields(phi: &[f64], dx: f64) -> (Vec<f64>, Vec<f64>) {
    let s = derivative(phi, dx);
    let p = derivative(&s, dx);
    (s, p)
}

/// `∫(φ² + φ_x² + φ_xx²) dx` with the grid quadrature.
pub fn h2_norm_sq(phi: &[f64], dx: f64) -> f64 {
    let (s, p) = derivative_fields(phi, dx);
    let w = quad::grid_weights(phi.len() - 1, dx);
    quad::integrate(&w, (0..phi.len()).map(|i| phi[i] * phi[i] + s[i] * s[i] + p[i] * p[i]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn constant_has_zero_derivatives() {
        let phi = vec![0.7; 21];
        let (s, p) = derivative_fields(&phi, 0.1);
        assert!(s.iter().chain(&p).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sine_derivative_is_fourth_order() {
        let length = 50.0;
        let err = |n: usize| {
            let dx = length / n as f64;
            let phi: Vec<f64> = (0..=n).map(|i| (2.0 * PI * i as f64 * dx / length).sin()).collect();
            let s = derivative(&phi, dx);
            (0..=n)
                .map(|i| (s[i] - 2.0 * PI / length * (2.0 * PI * i as f64 * dx / length).cos()).abs())
                .fold(0.0, f64::max)
        };
        let (e1, e2) = (err(50), err(100));
        let order = (e1 / e2).log2();
        assert!(order > 3.7, "order {order}");
        assert!(e2 < 1e-6);
    }

    #[test]
    fn polynomial_derivatives_are_exact() {
        let dx = 0.1;
        let f: Vec<f64> = (0..=12).map(|i| (i as f64 * dx).powi(3)).collect();
        let (s, p) = derivative_fields(&f, dx);
        for i in 0..=12 {
            let x = i as f64 * dx;
            assert!((s[i] - 3.0 * x * x).abs() < 1e-11);
            assert!((p[i] - 6.0 * x).abs() < 1e-9);
        }
    }

    #[test]
    fn short_grids_fall_back_to_second_order() {
        let f = [0.0, 1.0, 4.0];
        let d = derivative(&f, 1.0);
        assert_eq!(d, vec![0.0, 2.0, 4.0]);
    }
}
