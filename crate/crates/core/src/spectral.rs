//! Poles of the linearized closed loop.
//!
//! With `μ = sL/r` and `α = kI L/r` the poles solve `α + μ e^μ = 0`. Writing
//! `μ = σ + iη` with `sin η ≠ 0` gives `σ = −η cot η` and `α = H(η)` where
//!
//! ```text
//! H(η) = (η / sin η) exp(−η cot η),
//! ```
//!
//! which increases monotonically on every `(2kπ, (2k+1)π)`. Each branch therefore
//! holds exactly one root pair, found by bisection on `log H` and polished by
//! Newton's method. Real roots solve `−σ e^σ = α` and exist only for `α ≤ e⁻¹`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const DEFAULT_BRANCHES: usize = 8;

const BISECTION_TOL: f64 = 1e-13;
const NEWTON_MAX_ITER: usize = 100;
const MARGINAL_BAND: f64 = 1e-12;

/// Dimensionless gain `α = kI L / r`.
pub fn alpha_char(ki: f64, r: f64, length: f64) -> Result<f64> {
    if !(r > 0.0 && length > 0.0 && ki > 0.0) || !(r.is_finite() && length.is_finite() && ki.is_finite()) {
        return Err(Error::domain(format!(
            "alpha needs positive kI, r, L (got kI={ki}, r={r}, L={length})"
        )));
    }
    Ok(ki * length / r)
}

/// `H(η) = (η / sin η) exp(−η cos η / sin η)` for `η > 0` off the multiples of π.
pub fn h_fn(eta: f64) -> Result<f64> {
    log_h(eta).map(f64::exp)
}

fn log_h(eta: f64) -> Result<f64> {
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::domain(format!("H is evaluated for η > 0, got {eta}")));
    }
    if eta < 1e-4 {
        // η/sin η = 1 + η²/6 + 7η⁴/360, η cot η = 1 − η²/3 − η⁴/45
        let e2 = eta * eta;
        let ratio = 1.0 + e2 / 6.0 + 7.0 * e2 * e2 / 360.0;
        let cot_term = 1.0 - e2 / 3.0 - e2 * e2 / 45.0;
        return Ok(ratio.ln() - cot_term);
    }
    let k = (eta / PI).round();
    if (eta - k * PI).abs() < 1e-12 {
        return Err(Error::domain(format!("H is singular at η = {eta} (multiple of π)")));
    }
    let (s, c) = eta.sin_cos();
    if s < 0.0 {
        return Err(Error::domain(format!("H is negative at η = {eta}; only sin η > 0 yields α > 0")));
    }
    Ok((eta / s).ln() - eta * c / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoleKind {
    /// Real root of `−σ e^σ = α`.
    Real,
    /// Complex root from branch `(2kπ, (2k+1)π)`; `upper` is the `η > 0` member of the pair.
    Complex { upper: bool },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pole {
    pub branch: usize,
    pub mu: Complex64,
    pub kind: PoleKind,
    /// `|α + μ e^μ|` after polishing.
    pub residual: f64,
    pub converged: bool,
}

impl Pole {
    pub fn is_conjugate_pair(&self) -> bool {
        matches!(self.kind, PoleKind::Complex { .. })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoleReport {
    pub alpha_char: f64,
    pub poles: Vec<Pole>,
    pub rightmost_real: f64,
    pub stable: bool,
}

impl PoleReport {
    /// Poles of the dimensional loop, `s = μ r / L`.
    pub fn dimensional(&self, r: f64, length: f64) -> Vec<Complex64> {
        self.poles.iter().map(|p| p.mu * (r / length)).collect()
    }
}

fn characteristic(alpha: f64, mu: Complex64) -> Complex64 {
    mu * mu.exp() + alpha
}

/// Newton polish on `g(μ) = α + μ e^μ`, `g'(μ) = e^μ (1 + μ)`.
fn polish(alpha: f64, start: Complex64) -> (Complex64, bool) {
    let mut mu = start;
    let mut best = (mu, characteristic(alpha, mu).norm());
    for _ in 0..NEWTON_MAX_ITER {
        let g = characteristic(alpha, mu);
        let gp = mu.exp() * (mu + 1.0);
        if gp.norm() == 0.0 {
            break;
        }
        let step = g / gp;
        mu -= step;
        let res = characteristic(alpha, mu).norm();
        if res < best.1 {
            best = (mu, res);
        }
        if step.norm() <= 1e-15 * (1.0 + mu.norm()) {
            return (best.0, true);
        }
    }
    let scale = 1.0 + (best.0 * best.0.exp()).norm();
    (best.0, best.1 <= 1e-10 * scale)
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    // f(lo) < 0 < f(hi)
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Root `η` of `H(η) = α` on `(2kπ, (2k+1)π)`, if any.
fn branch_eta(alpha: f64, k: usize) -> Option<f64> {
    let target = alpha.ln();
    let lo = 2.0 * k as f64 * PI;
    let hi = lo + PI;
    let g = |eta: f64| log_h(eta).map(|v| v - target).unwrap_or(f64::NAN);
    // H(0⁺) = e⁻¹ on the principal branch, H(2kπ⁺) = 0 otherwise
    let a = if k == 0 { 1e-9 } else { lo + 1e-12 * (1.0 + lo) };
    if !(g(a) < 0.0) {
        return None;
    }
    let mut b = hi - 1e-12 * (1.0 + hi);
    while !(g(b) > 0.0) {
        b = 0.5 * (b + hi);
        if hi - b < 1e-15 * hi {
            return None;
        }
    }
    Some(bisect(g, a, b))
}

fn real_roots(alpha: f64) -> Vec<f64> {
    let inv_e = (-1.0f64).exp();
    if alpha > inv_e * (1.0 + 1e-14) {
        return Vec::new();
    }
    if (alpha - inv_e).abs() <= 1e-14 * inv_e {
        return vec![-1.0, -1.0];
    }
    // φ(σ) = −σ e^σ − α rises on (−∞, −1) and falls on (−1, 0)
    let phi = |s: f64| -s * s.exp() - alpha;
    let right = bisect(|s| -phi(s), -1.0, 0.0);
    let mut left_lo = -2.0;
    while phi(left_lo) > 0.0 {
        left_lo *= 2.0;
    }
    let left = bisect(phi, left_lo, -1.0);
    vec![right, left]
}

/// Locates the poles on the first `n_branches` branches plus the real roots.
pub fn find_poles(alpha: f64, n_branches: usize) -> Result<PoleReport> {
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::domain(format!("alpha must be positive, got {alpha}")));
    }
    if n_branches == 0 {
        return Err(Error::domain("need at least one branch"));
    }
    let mut poles = Vec::new();
    let reals = real_roots(alpha);
    let double = reals.len() == 2 && reals[0] == reals[1];
    for sigma in reals {
        let (mu, converged) = if double {
            (Complex64::new(sigma, 0.0), true)
        } else {
            let (mu, ok) = polish(alpha, Complex64::new(sigma, 0.0));
            // near the fold Newton may hop to the twin root; keep the bracketed one then
            if (mu.re + 1.0).signum() == (sigma + 1.0).signum() {
                (Complex64::new(mu.re, 0.0), ok)
            } else {
                let m = Complex64::new(sigma, 0.0);
                (m, characteristic(alpha, m).norm() <= 1e-10)
            }
        };
        poles.push(Pole {
            branch: 0,
            mu,
            kind: PoleKind::Real,
            residual: characteristic(alpha, mu).norm(),
            converged,
        });
    }
    for k in 0..n_branches {
        let Some(eta) = branch_eta(alpha, k) else { continue };
        let sigma = -eta * eta.cos() / eta.sin();
        let (mu, converged) = polish(alpha, Complex64::new(sigma, eta));
        let residual = characteristic(alpha, mu).norm();
        for (upper, m) in [(true, mu), (false, mu.conj())] {
            poles.push(Pole {
                branch: k,
                mu: m,
                kind: PoleKind::Complex { upper },
                residual,
                converged,
            });
        }
    }
    let rightmost_real = poles.iter().map(|p| p.mu.re).fold(f64::NEG_INFINITY, f64::max);
    Ok(PoleReport {
        alpha_char: alpha,
        poles,
        rightmost_real,
        stable: rightmost_real < 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stable,
    Marginal,
    Unstable,
}

/// Classification of the linearized loop by `α` against `(0, π/2)`.
pub fn stability_verdict(ki: f64, r: f64, length: f64) -> Result<Verdict> {
    let alpha = alpha_char(ki, r, length)?;
    Ok(verdict_for_alpha(alpha))
}

pub fn verdict_for_alpha(alpha: f64) -> Verdict {
    if (alpha - FRAC_PI_2).abs() <= MARGINAL_BAND {
        Verdict::Marginal
    } else if alpha > 0.0 && alpha < FRAC_PI_2 {
        Verdict::Stable
    } else {
        Verdict::Unstable
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_char_examples() {
        assert!((alpha_char(0.05, 3.16, 50.0).unwrap() - 0.791_139_240_5).abs() < 1e-9);
        let ki = 3.16 * PI / 100.0;
        assert!((alpha_char(ki, 3.16, 50.0).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(alpha_char(1e-300, 1.0, 1.0).unwrap() < 1e-299);
        assert!(alpha_char(0.0, 1.0, 1.0).is_err());
        assert!(alpha_char(1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn h_fn_limits() {
        assert!((h_fn(1e-6).unwrap() - (-1.0f64).exp()).abs() < 1e-10);
        assert!((h_fn(FRAC_PI_2).unwrap() - FRAC_PI_2).abs() < 1e-14);
        let eta = 2.0 * PI + FRAC_PI_2;
        assert!((h_fn(eta).unwrap() - eta).abs() < 1e-12);
        assert!(h_fn(PI).is_err());
        assert!(h_fn(2.0 * PI).is_err());
        assert!(h_fn(0.0).is_err());
    }

    #[test]
    fn series_matches_formula_at_switch() {
        let eta: f64 = 1e-4;
        let exact = (eta / eta.sin()) * (-eta * eta.cos() / eta.sin()).exp();
        let series = h_fn(eta * (1.0 - 1e-12)).unwrap();
        assert!((exact - series).abs() < 1e-12);
    }

    #[test]
    fn pole_at_marginal_gain() {
        let rep = find_poles(FRAC_PI_2, 4).unwrap();
        let target = Complex64::new(0.0, FRAC_PI_2);
        assert!(rep.poles.iter().any(|p| (p.mu - target).norm() < 1e-10));
        assert!(rep.rightmost_real.abs() < 1e-10);
    }

    #[test]
    fn double_real_root_at_inverse_e() {
        let rep = find_poles((-1.0f64).exp(), 4).unwrap();
        let reals: Vec<_> = rep.poles.iter().filter(|p| p.kind == PoleKind::Real).collect();
        assert_eq!(reals.len(), 2);
        for p in reals {
            assert!((p.mu.re + 1.0).abs() < 1e-7);
            assert!(p.residual < 1e-12);
        }
    }

    #[test]
    fn principal_real_root_small_alpha() {
        // independent bisection oracle on [−0.5, 0] for σ e^σ = −0.1
        let (mut lo, mut hi) = (-0.5f64, 0.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid * mid.exp() + 0.1 < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rep = find_poles(0.1, 4).unwrap();
        assert!((rep.rightmost_real - lo).abs() < 1e-12);
        assert!((rep.rightmost_real + 0.111_83).abs() < 1e-5);
        assert!(rep.stable);
    }

    #[test]
    fn residuals_and_conjugates() {
        for alpha in [0.05, 0.3, 0.5, 1.0, 1.4, 1.7, 2.5] {
            let rep = find_poles(alpha, 8).unwrap();
            for p in &rep.poles {
                let scale = 1.0 + (p.mu * p.mu.exp()).norm();
                assert!(p.residual <= 1e-10 * scale, "α={alpha} μ={}", p.mu);
                assert!(p.converged);
                if p.is_conjugate_pair() {
                    assert!(rep.poles.iter().any(|q| (q.mu - p.mu.conj()).norm() < 1e-14));
                }
            }
        }
    }

    #[test]
    fn verdict_examples() {
        assert_eq!(stability_verdict(0.05, 3.16, 50.0).unwrap(), Verdict::Stable);
        assert_eq!(verdict_for_alpha(1.7), Verdict::Unstable);
        assert!(find_poles(1.7, 8).unwrap().rightmost_real > 0.0);
        assert_eq!(stability_verdict(3.16 * PI / 100.0, 3.16, 50.0).unwrap(), Verdict::Marginal);
    }

    #[test]
    fn rejects_nonpositive_alpha() {
        assert!(find_poles(0.0, 8).is_err());
        assert!(find_poles(-1.0, 8).is_err());
    }
}
