//! Admissible integral gains and Lyapunov weights for the closed loop.
//!
//! The quadratic functional
//!
//! ```text
//! V(φ, ξ) = ∫₀ᴸ [φ² e^{−μx} + q1 ξ φ e^{−μx/2}] dx + q2 ξ²
//! ```
//!
//! is a strict Lyapunov functional of the linearized loop when `q1 = 2 kI`,
//! `q2 = r kI e^{−μL/2}` and `(r / 2L) Π(μL) > kI`. The H¹/H² layers
//! `q3 V1(φ_x) + q4 V1(φ_xx)` extend it to the nonlinear loop.

use std::f64::consts::{PI, SQRT_2};

use crate::error::{Error, Result};

/// `μL` at which `Π` attains its maximum on `[0, 2]`.
pub const PI_ARGMAX: f64 = 2.0 - SQRT_2;

/// Ratio of the default `q3`, `q4` to `q2`.
pub const DEFAULT_LAYER_RATIO: f64 = 1e-3;

/// `Π(z) = √(z(2−z)) e^{−z/2}` on `[0, 2]`.
pub fn pi_fn(z: f64) -> Result<f64> {
    if !(0.0..=2.0).contains(&z) {
        return Err(Error::domain(format!("Π is defined on [0, 2], got {z}")));
    }
    Ok((z * (2.0 - z)).sqrt() * (-0.5 * z).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainBounds {
    /// Sharp stability bound of the linearized loop, `rπ / 2L`.
    pub linear_sharp: f64,
    /// Gain bound certified by the Lyapunov functional, `(r / 2L) Π(2 − √2)`.
    pub lyapunov_conservative: f64,
    pub r: f64,
    pub length: f64,
}

pub fn gain_bounds(r: f64, length: f64) -> Result<GainBounds> {
    if !(r.is_finite() && r > 0.0) {
        return Err(Error::domain(format!("speed r must be positive, got {r}")));
    }
    if !(length.is_finite() && length > 0.0) {
        return Err(Error::domain(format!("length L must be positive, got {length}")));
    }
    let scale = r / (2.0 * length);
    Ok(GainBounds {
        linear_sharp: scale * PI,
        lyapunov_conservative: scale * pi_fn(PI_ARGMAX)?,
        r,
        length,
    })
}

/// Weights of the Lyapunov functionals `V`, `V1` and `S`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    pub mu: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
    pub ki: f64,
}

impl LyapunovParams {
    /// Weights for an arbitrary `μ` without checking the gain condition.
    ///
    /// Used to evaluate functionals for gains outside the certified interval.
    pub fn from_gain(ki: f64, r: f64, length: f64, mu: f64) -> Self {
        let q2 = r * ki * (-0.5 * mu * length).exp();
        LyapunovParams {
            mu,
            q1: 2.0 * ki,
            q2,
            q3: DEFAULT_LAYER_RATIO * q2,
            q4: DEFAULT_LAYER_RATIO * q2,
            ki,
        }
    }

    pub fn with_layers(self, q3: f64, q4: f64) -> Self {
        LyapunovParams { q3, q4, ..self }
    }

    /// `(r / 2L) Π(μL) − kI`, positive exactly when the gain is certified for this `μ`.
    pub fn margin(&self, r: f64, length: f64) -> f64 {
        let z = (self.mu * length).clamp(0.0, 2.0);
        r / (2.0 * length) * pi_fn(z).unwrap_or(0.0) - self.ki
    }
}

/// Picks `μ = (2 − √2)/L` and the Lemma-type weights for a gain below the certified bound.
pub fn select_params(ki: f64, r: f64, length: f64, layers: Option<(f64, f64)>) -> Result<LyapunovParams> {
    let bounds = gain_bounds(r, length)?;
    if !(ki.is_finite() && ki > 0.0) {
        return Err(Error::domain(format!("integral gain must be positive, got {ki}")));
    }
    if ki >= bounds.lyapunov_conservative {
        return Err(Error::GainTooLarge {
            ki,
            conservative: bounds.lyapunov_conservative,
            sharp: bounds.linear_sharp,
        });
    }
    let params = LyapunovParams::from_gain(ki, r, length, PI_ARGMAX / length);
    match layers {
        Some((q3, q4)) if q3 > 0.0 && q4 > 0.0 => Ok(params.with_layers(q3, q4)),
        Some((q3, q4)) => Err(Error::domain(format!("q3, q4 must be positive, got ({q3}, {q4})"))),
        None => Ok(params),
    }
}

/// Positive-definiteness certificate of
/// `P = [[1, √L q1/2], [√L q1/2, q2]]`, for which `V = ∫ wᵀ P w dx` with
/// `w = (φ e^{−μx/2}, ξ/√L)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PCertificate {
    pub det: f64,
    /// `(r kI / 2) e^{−μL/2}`.
    pub det_lower_bound: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Sandwich constant `max(λmax, 1/λmin)`.
    pub sandwich: f64,
    /// `det ≥ det_lower_bound` and `λmin > 0`.
    pub holds: bool,
}

pub fn p_matrix_certificate(params: &LyapunovParams, r: f64, length: f64) -> PCertificate {
    let off = 0.5 * length.sqrt() * params.q1;
    let (a, d) = (1.0, params.q2);
    let det = a * d - off * off;
    let mean = 0.5 * (a + d);
    let spread = (0.25 * (a - d) * (a - d) + off * off).sqrt();
    let lambda_max = mean + spread;
    // det / λmax avoids cancellation in mean − spread when q2 is tiny
    let lambda_min = det / lambda_max;
    let det_lower_bound = 0.5 * r * params.ki * (-0.5 * params.mu * length).exp();
    PCertificate {
        det,
        det_lower_bound,
        lambda_min,
        lambda_max,
        sandwich: lambda_max.max(1.0 / lambda_min),
        holds: det >= det_lower_bound && lambda_min > 0.0,
    }
}
