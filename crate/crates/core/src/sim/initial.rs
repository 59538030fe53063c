//! Initial profiles and the C⁰/C¹ compatibility correction.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::fields::boundary_slope;
use super::{LoopConfig, SimState};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileShape {
    /// `a sin(2πx/L)`.
    Sine,
    /// `a sin⁶` bump supported on `[L/4, 3L/4]`; compatible to every order.
    Bump,
    /// Four random sine modes with `1/k²` decay, scaled to peak `a`.
    Random { seed: u64 },
}

/// `ψ_ref + a · shape(x)` sampled on the grid, where `ψ_ref` is the equilibrium
/// (or `w_c` for `kI = 0`).
pub fn initial_profile(config: &LoopConfig, shape: ProfileShape, amplitude: f64) -> Vec<f64> {
    let (psi_ref, _) = config.reference();
    let length = config.length;
    let grid = config.grid();
    let perturbation: Vec<f64> = match shape {
        ProfileShape::Sine => grid.iter().map(|x| (2.0 * PI * x / length).sin()).collect(),
        ProfileShape::Bump => grid
            .iter()
            .map(|x| {
                let u = (x - 0.25 * length) / (0.5 * length);
                if (0.0..=1.0).contains(&u) {
                    (PI * u).sin().powi(6)
                } else {
                    0.0
                }
            })
            .collect(),
        ProfileShape::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes: Vec<(f64, f64)> = (1..=4)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..2.0 * PI)))
                .collect();
            let raw: Vec<f64> = grid
                .iter()
                .map(|x| {
                    modes
                        .iter()
                        .enumerate()
                        .map(|(k, (c, phase))| {
                            let k = (k + 1) as f64;
                            c / (k * k) * (2.0 * PI * k * x / length + phase).sin()
                        })
                        .sum()
                })
                .collect();
            let peak = raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            raw.into_iter().map(|v| if peak > 0.0 { v / peak } else { 0.0 }).collect()
        }
    };
    perturbation.into_iter().map(|p| psi_ref + amplitude * p).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibleInitial {
    pub state: SimState,
    /// Largest absolute change applied to the profile.
    pub max_correction: f64,
}

/// Sets `ζ₀` from the C⁰ condition and bends the profile inside `[0, L/10]` so
/// that its one-sided slope at `x = 0` satisfies `F̃(ψ₀(0)) ψ₀'(0) = kI(ψ₀(L) − y_r + w_o)`.
///
/// The correction is `c · x (1 − x/ℓ)³`, which vanishes at `x = 0` and joins zero
/// with two continuous derivatives at `x = ℓ`.
pub fn make_compatible_initial(profile: &[f64], config: &LoopConfig) -> Result<CompatibleInitial> {
    config.validate()?;
    let n = config.n;
    if profile.len() != n + 1 {
        return Err(Error::config(format!(
            "profile has {} samples, grid has {}",
            profile.len(),
            n + 1
        )));
    }
    let zeta0 = if config.ki == 0.0 {
        if profile[0] != config.w_c {
            return Err(Error::config(
                "with kI = 0 the inflow value must equal w_c to be compatible",
            ));
        }
        0.0
    } else {
        (config.w_c - profile[0]) / config.ki
    };
    let dx = config.dx();
    let f0 = config.flux.eval(profile[0]);
    if !(f0 > 0.0) {
        return Err(Error::config(format!("flux not positive at the inflow value {}", profile[0])));
    }
    let target = config.ki * (profile[n] - config.y_r + config.w_o) / f0;
    let current = boundary_slope(profile, dx);

    // keep at least four cells in the layer for the one-sided stencil
    let layer = (0.1 * config.length).max(4.0 * dx).min(config.length);
    let bump: Vec<f64> = config
        .grid()
        .iter()
        .map(|&x| if x < layer { x * (1.0 - x / layer).powi(3) } else { 0.0 })
        .collect();
    let bump_slope = boundary_slope(&bump, dx);
    let gain = (target - current) / bump_slope;
    let psi: Vec<f64> = profile.iter().zip(&bump).map(|(p, b)| p + gain * b).collect();
    let max_correction = bump.iter().fold(0.0f64, |m, b| m.max((gain * b).abs()));
    Ok(CompatibleInitial {
        state: SimState {
            t: 0.0,
            psi,
            zeta: zeta0,
        },
        max_correction,
    })
}
