//! Implicit Preissmann box scheme for `ψ_t + F(ψ) ψ_x = 0`.
//!
//! On each cell `(i, i+1)` the PDE is discretized at the θ-weighted cell-time
//! midpoint. Multiplied through by `Δt`, the cell equation reads
//!
//! ```text
//! ½(ψᵢⁿ⁺¹ + ψᵢ₊₁ⁿ⁺¹ − ψᵢⁿ − ψᵢ₊₁ⁿ) + (Δt/Δx) F(m) [θ(ψᵢ₊₁ⁿ⁺¹ − ψᵢⁿ⁺¹) + (1−θ)(ψᵢ₊₁ⁿ − ψᵢⁿ)] = 0
//! m = θ/2 (ψᵢⁿ⁺¹ + ψᵢ₊₁ⁿ⁺¹) + (1−θ)/2 (ψᵢⁿ + ψᵢ₊₁ⁿ)
//! ```
//!
//! The inflow node closes the system either through the integral controller
//! (`ψ₀ = −kI ζ + w_c` with a trapezoidal integrator) or a prescribed value.
//! Newton's method on `(ζ, ψ₀, …, ψ_N)` only ever sees a bidiagonal Jacobian
//! bordered by the `ζ` column, solved by one forward sweep.

use crate::error::{Error, Result};
use crate::flux::FluxModel;

/// Residual tolerance, relative to `max(1, ‖ψⁿ‖∞, |ζⁿ|)`.
pub const NEWTON_TOL: f64 = 1e-11;
pub const NEWTON_MAX_ITER: usize = 50;
const LINE_SEARCH_HALVINGS: usize = 30;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Inflow {
    /// `ψ₀ = −kI ζ + w_c`, `ζ̇ = ψ_N − y_r + w_o`.
    Controller {
        ki: f64,
        w_c: f64,
        y_r: f64,
        w_o: f64,
        zeta_old: f64,
    },
    /// `ψ₀ = value` at the new time level.
    Dirichlet(f64),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

pub(crate) struct BoxScheme<'a> {
    pub flux: &'a FluxModel,
    pub dx: f64,
    pub dt: f64,
    pub theta: f64,
    /// Time at the new level, for error reports.
    pub t_new: f64,
}

struct Residual {
    cells: Vec<f64>,
    inflow: f64,
    integrator: f64,
}

impl Residual {
    fn norm(&self) -> f64 {
        self.cells
            .iter()
            .fold(self.inflow.abs().max(self.integrator.abs()), |m, v| m.max(v.abs()))
    }
}

impl BoxScheme<'_> {
    fn check_state(&self, psi: &[f64]) -> Result<()> {
        for &v in psi {
            let f = self.flux.eval(v);
            if !(f > 0.0) || !self.flux.contains(v) {
                return Err(Error::Divergence {
                    t: self.t_new,
                    psi: v,
                    flux: f,
                });
            }
        }
        Ok(())
    }

    fn residual(&self, old: &[f64], psi: &[f64], zeta: f64, inflow: Inflow) -> Residual {
        let nu = self.dt / self.dx;
        let th = self.theta;
        let cells = (0..psi.len() - 1)
            .map(|i| {
                let m = 0.5 * th * (psi[i] + psi[i + 1]) + 0.5 * (1.0 - th) * (old[i] + old[i + 1]);
                let grad = th * (psi[i + 1] - psi[i]) + (1.0 - th) * (old[i + 1] - old[i]);
                0.5 * (psi[i] + psi[i + 1] - old[i] - old[i + 1]) + nu * self.flux.eval(m) * grad
            })
            .collect();
        let n = psi.len() - 1;
        let (inflow_res, integrator) = match inflow {
            Inflow::Controller {
                ki,
                w_c,
                y_r,
                w_o,
                zeta_old,
            } => (
                psi[0] + ki * zeta - w_c,
                zeta - zeta_old - 0.5 * self.dt * ((old[n] - y_r + w_o) + (psi[n] - y_r + w_o)),
            ),
            Inflow::Dirichlet(value) => (psi[0] - value, 0.0),
        };
        Residual {
            cells,
            inflow: inflow_res,
            integrator,
        }
    }

    /// Newton direction from the bordered bidiagonal Jacobian.
    fn direction(&self, old: &[f64], psi: &[f64], res: &Residual, inflow: Inflow) -> Result<(Vec<f64>, f64)> {
        let nu = self.dt / self.dx;
        let th = self.theta;
        let n = psi.len() - 1;
        // δψᵢ = a[i] + b[i] δζ
        let mut a = vec![0.0; n + 1];
        let mut b = vec![0.0; n + 1];
        let ki = match inflow {
            Inflow::Controller { ki, .. } => ki,
            Inflow::Dirichlet(_) => 0.0,
        };
        a[0] = -res.inflow;
        b[0] = -ki;
        for i in 0..n {
            let m = 0.5 * th * (psi[i] + psi[i + 1]) + 0.5 * (1.0 - th) * (old[i] + old[i + 1]);
            let grad = th * (psi[i + 1] - psi[i]) + (1.0 - th) * (old[i + 1] - old[i]);
            let f = self.flux.eval(m);
            let common = 0.5 + nu * self.flux.d1(m) * 0.5 * th * grad;
            let left = common - nu * f * th;
            let right = common + nu * f * th;
            if right.abs() < 1e-14 {
                return Err(Error::StepFailure {
                    t: self.t_new,
                    residual: res.norm(),
                    iterations: 0,
                });
            }
            a[i + 1] = (-res.cells[i] - left * a[i]) / right;
            b[i + 1] = -left * b[i] / right;
        }
        let dzeta = match inflow {
            Inflow::Controller { .. } => {
                let den = 1.0 - 0.5 * self.dt * b[n];
                if den.abs() < 1e-14 {
                    return Err(Error::StepFailure {
                        t: self.t_new,
                        residual: res.norm(),
                        iterations: 0,
                    });
                }
                (-res.integrator + 0.5 * self.dt * a[n]) / den
            }
            Inflow::Dirichlet(_) => 0.0,
        };
        let dpsi = a.iter().zip(&b).map(|(ai, bi)| ai + bi * dzeta).collect();
        Ok((dpsi, dzeta))
    }

    /// Solves one time level; the previous level is the initial guess.
    pub fn solve(&self, old: &[f64], inflow: Inflow) -> Result<(Vec<f64>, f64, NewtonStats)> {
        let mut psi = old.to_vec();
        let mut zeta = match inflow {
            Inflow::Controller { zeta_old, .. } => zeta_old,
            Inflow::Dirichlet(_) => 0.0,
        };
        let mut res = self.residual(old, &psi, zeta, inflow);
        let mut norm = res.norm();
        let scale = old.iter().fold(zeta.abs().max(1.0), |m, v| m.max(v.abs()));
        let tol = NEWTON_TOL * scale;
        let mut iterations = 0;
        // at least one correction: a tiny initial residual need not mean a converged step
        while iterations == 0 || norm > tol {
            if iterations == NEWTON_MAX_ITER {
                return Err(Error::StepFailure {
                    t: self.t_new,
                    residual: norm,
                    iterations,
                });
            }
            iterations += 1;
            let (dpsi, dzeta) = self.direction(old, &psi, &res, inflow)?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..LINE_SEARCH_HALVINGS {
                let trial: Vec<f64> = psi.iter().zip(&dpsi).map(|(p, d)| p + lambda * d).collect();
                self.check_state(&trial)?;
                let trial_zeta = zeta + lambda * dzeta;
                let trial_res = self.residual(old, &trial, trial_zeta, inflow);
                let trial_norm = trial_res.norm();
                if trial_norm < norm || trial_norm <= tol {
                    psi = trial;
                    zeta = trial_zeta;
                    res = trial_res;
                    norm = trial_norm;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                if norm <= tol {
                    break;
                }
                return Err(Error::StepFailure {
                    t: self.t_new,
                    residual: norm,
                    iterations,
                });
            }
        }
        Ok((psi, zeta, NewtonStats { iterations, residual: norm }))
    }
}

/// One box-scheme step of the open-loop transport equation with prescribed inflow.
pub fn advect_step(
    flux: &FluxModel,
    psi: &[f64],
    dx: f64,
    dt: f64,
    theta: f64,
    inflow: f64,
) -> Result<Vec<f64>> {
    let scheme = BoxScheme {
        flux,
        dx,
        dt,
        theta,
        t_new: f64::NAN,
    };
    scheme.solve(psi, Inflow::Dirichlet(inflow)).map(|(p, _, _)| p)
}
