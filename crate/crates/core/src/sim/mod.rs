//! Closed-loop simulation of
//!
//! ```text
//! ψ_t + F(ψ) ψ_x = 0,   ζ̇ = ψ(L, t) − y_r + w_o,   ψ(0, t) = −kI ζ + w_c
//! ```
//!
//! with the implicit box scheme, plus the shifted-coordinate fields used by the
//! Lyapunov evaluators.

mod fields;
mod initial;
mod scheme;

pub use fields::{boundary_slope, derivative, derivative_fields, h2_norm_sq};
pub use initial::{initial_profile, make_compatible_initial, CompatibleInitial, ProfileShape};
pub use scheme::{advect_step, NewtonStats, NEWTON_MAX_ITER, NEWTON_TOL};

use crate::error::{Error, Result};
use crate::flux::{FluxModel, DEFAULT_HALF_WIDTH};
use scheme::{BoxScheme, Inflow};

/// Maximum number of Δt halvings after a failed Newton solve.
pub const MAX_HALVINGS: u32 = 10;

#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub length: f64,
    /// Unshifted flux `F̃`.
    pub flux: FluxModel,
    pub ki: f64,
    pub y_r: f64,
    pub w_o: f64,
    pub w_c: f64,
    /// Number of space intervals.
    pub n: usize,
    pub theta: f64,
    /// `Δt / Δx`.
    pub dt_over_dx: f64,
}

impl LoopConfig {
    /// The nonlinear benchmark plant: `L = 50`, `N = 100`, `θ = 0.55`, `Δt/Δx = 0.5`,
    /// `F̃(ψ) = ψ² + 3`, `kI = 0.05`, `y_r = 0.5`, `w_o = 0.1`, `w_c = 0.05`.
    pub fn benchmark() -> Self {
        let mut cfg = LoopConfig {
            length: 50.0,
            flux: FluxModel::quadratic(3.0).expect("positive quadratic flux"),
            ki: 0.05,
            y_r: 0.5,
            w_o: 0.1,
            w_c: 0.05,
            n: 100,
            theta: 0.55,
            dt_over_dx: 0.5,
        };
        cfg.center_flux_interval().expect("benchmark flux is positive everywhere");
        cfg
    }

    /// Linear plant with constant speed `r` and no disturbances.
    pub fn linear(r: f64, length: f64, ki: f64, n: usize, theta: f64) -> Result<Self> {
        let cfg = LoopConfig {
            length,
            flux: FluxModel::linear(r)?,
            ki,
            y_r: 0.0,
            w_o: 0.0,
            w_c: 0.0,
            n,
            theta,
            dt_over_dx: 0.5,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Moves the flux working interval to `[ψ_ref − 5, ψ_ref + 5]`.
    pub fn center_flux_interval(&mut self) -> Result<()> {
        let (psi_ref, _) = self.reference();
        self.flux = self
            .flux
            .with_interval(psi_ref - DEFAULT_HALF_WIDTH, psi_ref + DEFAULT_HALF_WIDTH)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.length, self.ki, self.y_r, self.w_o, self.w_c, self.theta, self.dt_over_dx];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("loop parameters must be finite"));
        }
        if !(self.length > 0.0) {
            return Err(Error::config(format!("L must be positive, got {}", self.length)));
        }
        if self.n < 2 {
            return Err(Error::config(format!("N must be at least 2, got {}", self.n)));
        }
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::config(format!("theta must lie in [0.5, 1], got {}", self.theta)));
        }
        if self.ki < 0.0 {
            return Err(Error::config(format!("kI must be nonnegative, got {}", self.ki)));
        }
        if !(self.dt_over_dx > 0.0) {
            return Err(Error::config(format!("dt/dx must be positive, got {}", self.dt_over_dx)));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn dt(&self) -> f64 {
        self.dt_over_dx * self.dx()
    }

    pub fn grid(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..=self.n).map(|i| i as f64 * dx).collect()
    }

    /// Reference state for deviations: the equilibrium when `kI > 0`; for the
    /// uncontrolled plant the inflow value `w_c` with no integrator reference.
    pub fn reference(&self) -> (f64, Option<f64>) {
        match equilibrium(self) {
            Ok(eq) => (eq.psi_inf, Some(eq.zeta_inf)),
            Err(_) => (self.w_c, None),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Equilibrium {
    pub psi_inf: f64,
    pub zeta_inf: f64,
    /// `F̃(ψ∞)`, the speed of the linearized loop.
    pub r_eff: f64,
}

pub fn equilibrium(config: &LoopConfig) -> Result<Equilibrium> {
    if config.ki == 0.0 {
        return Err(Error::config("the loop has no equilibrium integrator state for kI = 0"));
    }
    let psi_inf = config.y_r - config.w_o;
    let zeta_inf = (config.w_o + config.w_c - config.y_r) / config.ki;
    let r_eff = config.flux.eval(psi_inf);
    if !(r_eff > 0.0) {
        return Err(Error::config(format!("flux is not positive at equilibrium: F({psi_inf}) = {r_eff}")));
    }
    Ok(Equilibrium {
        psi_inf,
        zeta_inf,
        r_eff,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub t: f64,
    pub psi: Vec<f64>,
    pub zeta: f64,
}

impl SimState {
    pub fn at_equilibrium(config: &LoopConfig) -> Result<Self> {
        let eq = equilibrium(config)?;
        Ok(SimState {
            t: 0.0,
            psi: vec![eq.psi_inf; config.n + 1],
            zeta: eq.zeta_inf,
        })
    }
}

/// `‖(ψ − ψ_ref, ζ − ζ_ref)‖_X` with the discrete H² norm.
pub fn x_norm(config: &LoopConfig, psi: &[f64], zeta: f64) -> f64 {
    let (psi_ref, zeta_ref) = config.reference();
    let phi: Vec<f64> = psi.iter().map(|v| v - psi_ref).collect();
    let xi = zeta_ref.map_or(0.0, |z| zeta - z);
    (h2_norm_sq(&phi, config.dx()) + xi * xi).sqrt()
}

fn solve_level(config: &LoopConfig, psi: &[f64], zeta: f64, t_new: f64, dt: f64) -> Result<(Vec<f64>, f64)> {
    let scheme = BoxScheme {
        flux: &config.flux,
        dx: config.dx(),
        dt,
        theta: config.theta,
        t_new,
    };
    let inflow = Inflow::Controller {
        ki: config.ki,
        w_c: config.w_c,
        y_r: config.y_r,
        w_o: config.w_o,
        zeta_old: zeta,
    };
    scheme.solve(psi, inflow).map(|(p, z, _)| (p, z))
}

/// Advances `dt`, splitting it in halves on Newton failure (at most `MAX_HALVINGS` deep).
fn advance(config: &LoopConfig, psi: &[f64], zeta: f64, t: f64, dt: f64, depth: u32) -> Result<(Vec<f64>, f64)> {
    match solve_level(config, psi, zeta, t + dt, dt) {
        Err(Error::StepFailure { .. }) if depth < MAX_HALVINGS => {
            let half = 0.5 * dt;
            let (p, z) = advance(config, psi, zeta, t, half, depth + 1)?;
            advance(config, &p, z, t + half, half, depth + 1)
        }
        other => other,
    }
}

/// One time step `Δt = (Δt/Δx) Δx` of the closed loop.
pub fn preissmann_step(state: &SimState, config: &LoopConfig) -> Result<SimState> {
    if state.psi.len() != config.n + 1 {
        return Err(Error::config(format!(
            "state has {} samples, grid has {}",
            state.psi.len(),
            config.n + 1
        )));
    }
    let dt = config.dt();
    let (psi, zeta) = advance(config, &state.psi, state.zeta, state.t, dt, 0)?;
    Ok(SimState {
        t: state.t + dt,
        psi,
        zeta,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub psi: Vec<f64>,
    pub zeta: f64,
}

/// Time series of a closed-loop run. Scalar series hold one entry per step;
/// profiles are kept every `stride` steps and at the final step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub times: Vec<f64>,
    pub zeta: Vec<f64>,
    /// Control `u = −kI ζ + w_c = ψ(0, t)`.
    pub u: Vec<f64>,
    /// Measured output `y = ψ(L, t) + w_o`.
    pub y: Vec<f64>,
    pub xnorm: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub dt: f64,
    pub dx: f64,
}

impl Trace {
    fn push(&mut self, config: &LoopConfig, state: &SimState) {
        self.times.push(state.t);
        self.zeta.push(state.zeta);
        self.u.push(-config.ki * state.zeta + config.w_c);
        self.y.push(state.psi[config.n] + config.w_o);
        self.xnorm.push(x_norm(config, &state.psi, state.zeta));
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }

    /// Checks the output and input reconstruction identities.
    pub fn reconstruction_holds(&self, config: &LoopConfig) -> bool {
        let by_step: Vec<_> = self.snapshots.iter().map(|s| (s.step, &s.psi)).collect();
        let outputs = by_step
            .iter()
            .all(|(n, psi)| self.y[*n] == psi[config.n] + config.w_o);
        let inputs = self
            .zeta
            .iter()
            .zip(&self.u)
            .all(|(z, u)| *u == -config.ki * z + config.w_c);
        outputs && inputs
    }
}

/// Runs the closed loop from `initial` until `t ≥ initial.t + horizon`.
pub fn simulate(config: &LoopConfig, initial: &SimState, horizon: f64, stride: usize) -> Result<Trace> {
    config.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::config(format!("horizon must be positive, got {horizon}")));
    }
    if initial.psi.len() != config.n + 1 {
        return Err(Error::config("initial profile does not match the grid"));
    }
    let stride = stride.max(1);
    let dt = config.dt();
    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let mut trace = Trace {
        times: Vec::with_capacity(steps + 1),
        zeta: Vec::with_capacity(steps + 1),
        u: Vec::with_capacity(steps + 1),
        y: Vec::with_capacity(steps + 1),
        xnorm: Vec::with_capacity(steps + 1),
        snapshots: Vec::new(),
        dt,
        dx: config.dx(),
    };
    let mut state = initial.clone();
    trace.push(config, &state);
    trace.snapshots.push(Snapshot {
        step: 0,
        t: state.t,
        psi: state.psi.clone(),
        zeta: state.zeta,
    });
    for step in 1..=steps {
        let t0 = initial.t;
        let (psi, zeta) = advance(config, &state.psi, state.zeta, state.t, dt, 0)?;
        state = SimState {
            // times are regenerated from the step count to avoid drift
            t: t0 + step as f64 * dt,
            psi,
            zeta,
        };
        trace.push(config, &state);
        if step % stride == 0 || step == steps {
            trace.snapshots.push(Snapshot {
                step,
                t: state.t,
                psi: state.psi.clone(),
                zeta: state.zeta,
            });
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_equilibrium() {
        let cfg = LoopConfig::benchmark();
        let eq = equilibrium(&cfg).unwrap();
        assert!((eq.psi_inf - 0.4).abs() < 1e-15);
        assert!((eq.zeta_inf + 7.0).abs() < 1e-12);
        assert!((eq.r_eff - 3.16).abs() < 1e-14);
    }

    #[test]
    fn trivial_equilibria() {
        let mut cfg = LoopConfig::linear(1.0, 1.0, 0.3, 10, 0.5).unwrap();
        let eq = equilibrium(&cfg).unwrap();
        assert_eq!((eq.psi_inf, eq.zeta_inf), (0.0, 0.0));
        cfg.y_r = 1.0;
        cfg.w_o = 1.0;
        cfg.ki = 1.0;
        let eq = equilibrium(&cfg).unwrap();
        assert_eq!((eq.psi_inf, eq.zeta_inf), (0.0, 0.0));
        cfg.ki = 0.0;
        assert!(equilibrium(&cfg).is_err());
    }

    #[test]
    fn equilibrium_requires_positive_flux() {
        let mut cfg = LoopConfig::benchmark();
        cfg.flux = FluxModel::table(vec![-1.0, 0.0, 1.0], vec![1.0, 1.0, 1.0]).unwrap();
        cfg.y_r = 5.0;
        cfg.w_o = 0.0;
        // outside the table the linear extension stays at 1.0, so equilibrium is fine
        assert!(equilibrium(&cfg).is_ok());
        cfg.flux = FluxModel::table(vec![-1.0, 0.0, 1.0], vec![1.0, 0.5, 0.1]).unwrap();
        // extension slope −0.4 reaches zero beyond σ = 1.25
        assert!(matches!(equilibrium(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn config_validation() {
        let mut cfg = LoopConfig::benchmark();
        assert!(cfg.validate().is_ok());
        cfg.theta = 0.4;
        assert!(cfg.validate().is_err());
        cfg.theta = 0.55;
        cfg.n = 1;
        assert!(cfg.validate().is_err());
        cfg.n = 100;
        cfg.ki = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let cfg = LoopConfig::benchmark();
        let state = SimState::at_equilibrium(&cfg).unwrap();
        let next = preissmann_step(&state, &cfg).unwrap();
        let drift = next
            .psi
            .iter()
            .zip(&state.psi)
            .map(|(a, b)| (a - b).abs())
            .fold((next.zeta - state.zeta).abs(), f64::max);
        assert!(drift < 1e-12);
    }

    #[test]
    fn equilibrium_run_has_constant_series() {
        let cfg = LoopConfig::benchmark();
        let state = SimState::at_equilibrium(&cfg).unwrap();
        let trace = simulate(&cfg, &state, 20.0, 10).unwrap();
        assert_eq!(trace.snapshots.last().unwrap().step, trace.len() - 1);
        for k in 0..trace.len() {
            assert!((trace.y[k] - cfg.y_r).abs() < 1e-12);
            assert!((trace.u[k] - 0.4).abs() < 1e-12);
            assert!(trace.xnorm[k] < 1e-10);
        }
        assert!(trace.reconstruction_holds(&cfg));
    }

    #[test]
    fn simulate_rejects_bad_input() {
        let cfg = LoopConfig::benchmark();
        let state = SimState::at_equilibrium(&cfg).unwrap();
        assert!(simulate(&cfg, &state, 0.0, 1).is_err());
        let short = SimState {
            psi: vec![0.4; 10],
            ..state
        };
        assert!(simulate(&cfg, &short, 1.0, 1).is_err());
    }

    #[test]
    fn divergence_is_reported() {
        let mut cfg = LoopConfig::benchmark();
        cfg.flux = cfg.flux.with_interval(0.35, 0.45).unwrap();
        let mut state = SimState::at_equilibrium(&cfg).unwrap();
        state.psi = state.psi.iter().enumerate().map(|(i, p)| p + 0.09 * (i as f64 * 0.3).sin()).collect();
        state.zeta = (cfg.w_c - state.psi[0]) / cfg.ki;
        let err = simulate(&cfg, &state, 5.0, 1).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert_eq!(err.exit_code(), 3);
    }
}
