//! Batch front end: `design`, `poles`, `simulate`, `verify`, `sweep`, `paper-figures`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 verification failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::design::{gain_bounds, p_matrix_certificate, select_params};
use crate::error::{Error, Result};
use crate::io::{format_value, read_csv, write_csv, write_text, RunSpec, Table};
use crate::lyapunov::{fit_decay, rate_samples, verify_decay, DecayFit, DecayMode};
use crate::sim::{
    equilibrium, initial_profile, make_compatible_initial, simulate, LoopConfig, ProfileShape, Snapshot, Trace,
};
use crate::spectral::{alpha_char, find_poles, stability_verdict, PoleKind, Verdict, DEFAULT_BRANCHES};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "HYPI_OUT_DIR";
const DEFAULT_OUT_ROOT: &str = "hypi-out";

#[derive(Parser, Debug)]
#[command(name = "hypi", version, about = "PI boundary control of scalar hyperbolic balance laws")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Gain bounds, Lyapunov weights and the P-matrix certificate.
    Design(DesignArgs),
    /// Closed-loop poles of the linearized loop.
    Poles(PolesArgs),
    /// Simulate the closed loop and store the trace.
    Simulate(SimulateArgs),
    /// Check the Lyapunov rate identities and decay along a stored trace.
    Verify(VerifyArgs),
    /// Stability map over a range of integral gains.
    Sweep(SweepArgs),
    /// Datasets mirroring the benchmark figures.
    PaperFigures(FigureArgs),
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Characteristic speed `F̃(ψ∞)`.
    #[arg(long)]
    pub r: f64,
    #[arg(long = "length", short = 'L')]
    pub length: f64,
    #[arg(long)]
    pub ki: Option<f64>,
    #[arg(long, requires = "q4")]
    pub q3: Option<f64>,
    #[arg(long, requires = "q3")]
    pub q4: Option<f64>,
}

#[derive(Args, Debug)]
pub struct PolesArgs {
    #[arg(long, required_unless_present = "alpha", requires_all = ["r", "length"])]
    pub ki: Option<f64>,
    #[arg(long)]
    pub r: Option<f64>,
    #[arg(long = "length", short = 'L')]
    pub length: Option<f64>,
    /// Dimensionless gain `kI L / r`, instead of `--ki`.
    #[arg(long, conflicts_with = "ki")]
    pub alpha: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_BRANCHES)]
    pub branches: usize,
}

/// Loop settings shared by the simulating subcommands; flags override `--config`.
#[derive(Args, Debug, Default, Clone)]
pub struct LoopArgs {
    /// Key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long = "length", short = 'L')]
    pub length: Option<f64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub dt_over_dx: Option<f64>,
    #[arg(long)]
    pub ki: Option<f64>,
    #[arg(long)]
    pub y_r: Option<f64>,
    #[arg(long)]
    pub w_o: Option<f64>,
    #[arg(long)]
    pub w_c: Option<f64>,
    /// `linear(r=..)`, `quadratic(b=..)` or `table(path)`.
    #[arg(long)]
    pub flux: Option<String>,
    /// Simulation horizon.
    #[arg(long = "horizon", short = 'T')]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// `sine`, `bump` or `random`.
    #[arg(long)]
    pub profile: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub stride: Option<usize>,
}

impl LoopArgs {
    pub fn resolve(&self) -> Result<RunSpec> {
        let mut spec = match &self.config {
            Some(path) => RunSpec::load(path)?,
            None => RunSpec::default(),
        };
        let num = |v: Option<f64>| v.map(|x| x.to_string());
        let overrides = [
            ("flux", self.flux.clone()),
            ("L", num(self.length)),
            ("N", self.n.map(|v| v.to_string())),
            ("theta", num(self.theta)),
            ("dt_over_dx", num(self.dt_over_dx)),
            ("ki", num(self.ki)),
            ("y_r", num(self.y_r)),
            ("w_o", num(self.w_o)),
            ("w_c", num(self.w_c)),
            ("T", num(self.horizon)),
            ("amplitude", num(self.amplitude)),
            ("seed", self.seed.map(|v| v.to_string())),
            ("profile", self.profile.clone()),
            ("stride", self.stride.map(|v| v.to_string())),
        ];
        for (key, value) in overrides {
            if let Some(value) = value {
                spec.apply(key, &value)?;
            }
        }
        Ok(spec)
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub loop_args: LoopArgs,
    /// Output directory; defaults to `$HYPI_OUT_DIR/simulate`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Allow gains outside the certified interval.
    #[arg(long)]
    pub uncertified: bool,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub trace: PathBuf,
    /// `lemma1` (linear flux) or `theorem2`.
    #[arg(long)]
    pub mode: DecayMode,
    /// Output directory; defaults to the trace directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    #[arg(long = "length", short = 'L', default_value_t = 1.0)]
    pub length: f64,
    #[arg(long, default_value_t = 0.1)]
    pub ki_min: f64,
    #[arg(long, default_value_t = 2.5)]
    pub ki_max: f64,
    #[arg(long, default_value_t = 25)]
    pub count: usize,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 0.55)]
    pub theta: f64,
    #[arg(long = "horizon", short = 'T', default_value_t = 100.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub amplitude: f64,
    /// Worker threads; 0 uses the available parallelism.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct FigureArgs {
    #[command(flatten)]
    pub loop_args: LoopArgs,
    /// Time between stored profiles of the surface dataset.
    #[arg(long, default_value_t = 5.0)]
    pub surface_every: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn out_dir(explicit: Option<&PathBuf>, sub: &str) -> PathBuf {
    match explicit {
        Some(p) => p.clone(),
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_ROOT))
            .join(sub),
    }
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(report) => {
            print!("{report}");
            0
        }
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

/// Runs one subcommand and returns its textual report.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Design(a) => run_design(&a),
        Command::Poles(a) => run_poles(&a),
        Command::Simulate(a) => run_simulate(&a).map(|(_, report)| report),
        Command::Verify(a) => run_verify(&a),
        Command::Sweep(a) => run_sweep(&a).map(|s| s.report),
        Command::PaperFigures(a) => run_paper_figures(&a),
    }
}

fn run_design(a: &DesignArgs) -> Result<String> {
    let b = gain_bounds(a.r, a.length)?;
    let mut out = String::new();
    let _ = writeln!(out, "linear_sharp = {}", b.linear_sharp);
    let _ = writeln!(out, "lyapunov_conservative = {}", b.lyapunov_conservative);
    if let Some(ki) = a.ki {
        let layers = a.q3.zip(a.q4);
        let p = select_params(ki, a.r, a.length, layers)?;
        let c = p_matrix_certificate(&p, a.r, a.length);
        let _ = writeln!(out, "mu = {}", p.mu);
        let _ = writeln!(out, "q1 = {}\nq2 = {}\nq3 = {}\nq4 = {}", p.q1, p.q2, p.q3, p.q4);
        let _ = writeln!(out, "det_P = {}\ndet_lower_bound = {}", c.det, c.det_lower_bound);
        let _ = writeln!(out, "lambda_min = {}\nlambda_max = {}", c.lambda_min, c.lambda_max);
        let _ = writeln!(out, "certificate = {}", if c.holds { "holds" } else { "fails" });
        if !c.holds {
            return Err(Error::Verification(format!("P-matrix certificate fails:\n{out}")));
        }
    }
    Ok(out)
}

fn run_poles(a: &PolesArgs) -> Result<String> {
    let alpha = match (a.alpha, a.ki, a.r, a.length) {
        (Some(alpha), ..) => alpha,
        (None, Some(ki), Some(r), Some(l)) => alpha_char(ki, r, l)?,
        _ => return Err(Error::config("give --alpha or all of --ki, --r, --length")),
    };
    let report = find_poles(alpha, a.branches)?;
    let mut out = String::new();
    let _ = writeln!(out, "alpha_char = {alpha}");
    let _ = writeln!(out, "branch,kind,re,im,residual,converged");
    for p in &report.poles {
        let kind = match p.kind {
            PoleKind::Real => "real",
            PoleKind::Complex { .. } => "complex",
        };
        let _ = writeln!(
            out,
            "{},{kind},{},{},{:e},{}",
            p.branch, p.mu.re, p.mu.im, p.residual, p.converged
        );
    }
    let _ = writeln!(out, "rightmost_real = {}", report.rightmost_real);
    let _ = writeln!(out, "stable = {}", report.stable);
    Ok(out)
}

/// Builds the compatible initial state of a run.
pub fn initial_state(spec: &RunSpec) -> Result<crate::sim::SimState> {
    let profile = initial_profile(&spec.config, spec.profile, spec.amplitude);
    Ok(make_compatible_initial(&profile, &spec.config)?.state)
}

/// Requires `0 < kI <` the certified bound at the equilibrium speed.
fn check_certified(config: &LoopConfig) -> Result<()> {
    let eq = equilibrium(config)?;
    select_params(config.ki, eq.r_eff, config.length, None).map(|_| ())
}

fn trace_table(trace: &Trace) -> Table {
    let mut t = Table::new(&["t", "zeta", "u", "y", "xnorm"]);
    for k in 0..trace.len() {
        t.push(vec![trace.times[k], trace.zeta[k], trace.u[k], trace.y[k], trace.xnorm[k]]);
    }
    t
}

fn profiles_table(config: &LoopConfig, snapshots: &[Snapshot]) -> Table {
    let mut header = vec!["step".to_string(), "t".to_string(), "zeta".to_string()];
    header.extend((0..=config.n).map(|i| format!("psi_{i}")));
    let mut t = Table { header, rows: Vec::new() };
    for s in snapshots {
        let mut row = vec![s.step as f64, s.t, s.zeta];
        row.extend(&s.psi);
        t.push(row);
    }
    t
}

/// Simulates a run spec and writes `config.txt`, `trace.csv` and `profiles.csv` into `dir`.
pub fn write_simulation(spec: &RunSpec, dir: &Path) -> Result<Trace> {
    let init = initial_state(spec)?;
    let trace = simulate(&spec.config, &init, spec.horizon, spec.stride)?;
    write_text(&dir.join("config.txt"), &spec.to_text())?;
    write_csv(&dir.join("trace.csv"), &trace_table(&trace))?;
    write_csv(&dir.join("profiles.csv"), &profiles_table(&spec.config, &trace.snapshots))?;
    Ok(trace)
}

fn run_simulate(a: &SimulateArgs) -> Result<(Trace, String)> {
    let spec = a.loop_args.resolve()?;
    if !a.uncertified {
        check_certified(&spec.config)?;
    }
    let dir = out_dir(a.out.as_ref(), "simulate");
    let trace = write_simulation(&spec, &dir)?;
    let fit = fit_decay(&trace);
    let mut out = String::new();
    let _ = writeln!(out, "out = {}", dir.display());
    let _ = writeln!(out, "steps = {}", trace.len() - 1);
    let _ = writeln!(out, "final_y = {}", trace.y.last().copied().unwrap_or(f64::NAN));
    write_fit(&mut out, &fit);
    Ok((trace, out))
}

fn write_fit(out: &mut String, fit: &DecayFit) {
    if fit.degenerate {
        let _ = writeln!(out, "omega = degenerate");
    } else {
        let _ = writeln!(out, "omega = {}", fit.omega);
        let _ = writeln!(out, "M = {}", fit.m);
        let _ = writeln!(out, "fit_residual = {}", fit.residual);
    }
}

/// Reads a directory written by [`write_simulation`].
pub fn load_trace(dir: &Path) -> Result<(RunSpec, Trace)> {
    let spec = RunSpec::load(&dir.join("config.txt"))?;
    let series = read_csv(&dir.join("trace.csv"))?;
    let profiles = read_csv(&dir.join("profiles.csv"))?;
    let col = |name: &str| {
        series
            .column_by_name(name)
            .ok_or_else(|| Error::config(format!("trace.csv has no {name} column")))
    };
    let n = spec.config.n;
    if profiles.header.len() != n + 4 {
        return Err(Error::config("profiles.csv does not match the configured grid"));
    }
    let snapshots = profiles
        .rows
        .iter()
        .map(|row| Snapshot {
            step: row[0] as usize,
            t: row[1],
            zeta: row[2],
            psi: row[3..].to_vec(),
        })
        .collect();
    let trace = Trace {
        times: col("t")?,
        zeta: col("zeta")?,
        u: col("u")?,
        y: col("y")?,
        xnorm: col("xnorm")?,
        snapshots,
        dt: spec.config.dt(),
        dx: spec.config.dx(),
    };
    Ok((spec, trace))
}

fn run_verify(a: &VerifyArgs) -> Result<String> {
    let (spec, trace) = load_trace(&a.trace)?;
    let config = &spec.config;
    let eq = equilibrium(config)?;
    let params = select_params(config.ki, eq.r_eff, config.length, None)?;
    let samples = rate_samples(&trace, &params, config)?;
    let report = verify_decay(&trace, &params, config, a.mode)?;
    let mut table = Table::new(&["t", "V", "V1s", "V1p", "S", "fd_dVdt", "rhs"]);
    let mut worst = 0.0f64;
    for (s, v) in samples.iter().zip(&report.values) {
        table.push(vec![v.t, v.v, v.v1_s, v.v1_p, v.s, s.fd_dvdt, s.rhs_v]);
        if s.interior {
            worst = worst.max((s.fd_dvdt - s.rhs_v).abs());
        }
    }
    let dir = a.out.clone().unwrap_or_else(|| a.trace.clone());
    write_csv(&dir.join("verify.csv"), &table)?;
    let rate_name = match a.mode {
        DecayMode::Lemma1 => "alpha_hat",
        DecayMode::Theorem2 => "beta_hat",
    };
    let mut out = String::new();
    let _ = writeln!(out, "passed = {}", report.passed);
    let _ = writeln!(out, "{rate_name} = {}", report.rate);
    let _ = writeln!(out, "eps_grid = {}", report.eps_grid);
    let _ = writeln!(out, "K_hat = {}", report.sandwich);
    let _ = writeln!(out, "q3 = {}\nq4 = {}", report.q3, report.q4);
    let _ = writeln!(out, "layer_halvings = {}", report.halvings);
    let _ = writeln!(out, "max_identity_gap = {worst}");
    let _ = writeln!(out, "degenerate = {}", report.degenerate);
    write_text(&dir.join("verify_summary.txt"), &out)?;
    if !report.passed {
        return Err(Error::Verification(format!("decay check failed\n{out}")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub ki: f64,
    pub alpha_char: f64,
    pub rightmost_re: f64,
    pub sim_omega: f64,
    pub agree: bool,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    pub report: String,
}

/// Evenly spaced gains `ki_min, …, ki_max`.
pub fn gain_grid(min: f64, max: f64, count: usize) -> Result<Vec<f64>> {
    if count == 0 || !(min.is_finite() && max.is_finite()) || min > max || (count > 1 && min == max) {
        return Err(Error::config(format!("empty gain range [{min}, {max}] with {count} points")));
    }
    if count == 1 {
        return Ok(vec![min]);
    }
    Ok((0..count)
        .map(|k| min + (max - min) * k as f64 / (count - 1) as f64)
        .collect())
}

fn sweep_point(a: &SweepArgs, ki: f64, dir: &Path, index: usize) -> Result<SweepPoint> {
    let config = LoopConfig::linear(a.r, a.length, ki, a.n, a.theta)?;
    let spec = RunSpec {
        config,
        horizon: a.horizon,
        amplitude: a.amplitude,
        profile: ProfileShape::Sine,
        stride: usize::MAX,
    };
    let init = initial_state(&spec)?;
    let trace = simulate(&spec.config, &init, spec.horizon, spec.stride)?;
    let fit = fit_decay(&trace);
    let alpha = alpha_char(ki, a.r, a.length)?;
    let poles = find_poles(alpha, DEFAULT_BRANCHES)?;
    let rightmost_re = poles.rightmost_real * a.r / a.length;
    let verdict = stability_verdict(ki, a.r, a.length)?;
    let agree = match verdict {
        Verdict::Stable => fit.omega > 0.0,
        Verdict::Unstable => fit.omega < 0.0,
        Verdict::Marginal => true,
    };
    let mut own = Table::new(&["t", "xnorm"]);
    for (t, x) in trace.times.iter().zip(&trace.xnorm) {
        own.push(vec![*t, *x]);
    }
    write_csv(&dir.join(format!("point_{index:03}.csv")), &own)?;
    Ok(SweepPoint {
        ki,
        alpha_char: alpha,
        rightmost_re,
        sim_omega: fit.omega,
        agree,
    })
}

pub fn run_sweep(a: &SweepArgs) -> Result<SweepResult> {
    let gains = gain_grid(a.ki_min, a.ki_max, a.count)?;
    if gains.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::config("sweep gains must be positive"));
    }
    if !(a.horizon > 0.0) {
        return Err(Error::config("sweep horizon must be positive"));
    }
    let dir = out_dir(a.out.as_ref(), "sweep");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let points: Vec<SweepPoint> = pool.install(|| {
        gains
            .par_iter()
            .enumerate()
            .map(|(k, &ki)| sweep_point(a, ki, &dir, k))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut table = Table::new(&["kI", "alpha_char", "rightmost_re", "sim_omega", "agree"]);
    for p in &points {
        table.push(vec![p.ki, p.alpha_char, p.rightmost_re, p.sim_omega, if p.agree { 1.0 } else { 0.0 }]);
    }
    write_csv(&dir.join("sweep.csv"), &table)?;
    let flip = points
        .windows(2)
        .find(|w| (w[0].sim_omega > 0.0) != (w[1].sim_omega > 0.0))
        .map(|w| (w[0].ki, w[1].ki));
    let mut out = String::new();
    let _ = writeln!(out, "out = {}", dir.display());
    let _ = writeln!(out, "points = {}", points.len());
    let _ = writeln!(out, "agree = {}/{}", points.iter().filter(|p| p.agree).count(), points.len());
    match flip {
        Some((lo, hi)) => {
            let _ = writeln!(out, "sign_flip = ({lo}, {hi})");
        }
        None => {
            let _ = writeln!(out, "sign_flip = none");
        }
    }
    write_text(&dir.join("summary.txt"), &out)?;
    Ok(SweepResult { points, report: out })
}

fn run_paper_figures(a: &FigureArgs) -> Result<String> {
    let mut spec = a.loop_args.resolve()?;
    if !(a.surface_every > 0.0) {
        return Err(Error::config("surface sampling interval must be positive"));
    }
    spec.stride = ((a.surface_every / spec.config.dt()).round() as usize).max(1);
    let dir = out_dir(a.out.as_ref(), "paper-figures");
    let trace = write_simulation(&spec, &dir)?;
    let config = &spec.config;
    let grid = config.grid();

    let mut surface = Table::new(&["t", "x", "psi"]);
    for s in &trace.snapshots {
        for (x, psi) in grid.iter().zip(&s.psi) {
            surface.push(vec![s.t, *x, *psi]);
        }
    }
    let series = |name: &str, values: &dyn Fn(usize) -> f64| {
        let mut t = Table::new(&["t", name]);
        for k in 0..trace.len() {
            t.push(vec![trace.times[k], values(k)]);
        }
        t
    };
    write_csv(&dir.join("fig1_surface.csv"), &surface)?;
    write_csv(&dir.join("fig2_control.csv"), &series("u", &|k| trace.u[k]))?;
    write_csv(&dir.join("fig3_error.csv"), &series("abs_error", &|k| (trace.y[k] - config.y_r).abs()))?;
    write_csv(&dir.join("fig4_output.csv"), &series("y", &|k| trace.y[k]))?;

    let fit = fit_decay(&trace);
    let final_y = trace.y.last().copied().unwrap_or(f64::NAN);
    let mut out = String::new();
    let _ = writeln!(out, "out = {}", dir.display());
    let _ = writeln!(out, "T = {}", trace.final_time());
    let _ = writeln!(out, "final_y = {}", format_value(final_y));
    let _ = writeln!(out, "final_error = {}", format_value((final_y - config.y_r).abs()));
    if let Ok(eq) = equilibrium(config) {
        let _ = writeln!(out, "psi_inf = {}\nzeta_inf = {}", eq.psi_inf, eq.zeta_inf);
    }
    write_fit(&mut out, &fit);
    write_text(&dir.join("summary.txt"), &out)?;
    Ok(out)
}
