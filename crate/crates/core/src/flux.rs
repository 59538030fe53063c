//! Flux speed models `F(σ)` with derivatives and the averaged-derivative integrals
//! `F1`, `F2`, `F3` used by the Lyapunov rate identities.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad;

/// Below this `|z|` the difference quotients are replaced by their limits.
pub const REMOVABLE_THRESHOLD: f64 = 1e-7;

/// Default half-width of the working interval around the equilibrium.
pub const DEFAULT_HALF_WIDTH: f64 = 5.0;

const POSITIVITY_SAMPLES: usize = 1001;

/// A user-supplied flux given as a coherent `(eval, d1, d2)` triple.
pub trait FluxFunction: Send + Sync + fmt::Debug {
    fn eval(&self, sigma: f64) -> f64;
    fn d1(&self, sigma: f64) -> f64;
    fn d2(&self, sigma: f64) -> f64;

    /// Interval on which the function is defined, if bounded.
    fn domain(&self) -> Option<(f64, f64)> {
        None
    }

    /// Points where `d2` may jump (skipped by the consistency check).
    fn breakpoints(&self) -> &[f64] {
        &[]
    }

    fn tag(&self) -> String {
        "custom".to_string()
    }
}

#[derive(Clone, Debug)]
pub enum FluxKind {
    /// Constant speed `r`.
    Linear { r: f64 },
    /// `F(σ) = (σ + a)² + b`.
    Quadratic { a: f64, b: f64 },
    /// `F(σ) = func(σ + offset)`.
    Custom {
        func: Arc<dyn FluxFunction>,
        offset: f64,
    },
}

/// Flux speed model restricted to a working interval on which positivity is enforced.
#[derive(Clone, Debug)]
pub struct FluxModel {
    kind: FluxKind,
    interval: (f64, f64),
}

impl FluxModel {
    pub fn linear(r: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::domain(format!("linear flux speed must be positive, got {r}")));
        }
        // a constant speed is positive everywhere
        Ok(FluxModel {
            kind: FluxKind::Linear { r },
            interval: (f64::NEG_INFINITY, f64::INFINITY),
        })
    }

    /// `F(σ) = σ² + b`.
    pub fn quadratic(b: f64) -> Result<Self> {
        Self::quadratic_shifted(0.0, b)
    }

    /// `F(σ) = (σ + a)² + b`.
    pub fn quadratic_shifted(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::domain("quadratic flux coefficients must be finite"));
        }
        let model = FluxModel {
            kind: FluxKind::Quadratic { a, b },
            interval: (-DEFAULT_HALF_WIDTH, DEFAULT_HALF_WIDTH),
        };
        model.check_positive()?;
        Ok(model)
    }

    /// Registers a custom flux after validating positivity and derivative consistency
    /// on `interval` (clipped to the function's own domain).
    pub fn custom(func: Arc<dyn FluxFunction>, interval: (f64, f64)) -> Result<Self> {
        let interval = clip_interval(interval, func.domain())?;
        let model = FluxModel {
            kind: FluxKind::Custom { func, offset: 0.0 },
            interval,
        };
        model.check_positive()?;
        model.check_consistency()?;
        Ok(model)
    }

    /// Monotone-cubic interpolant through sampled `(σ, F)` pairs.
    pub fn table(sigma: Vec<f64>, flux: Vec<f64>) -> Result<Self> {
        let table = FluxTable::new(sigma, flux)?;
        let dom = table.domain().expect("tables are bounded");
        Self::custom(Arc::new(table), dom)
    }

    pub fn kind(&self) -> &FluxKind {
        &self.kind
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    /// Replaces the working interval; positivity is re-checked.
    pub fn with_interval(&self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::domain(format!("invalid working interval [{lo}, {hi}]")));
        }
        let domain = match &self.kind {
            FluxKind::Custom { func, offset } => func.domain().map(|(a, b)| (a - offset, b - offset)),
            _ => None,
        };
        let model = FluxModel {
            kind: self.kind.clone(),
            interval: clip_interval((lo, hi), domain)?,
        };
        model.check_positive()?;
        Ok(model)
    }

    /// The shifted model `z ↦ F(z + psi_inf)`.
    pub fn shift(&self, psi_inf: f64) -> FluxModel {
        let kind = match &self.kind {
            FluxKind::Linear { r } => FluxKind::Linear { r: *r },
            FluxKind::Quadratic { a, b } => FluxKind::Quadratic {
                a: a + psi_inf,
                b: *b,
            },
            FluxKind::Custom { func, offset } => FluxKind::Custom {
                func: Arc::clone(func),
                offset: offset + psi_inf,
            },
        };
        FluxModel {
            kind,
            interval: (self.interval.0 - psi_inf, self.interval.1 - psi_inf),
        }
    }

    #[inline]
    pub fn eval(&self, sigma: f64) -> f64 {
        match &self.kind {
            FluxKind::Linear { r } => *r,
            FluxKind::Quadratic { a, b } => {
                let u = sigma + a;
                u * u + b
            }
            FluxKind::Custom { func, offset } => func.eval(sigma + offset),
        }
    }

    #[inline]
    pub fn d1(&self, sigma: f64) -> f64 {
        match &self.kind {
            FluxKind::Linear { .. } => 0.0,
            FluxKind::Quadratic { a, .. } => 2.0 * (sigma + a),
            FluxKind::Custom { func, offset } => func.d1(sigma + offset),
        }
    }

    #[inline]
    pub fn d2(&self, sigma: f64) -> f64 {
        match &self.kind {
            FluxKind::Linear { .. } => 0.0,
            FluxKind::Quadratic { .. } => 2.0,
            FluxKind::Custom { func, offset } => func.d2(sigma + offset),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.kind, FluxKind::Linear { .. })
    }

    pub fn contains(&self, sigma: f64) -> bool {
        sigma >= self.interval.0 && sigma <= self.interval.1
    }

    /// `F1(z) = ∫₀¹ F'(λz) dλ`, so that `F(z) = F(0) + F1(z) z`.
    pub fn f1(&self, z: f64) -> f64 {
        if z.abs() < REMOVABLE_THRESHOLD {
            self.d1(0.0)
        } else {
            (self.eval(z) - self.eval(0.0)) / z
        }
    }

    /// `F2(z) = ∫₀¹ F''(λz) dλ`, so that `F'(z) = F'(0) + F2(z) z`.
    pub fn f2(&self, z: f64) -> f64 {
        if z.abs() < REMOVABLE_THRESHOLD {
            self.d2(0.0)
        } else {
            (self.d1(z) - self.d1(0.0)) / z
        }
    }

    /// `F3(z) = ∫₀¹ F'(λz)/F²(λz) dλ = (1/F(0) − 1/F(z)) / z`.
    pub fn f3(&self, z: f64) -> Result<f64> {
        self.check_segment(z)?;
        let f0 = self.eval(0.0);
        if z.abs() < REMOVABLE_THRESHOLD {
            Ok(self.d1(0.0) / (f0 * f0))
        } else {
            Ok((1.0 / f0 - 1.0 / self.eval(z)) / z)
        }
    }

    /// `F3` by adaptive quadrature of its integrand (relative tolerance 1e-10).
    pub fn f3_quadrature(&self, z: f64) -> Result<f64> {
        self.check_segment(z)?;
        Ok(quad::adaptive_simpson(
            |lam| {
                let f = self.eval(lam * z);
                self.d1(lam * z) / (f * f)
            },
            0.0,
            1.0,
            1e-10,
        ))
    }

    fn check_segment(&self, z: f64) -> Result<()> {
        const SAMPLES: usize = 32;
        for k in 0..=SAMPLES {
            let sigma = z * k as f64 / SAMPLES as f64;
            let f = self.eval(sigma);
            if !(f > 0.0) {
                return Err(Error::domain(format!(
                    "flux nonpositive on [0, {z}]: F({sigma}) = {f}"
                )));
            }
        }
        Ok(())
    }

    /// Rejects the model if `eval(σ) ≤ 0` at any sample of the working interval.
    pub fn check_positive(&self) -> Result<()> {
        if let FluxKind::Linear { r } = self.kind {
            return if r > 0.0 { Ok(()) } else { Err(Error::domain(format!("linear flux speed {r} is not positive"))) };
        }
        let (lo, hi) = self.interval;
        for k in 0..POSITIVITY_SAMPLES {
            let sigma = lo + (hi - lo) * k as f64 / (POSITIVITY_SAMPLES - 1) as f64;
            let f = self.eval(sigma);
            if !(f > 0.0) {
                return Err(Error::domain(format!(
                    "flux must be positive on [{lo}, {hi}], but F({sigma}) = {f}"
                )));
            }
        }
        Ok(())
    }

    /// Central differences of `eval` and `d1` must agree with `d1` and `d2`.
    fn check_consistency(&self) -> Result<()> {
        const SAMPLES: usize = 64;
        let (lo, hi) = self.interval;
        let h = 1e-4 * (hi - lo).max(1.0) / 10.0;
        let breaks: Vec<f64> = match &self.kind {
            FluxKind::Custom { func, offset } => func.breakpoints().iter().map(|b| b - offset).collect(),
            _ => Vec::new(),
        };
        // golden-ratio jitter keeps samples off any regular lattice of knots
        let golden = 0.618_033_988_749_894_9;
        for k in 0..SAMPLES {
            let frac = (k as f64 * golden + 0.5 * golden).fract();
            let sigma = lo + 2.0 * h + (hi - lo - 4.0 * h) * frac;
            if breaks.iter().any(|b| (sigma - b).abs() < 3.0 * h) {
                continue;
            }
            let fd1 = (self.eval(sigma + h) - self.eval(sigma - h)) / (2.0 * h);
            let fd2 = (self.d1(sigma + h) - self.d1(sigma - h)) / (2.0 * h);
            let d1 = self.d1(sigma);
            let d2 = self.d2(sigma);
            let scale1 = 1.0 + d1.abs() + self.eval(sigma).abs();
            let scale2 = 1.0 + d2.abs() + d1.abs();
            if (fd1 - d1).abs() > 1e-5 * scale1 || (fd2 - d2).abs() > 1e-5 * scale2 {
                return Err(Error::domain(format!(
                    "flux derivatives inconsistent at σ = {sigma}: \
                     d1 = {d1} vs FD {fd1}, d2 = {d2} vs FD {fd2}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for FluxModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            FluxKind::Linear { r } => write!(f, "linear(r={r})"),
            FluxKind::Quadratic { a, b } if *a == 0.0 => write!(f, "quadratic(b={b})"),
            FluxKind::Quadratic { a, b } => write!(f, "quadratic(a={a},b={b})"),
            FluxKind::Custom { func, offset } if *offset == 0.0 => write!(f, "{}", func.tag()),
            FluxKind::Custom { func, offset } => write!(f, "{}@{offset}", func.tag()),
        }
    }
}

fn clip_interval(interval: (f64, f64), domain: Option<(f64, f64)>) -> Result<(f64, f64)> {
    let (mut lo, mut hi) = interval;
    if let Some((a, b)) = domain {
        lo = lo.max(a);
        hi = hi.min(b);
    }
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(Error::domain(format!(
            "working interval [{}, {}] is empty on the flux domain",
            interval.0, interval.1
        )));
    }
    Ok((lo, hi))
}

/// Sampled flux with Fritsch–Carlson monotone cubic Hermite interpolation.
///
/// Outside the sampled range the table extends linearly with the end slopes.
#[derive(Debug, Clone)]
pub struct FluxTable {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
    source: Option<String>,
}

impl FluxTable {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(Error::domain("flux table needs at least two (σ, F) samples"));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("flux table abscissae must be strictly increasing"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::domain("flux table contains non-finite values"));
        }
        let n = x.len();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
        let mut m = vec![0.0; n];
        m[0] = delta[0];
        m[n - 1] = delta[n - 2];
        for k in 1..n - 1 {
            m[k] = if delta[k - 1] * delta[k] <= 0.0 {
                0.0
            } else {
                0.5 * (delta[k - 1] + delta[k])
            };
        }
        for k in 0..n - 1 {
            if delta[k] == 0.0 {
                m[k] = 0.0;
                m[k + 1] = 0.0;
                continue;
            }
            let a = m[k] / delta[k];
            let b = m[k + 1] / delta[k];
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                m[k] = tau * a * delta[k];
                m[k + 1] = tau * b * delta[k];
            }
        }
        Ok(FluxTable { x, y, m, source: None })
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = Some(source.into());
        self
    }

    fn segment(&self, sigma: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&xk| xk <= sigma) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        }
    }

    /// Returns value, first and second derivative at `sigma`.
    fn hermite(&self, sigma: f64) -> (f64, f64, f64) {
        let n = self.x.len();
        if sigma < self.x[0] {
            return (self.y[0] + self.m[0] * (sigma - self.x[0]), self.m[0], 0.0);
        }
        if sigma > self.x[n - 1] {
            return (
                self.y[n - 1] + self.m[n - 1] * (sigma - self.x[n - 1]),
                self.m[n - 1],
                0.0,
            );
        }
        let k = self.segment(sigma);
        let h = self.x[k + 1] - self.x[k];
        let t = (sigma - self.x[k]) / h;
        let (y0, y1, m0, m1) = (self.y[k], self.y[k + 1], self.m[k] * h, self.m[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let value = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * m0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * m1;
        let dvalue = (6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * m0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * m1;
        let ddvalue = (12.0 * t - 6.0) * y0 + (6.0 * t - 4.0) * m0 + (-12.0 * t + 6.0) * y1 + (6.0 * t - 2.0) * m1;
        (value, dvalue / h, ddvalue / (h * h))
    }
}

impl FluxFunction for FluxTable {
    fn eval(&self, sigma: f64) -> f64 {
        self.hermite(sigma).0
    }

    fn d1(&self, sigma: f64) -> f64 {
        self.hermite(sigma).1
    }

    fn d2(&self, sigma: f64) -> f64 {
        self.hermite(sigma).2
    }

    fn domain(&self) -> Option<(f64, f64)> {
        Some((self.x[0], self.x[self.x.len() - 1]))
    }

    fn breakpoints(&self) -> &[f64] {
        &self.x
    }

    fn tag(&self) -> String {
        match &self.source {
            Some(path) => format!("table({path})"),
            None => "table".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug)]
    struct ExpFlux;

    impl FluxFunction for ExpFlux {
        fn eval(&self, s: f64) -> f64 {
            1.0 + 0.5 * s.exp()
        }
        fn d1(&self, s: f64) -> f64 {
            0.5 * s.exp()
        }
        fn d2(&self, s: f64) -> f64 {
            0.5 * s.exp()
        }
    }

    #[derive(Debug)]
    struct Inconsistent;

    impl FluxFunction for Inconsistent {
        fn eval(&self, s: f64) -> f64 {
            2.0 + s.sin()
        }
        fn d1(&self, s: f64) -> f64 {
            s.cos() + 0.1
        }
        fn d2(&self, s: f64) -> f64 {
            -s.sin()
        }
    }

    #[test]
    fn shift_of_quadratic_moves_vertex() {
        let f = FluxModel::quadratic(3.0).unwrap().shift(0.4);
        assert!((f.eval(0.0) - 3.16).abs() < 1e-15);
        for z in [-1.3, 0.0, 0.7, 2.2] {
            assert!((f.eval(z) - ((z + 0.4) * (z + 0.4) + 3.0)).abs() < 1e-14);
        }
        assert!(matches!(f.kind(), FluxKind::Quadratic { .. }));
    }

    #[test]
    fn shift_of_linear_and_zero_shift_are_identity() {
        let lin = FluxModel::linear(2.0).unwrap();
        let shifted = lin.shift(1.7);
        assert!(matches!(shifted.kind(), FluxKind::Linear { r } if *r == 2.0));
        let q = FluxModel::quadratic(3.0).unwrap();
        let q0 = q.shift(0.0);
        for z in [-2.0, 0.1, 3.0] {
            assert_eq!(q.eval(z), q0.eval(z));
            assert_eq!(q.d1(z), q0.d1(z));
        }
        assert_eq!(q.interval(), q0.interval());
    }

    #[test]
    fn averaged_derivatives_of_quadratic() {
        let f = FluxModel::quadratic(3.0).unwrap();
        assert!((f.f1(2.0) - 2.0).abs() < 1e-14);
        assert_eq!(f.f1(0.0), 0.0);
        for z in [-3.0, -1e-8, 0.0, 0.5, 4.0] {
            assert!((f.f2(z) - 2.0).abs() < 1e-12);
        }
        assert!((f.f3(1.0).unwrap() - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(f.f3(0.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_flux_has_vanishing_averages() {
        let f = FluxModel::linear(2.5).unwrap();
        for z in [-1.0, 0.0, 1e-9, 3.0] {
            assert_eq!(f.f1(z), 0.0);
            assert_eq!(f.f2(z), 0.0);
            assert_eq!(f.f3(z).unwrap(), 0.0);
        }
    }

    #[test]
    fn f3_rejects_nonpositive_segment() {
        let f = FluxModel::quadratic_shifted(0.0, 3.0).unwrap();
        assert!(f.f3(1.0).is_ok());
        let bad = FluxModel {
            kind: FluxKind::Quadratic { a: 0.0, b: -1.0 },
            interval: (-5.0, 5.0),
        };
        assert!(matches!(bad.f3(2.0), Err(Error::Domain(_))));
    }

    #[test]
    fn positivity_check_rejects_sign_change() {
        assert!(FluxModel::quadratic(-0.5).is_err());
        assert!(FluxModel::linear(0.0).is_err());
        assert!(FluxModel::linear(-1.0).is_err());
        let q = FluxModel::quadratic(0.5).unwrap();
        assert!(q.with_interval(-1.0, 1.0).is_ok());
    }

    #[test]
    fn custom_flux_registration_validates_derivatives() {
        assert!(FluxModel::custom(Arc::new(ExpFlux), (-3.0, 3.0)).is_ok());
        assert!(FluxModel::custom(Arc::new(Inconsistent), (-3.0, 3.0)).is_err());
    }

    #[test]
    fn table_interpolates_smooth_flux() {
        let x: Vec<f64> = (0..=40).map(|k| -2.0 + 0.1 * k as f64).collect();
        let y: Vec<f64> = x.iter().map(|s| s * s + 3.0).collect();
        let model = FluxModel::table(x, y).unwrap();
        assert_eq!(model.interval(), (-2.0, 2.0));
        for s in [-1.55, -0.33, 0.0, 0.71, 1.93] {
            assert!((model.eval(s) - (s * s + 3.0)).abs() < 2e-3, "σ = {s}");
            assert!((model.d1(s) - 2.0 * s).abs() < 5e-2, "σ = {s}");
        }
        // knots are reproduced exactly
        assert!((model.eval(0.5) - 3.25).abs() < 1e-14);
    }

    #[test]
    fn table_is_monotone_between_monotone_samples() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y = vec![1.0, 1.1, 5.0, 5.05, 9.0];
        let model = FluxModel::table(x, y).unwrap();
        let mut prev = model.eval(0.0);
        for k in 1..=400 {
            let v = model.eval(k as f64 * 0.01);
            assert!(v >= prev - 1e-14);
            prev = v;
        }
    }

    #[test]
    fn display_tags() {
        assert_eq!(FluxModel::linear(3.0).unwrap().to_string(), "linear(r=3)");
        assert_eq!(FluxModel::quadratic(3.0).unwrap().to_string(), "quadratic(b=3)");
    }
}
