//! Key=value run configurations and numeric CSV tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::flux::{FluxFunction, FluxModel, FluxTable};
use crate::sim::{LoopConfig, ProfileShape};

/// A loop configuration together with the run controls of a simulation.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: LoopConfig,
    pub horizon: f64,
    pub amplitude: f64,
    pub profile: ProfileShape,
    /// Profiles are stored every `stride` steps.
    pub stride: usize,
}

impl Default for RunSpec {
    fn default() -> Self {
        RunSpec {
            config: LoopConfig::benchmark(),
            horizon: 600.0,
            amplitude: 0.05,
            profile: ProfileShape::Sine,
            stride: 1,
        }
    }
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse::<f64>()
        .map_err(|_| Error::config(format!("{key}: expected a number, got {value:?}")))
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse::<usize>()
        .map_err(|_| Error::config(format!("{key}: expected a nonnegative integer, got {value:?}")))
}

/// Parses `linear(r=3)`, `quadratic(b=3)`, `quadratic(a=0.1,b=3)` or `table(path)`.
/// Table paths are resolved against `base`.
pub fn parse_flux(tag: &str, base: Option<&Path>) -> Result<FluxModel> {
    let tag = tag.trim();
    let (name, args) = tag
        .strip_suffix(')')
        .and_then(|t| t.split_once('('))
        .ok_or_else(|| Error::config(format!("malformed flux {tag:?}")))?;
    let named = |args: &str| -> Result<Vec<(String, f64)>> {
        args.split(',')
            .filter(|a| !a.trim().is_empty())
            .map(|a| {
                let (k, v) = a
                    .split_once('=')
                    .ok_or_else(|| Error::config(format!("flux argument {a:?} is not key=value")))?;
                Ok((k.trim().to_string(), parse_f64(k.trim(), v.trim())?))
            })
            .collect()
    };
    let get = |args: &[(String, f64)], key: &str, default: Option<f64>| -> Result<f64> {
        args.iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| *v)
            .or(default)
            .ok_or_else(|| Error::config(format!("flux {tag:?} is missing {key}")))
    };
    match name.trim() {
        "linear" => {
            let a = named(args)?;
            Ok(FluxModel::linear(get(&a, "r", None)?)?)
        }
        "quadratic" => {
            let a = named(args)?;
            Ok(FluxModel::quadratic_shifted(get(&a, "a", Some(0.0))?, get(&a, "b", None)?)?)
        }
        "table" => {
            let path = PathBuf::from(args.trim());
            let resolved = match base {
                Some(dir) if path.is_relative() => dir.join(&path),
                _ => path.clone(),
            };
            let table = read_csv(&resolved)?;
            if table.header.len() < 2 {
                return Err(Error::config(format!("{} needs two columns sigma,flux", resolved.display())));
            }
            let sigma = table.column(0);
            let flux = table.column(1);
            let func = FluxTable::new(sigma, flux)?.with_source(path.display().to_string());
            let dom = func.domain().expect("tables are bounded");
            Ok(FluxModel::custom(std::sync::Arc::new(func), dom)?)
        }
        other => Err(Error::config(format!("unknown flux model {other:?}"))),
    }
}

fn profile_name(shape: ProfileShape) -> &'static str {
    match shape {
        ProfileShape::Sine => "sine",
        ProfileShape::Bump => "bump",
        ProfileShape::Random { .. } => "random",
    }
}

impl RunSpec {
    /// Reads `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut spec = RunSpec::default();
        let mut seed = None;
        let mut profile = "sine".to_string();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("line {}: expected key = value", lineno + 1)))?;
            spec.set(key.trim(), value.trim(), base, &mut seed, &mut profile)?;
        }
        spec.profile = match (profile.as_str(), seed) {
            ("sine", _) => ProfileShape::Sine,
            ("bump", _) => ProfileShape::Bump,
            ("random", s) => ProfileShape::Random { seed: s.unwrap_or(0) },
            (other, _) => return Err(Error::config(format!("unknown profile {other:?}"))),
        };
        spec.finish()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Applies one `key = value` setting.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let mut seed = match self.profile {
            ProfileShape::Random { seed } => Some(seed),
            _ => None,
        };
        let mut profile = profile_name(self.profile).to_string();
        self.set(key, value, None, &mut seed, &mut profile)?;
        self.profile = match profile.as_str() {
            "sine" => ProfileShape::Sine,
            "bump" => ProfileShape::Bump,
            "random" => ProfileShape::Random { seed: seed.unwrap_or(0) },
            other => return Err(Error::config(format!("unknown profile {other:?}"))),
        };
        self.finish()
    }

    fn set(
        &mut self,
        key: &str,
        value: &str,
        base: Option<&Path>,
        seed: &mut Option<u64>,
        profile: &mut String,
    ) -> Result<()> {
        let cfg = &mut self.config;
        match key {
            "L" => cfg.length = parse_f64(key, value)?,
            "N" => cfg.n = parse_usize(key, value)?,
            "theta" => cfg.theta = parse_f64(key, value)?,
            "dt_over_dx" => cfg.dt_over_dx = parse_f64(key, value)?,
            "ki" => cfg.ki = parse_f64(key, value)?,
            "y_r" => cfg.y_r = parse_f64(key, value)?,
            "w_o" => cfg.w_o = parse_f64(key, value)?,
            "w_c" => cfg.w_c = parse_f64(key, value)?,
            "flux" => cfg.flux = parse_flux(value, base)?,
            "T" => self.horizon = parse_f64(key, value)?,
            "amplitude" => self.amplitude = parse_f64(key, value)?,
            "profile" => *profile = value.to_string(),
            "seed" => *seed = Some(parse_usize(key, value)? as u64),
            "stride" => self.stride = parse_usize(key, value)?,
            other => return Err(Error::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        self.config.validate()?;
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::config(format!("T must be positive, got {}", self.horizon)));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::config("amplitude must be finite"));
        }
        if self.stride == 0 {
            return Err(Error::config("stride must be at least 1"));
        }
        // the flux working interval follows the reference state
        if !self.config.flux.is_linear() {
            self.config.center_flux_interval()?;
        }
        Ok(())
    }

    /// Serializes every setting; `parse(to_text())` reproduces the spec.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let _ = writeln!(out, "L = {}", c.length);
        let _ = writeln!(out, "N = {}", c.n);
        let _ = writeln!(out, "theta = {}", c.theta);
        let _ = writeln!(out, "dt_over_dx = {}", c.dt_over_dx);
        let _ = writeln!(out, "ki = {}", c.ki);
        let _ = writeln!(out, "y_r = {}", c.y_r);
        let _ = writeln!(out, "w_o = {}", c.w_o);
        let _ = writeln!(out, "w_c = {}", c.w_c);
        let _ = writeln!(out, "flux = {}", c.flux);
        let _ = writeln!(out, "T = {}", self.horizon);
        let _ = writeln!(out, "amplitude = {}", self.amplitude);
        let _ = writeln!(out, "profile = {}", profile_name(self.profile));
        if let ProfileShape::Random { seed } = self.profile {
            let _ = writeln!(out, "seed = {seed}");
        }
        let _ = writeln!(out, "stride = {}", self.stride);
        out
    }
}

/// Numeric table with a header row. Values are written with 17 significant
/// digits so that parsing and re-emitting reproduces the text exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.header.iter().position(|h| h == name).map(|k| self.column(k))
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format_value(*v)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::config("empty CSV"))?
            .split(',')
            .map(|s| s.trim().to_string())
            .collect();
        let rows = lines
            .enumerate()
            .map(|(k, line)| {
                let row: Vec<f64> = line
                    .split(',')
                    .map(|c| parse_f64(&format!("row {}", k + 1), c.trim()))
                    .collect::<Result<_>>()?;
                if row.len() != header.len() {
                    return Err(Error::config(format!(
                        "row {} has {} cells, header has {}",
                        k + 1,
                        row.len(),
                        header.len()
                    )));
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }
}

pub fn write_csv(path: &Path, table: &Table) -> Result<()> {
    write_text(path, &table.to_csv())
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Table::parse(&text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_text_round_trip() {
        let text = "# benchmark with a gain change\nki = 0.005\nT = 100\nprofile = random\nseed = 9\n";
        let spec = RunSpec::parse(text, None).unwrap();
        assert_eq!(spec.config.ki, 0.005);
        assert_eq!(spec.profile, ProfileShape::Random { seed: 9 });
        let again = RunSpec::parse(&spec.to_text(), None).unwrap();
        assert_eq!(again.to_text(), spec.to_text());
        assert_eq!(again.config.flux.interval(), spec.config.flux.interval());
    }

    #[test]
    fn linear_flux_spec() {
        let spec = RunSpec::parse("flux = linear(r=2)\nL = 1\nN = 40\nki = 0.3\n", None).unwrap();
        assert!(spec.config.flux.is_linear());
        assert_eq!(spec.config.flux.eval(0.0), 2.0);
        assert!(spec.to_text().contains("flux = linear(r=2)"));
    }

    #[test]
    fn bad_specs_are_config_errors() {
        for text in ["bogus = 1", "N = -3", "ki = x", "theta = 0.2", "T = 0", "flux = cubic(c=1)", "noequals"] {
            match RunSpec::parse(text, None) {
                Err(e) => assert_eq!(e.exit_code(), 2, "{text}"),
                Ok(_) => panic!("{text} should fail"),
            }
        }
    }

    #[test]
    fn table_round_trip() {
        let mut t = Table::new(&["t", "y"]);
        t.push(vec![0.1, 1.0 / 3.0]);
        t.push(vec![-2.5e-300, f64::MAX]);
        let csv = t.to_csv();
        let back = Table::parse(&csv).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), csv);
    }

    #[test]
    fn ragged_csv_is_rejected() {
        assert!(Table::parse("a,b\n1,2\n3\n").is_err());
        assert!(Table::parse("").is_err());
    }
}
