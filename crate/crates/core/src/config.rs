//! Flat `key = value` run configuration.
//!
//! ```text
//! # scaled regime
//! epsilon = 2e-3
//! T = 4800
//! dT = 50
//! dt = 1/32
//! ```
//!
//! Missing keys keep their defaults; unknown keys are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::error::{Result, SimError};
use crate::fem::{BoundarySpec, FlowParams, InflowProfile, PicardSettings, Pulse};
use crate::growth::GrowthParams;
use crate::mesh::{check_pinch, ShapeFunction};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("invalid configuration: {0}")]
    InvariantViolation(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub a: f64,
    pub b: f64,
    pub nx: usize,
    pub ny: usize,
    pub shape: ShapeFunction,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry {
            a: 5.0,
            b: 2.0,
            nx: 71,
            ny: 3,
            shape: ShapeFunction::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowSettings {
    pub rho: f64,
    pub nu: f64,
    pub amplitude: f64,
    pub pulse: Pulse,
    pub bc: BoundarySpec,
    /// Outflow backflow stabilization weight (0 = plain do-nothing).
    pub backflow: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        FlowSettings {
            rho: 1.0,
            nu: 0.04,
            amplitude: 20.0,
            pulse: Pulse::SinSquared,
            bc: BoundarySpec::Channel,
            backflow: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverSettings {
    pub tau: f64,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub anderson_depth: usize,
    /// Picard iterations before Newton may take over; 0 disables Newton.
    pub newton_after: usize,
    pub max_cycles: usize,
    pub verify_periodicity: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            tau: 1e-6,
            picard_tol: 1e-9,
            picard_max_iter: 50,
            anderson_depth: 5,
            newton_after: 10,
            max_cycles: 500,
            verify_periodicity: false,
        }
    }
}

impl SolverSettings {
    pub fn picard(&self) -> PicardSettings {
        PicardSettings {
            tolerance: self.picard_tol,
            max_iterations: self.picard_max_iter,
            anderson_depth: self.anderson_depth,
            newton_after: (self.newton_after > 0).then_some(self.newton_after),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputSettings {
    pub out: PathBuf,
    /// Macro times at which the CLI writes flow snapshots.
    pub snapshot_times: Vec<f64>,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            out: PathBuf::from("out"),
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimConfig {
    pub geometry: Geometry,
    pub flow: FlowSettings,
    pub growth: GrowthParams,
    pub solver: SolverSettings,
    pub output: OutputSettings,
}

impl SimConfig {
    pub fn flow_params(&self) -> FlowParams {
        FlowParams {
            rho: self.flow.rho,
            nu: self.flow.nu,
            inflow: InflowProfile {
                amplitude: self.flow.amplitude,
                half_height: self.geometry.b,
                pulse: self.flow.pulse,
            },
            body_force: None,
            backflow: self.flow.backflow,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidParameter(m));
        let g = &self.geometry;
        if !(g.a > 0.0 && g.b > 0.0 && g.a.is_finite() && g.b.is_finite()) {
            return bad(format!("a and b must be positive (a={}, b={})", g.a, g.b));
        }
        if g.nx == 0 || g.ny == 0 {
            return bad(format!("nx and ny must be >= 1 (nx={}, ny={})", g.nx, g.ny));
        }
        match g.shape {
            ShapeFunction::Gaussian { width: w }
            | ShapeFunction::RaisedCosine { half_width: w }
                if !(w > 0.0) =>
            {
                return bad(format!("shape width must be positive, got {w}"));
            }
            _ => {}
        }
        self.flow_params().validate()?;
        if !self.flow.amplitude.is_finite() {
            return bad("amplitude must be finite".into());
        }
        self.growth.validate()?;
        let s = &self.solver;
        if !(s.tau > 0.0) || !(s.picard_tol > 0.0) || s.picard_max_iter == 0 || s.max_cycles == 0 {
            return bad(format!(
                "need tau > 0, picard_tol > 0, picard_max_iter >= 1, max_cycles >= 1 (tau={}, picard_tol={}, picard_max_iter={}, max_cycles={})",
                s.tau, s.picard_tol, s.picard_max_iter, s.max_cycles
            ));
        }
        if self.output.snapshot_times.iter().any(|t| !(*t >= 0.0)) {
            return bad("snapshot times must be >= 0".into());
        }
        check_pinch(self.growth.u0, &g.shape, g.a, g.b)
    }

    /// Serializes every key so that `parse_config` reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let g = &self.geometry;
        let _ = writeln!(
            s,
            "a = {:e}\nb = {:e}\nnx = {}\nny = {}",
            g.a, g.b, g.nx, g.ny
        );
        match g.shape {
            ShapeFunction::Gaussian { width } => {
                let _ = writeln!(s, "shape = gaussian\nshape_width = {width:e}");
            }
            ShapeFunction::RaisedCosine { half_width } => {
                let _ = writeln!(s, "shape = cosine\nshape_width = {half_width:e}");
            }
        }
        let f = &self.flow;
        let pulse = match f.pulse {
            Pulse::SinSquared => "sin2",
            Pulse::Constant => "constant",
        };
        let bc = match f.bc {
            BoundarySpec::Channel => "channel",
            BoundarySpec::Enclosed => "enclosed",
        };
        let _ = writeln!(
            s,
            "rho = {:e}\nnu = {:e}\namplitude = {:e}\npulse = {pulse}\nbc = {bc}\nbackflow = {:e}",
            f.rho, f.nu, f.amplitude, f.backflow
        );
        let gr = &self.growth;
        let _ = writeln!(
            s,
            "epsilon = {:e}\nsigma0 = {:e}\ndT = {:e}\ndt = 1/{}\nT = {:e}\nu0 = {:e}",
            gr.epsilon, gr.sigma0, gr.macro_step, gr.steps_per_period, gr.horizon, gr.u0
        );
        let so = &self.solver;
        let _ = writeln!(
            s,
            "tau = {:e}\npicard_tol = {:e}\npicard_max_iter = {}\nanderson_depth = {}\nnewton_after = {}\nmax_cycles = {}\nverify_periodicity = {}",
            so.tau, so.picard_tol, so.picard_max_iter, so.anderson_depth, so.newton_after, so.max_cycles, so.verify_periodicity
        );
        let _ = writeln!(s, "out = {}", self.output.out.display());
        if !self.output.snapshot_times.is_empty() {
            let times: Vec<String> = self
                .output
                .snapshot_times
                .iter()
                .map(|t| format!("{t:e}"))
                .collect();
            let _ = writeln!(s, "snapshot_times = {}", times.join(","));
        }
        s
    }
}

fn parse_f64(line: usize, key: &str, value: &str) -> std::result::Result<f64, ConfigError> {
    value.parse::<f64>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("{key}: expected a number, got '{value}'"),
    })
}

fn parse_usize(line: usize, key: &str, value: &str) -> std::result::Result<usize, ConfigError> {
    value.parse::<usize>().map_err(|_| ConfigError::Parse {
        line,
        message: format!("{key}: expected a non-negative integer, got '{value}'"),
    })
}

/// Accepts `0.03125` or `1/32`.
fn parse_step(line: usize, value: &str) -> std::result::Result<f64, ConfigError> {
    match value.split_once('/') {
        Some((num, den)) => {
            Ok(parse_f64(line, "dt", num.trim())? / parse_f64(line, "dt", den.trim())?)
        }
        None => parse_f64(line, "dt", value),
    }
}

/// `N = 1 / dt` when it is an integer.
pub fn steps_per_period(dt: f64) -> Option<usize> {
    if !(dt > 0.0 && dt <= 1.0) {
        return None;
    }
    let n = (1.0 / dt).round();
    ((n * dt - 1.0).abs() <= 1e-12).then_some(n as usize)
}

pub fn parse_config(text: &str) -> std::result::Result<SimConfig, ConfigError> {
    let mut c = SimConfig::default();
    let mut shape_kind: Option<String> = None;
    let mut shape_width: Option<f64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| ConfigError::Parse {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
        if value.is_empty() && key != "snapshot_times" {
            return Err(ConfigError::Parse {
                line,
                message: format!("{key}: missing value"),
            });
        }
        let num = |v: &str| parse_f64(line, key, v);
        match key {
            "a" => c.geometry.a = num(value)?,
            "b" => c.geometry.b = num(value)?,
            "nx" => c.geometry.nx = parse_usize(line, key, value)?,
            "ny" => c.geometry.ny = parse_usize(line, key, value)?,
            "shape" => shape_kind = Some(value.to_ascii_lowercase()),
            "shape_width" => shape_width = Some(num(value)?),
            "rho" => c.flow.rho = num(value)?,
            "nu" => c.flow.nu = num(value)?,
            "amplitude" => c.flow.amplitude = num(value)?,
            "backflow" => c.flow.backflow = num(value)?,
            "pulse" => {
                c.flow.pulse = match value {
                    "sin2" => Pulse::SinSquared,
                    "constant" => Pulse::Constant,
                    _ => {
                        return Err(ConfigError::Parse {
                            line,
                            message: format!("pulse: expected sin2 or constant, got '{value}'"),
                        })
                    }
                }
            }
            "bc" => {
                c.flow.bc = match value {
                    "channel" => BoundarySpec::Channel,
                    "enclosed" => BoundarySpec::Enclosed,
                    _ => {
                        return Err(ConfigError::Parse {
                            line,
                            message: format!("bc: expected channel or enclosed, got '{value}'"),
                        })
                    }
                }
            }
            "epsilon" => c.growth.epsilon = num(value)?,
            "sigma0" => c.growth.sigma0 = num(value)?,
            "dT" => c.growth.macro_step = num(value)?,
            "dt" => {
                let dt = parse_step(line, value)?;
                c.growth.steps_per_period = steps_per_period(dt).ok_or_else(|| {
                    ConfigError::InvariantViolation(format!(
                        "dt = {value}: 1/dt must be a positive integer"
                    ))
                })?;
            }
            "T" => c.growth.horizon = num(value)?,
            "u0" => c.growth.u0 = num(value)?,
            "tau" => c.solver.tau = num(value)?,
            "picard_tol" => c.solver.picard_tol = num(value)?,
            "picard_max_iter" => c.solver.picard_max_iter = parse_usize(line, key, value)?,
            "anderson_depth" => c.solver.anderson_depth = parse_usize(line, key, value)?,
            "newton_after" => c.solver.newton_after = parse_usize(line, key, value)?,
            "max_cycles" => c.solver.max_cycles = parse_usize(line, key, value)?,
            "verify_periodicity" => {
                c.solver.verify_periodicity =
                    value.parse::<bool>().map_err(|_| ConfigError::Parse {
                        line,
                        message: format!("{key}: expected true or false"),
                    })?
            }
            "out" => c.output.out = PathBuf::from(value),
            "snapshot_times" => {
                c.output.snapshot_times = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(num)
                    .collect::<std::result::Result<_, _>>()?
            }
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        }
    }
    c.geometry.shape = match shape_kind.as_deref() {
        None | Some("gaussian") => ShapeFunction::Gaussian {
            width: shape_width.unwrap_or(1.0),
        },
        Some("cosine") => ShapeFunction::RaisedCosine {
            half_width: shape_width.unwrap_or(2.0),
        },
        Some(other) => {
            return Err(ConfigError::InvariantViolation(format!(
                "shape must be gaussian or cosine, got '{other}'"
            )))
        }
    };
    c.validate()
        .map_err(|e| ConfigError::InvariantViolation(e.to_string()))?;
    Ok(c)
}

pub fn load_config(path: &Path) -> std::result::Result<SimConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c, SimConfig::default());
        assert_eq!(c.geometry.a, 5.0);
        assert_eq!(c.geometry.b, 2.0);
        assert_eq!(c.flow.rho, 1.0);
        assert_eq!(c.flow.nu, 0.04);
        assert_eq!(c.flow.amplitude, 20.0);
        assert_eq!(c.growth.sigma0, 30.0);
        assert_eq!(c.growth.u0, 0.0);
        assert_eq!(c.growth.epsilon, 2e-4);
        assert_eq!(c.growth.horizon, 4.8e4);
        assert_eq!(c.growth.steps_per_period, 32);
    }

    #[test]
    fn single_override() {
        let c = parse_config("epsilon = 1e-4  # smaller\n").unwrap();
        let mut d = SimConfig::default();
        d.growth.epsilon = 1e-4;
        assert_eq!(c, d);
    }

    #[test]
    fn micro_step_must_divide_the_period() {
        assert!(matches!(
            parse_config("dt = 0.3"),
            Err(ConfigError::InvariantViolation(_))
        ));
        assert_eq!(
            parse_config("dt = 1/128").unwrap().growth.steps_per_period,
            128
        );
        assert_eq!(
            parse_config("dt = 0.05").unwrap().growth.steps_per_period,
            20
        );
    }

    #[test]
    fn errors_carry_lines() {
        assert_eq!(
            parse_config("# c\nfoo = 1"),
            Err(ConfigError::UnknownKey {
                line: 2,
                key: "foo".into()
            })
        );
        assert!(matches!(
            parse_config("\n\nnu 0.1"),
            Err(ConfigError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_config("nu = abc"),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_config("nu = -1"),
            Err(ConfigError::InvariantViolation(_))
        ));
        assert!(matches!(
            parse_config("u0 = 3"),
            Err(ConfigError::InvariantViolation(_))
        ));
    }

    #[test]
    fn round_trip() {
        let text = "nx = 20\nny = 2\nshape = cosine\nshape_width = 1.5\npulse = constant\nbc = enclosed\n\
                    dt = 1/8\nT = 100\ndT = 12.5\nverify_periodicity = true\nsnapshot_times = 0, 50\nout = x/y";
        let c = parse_config(text).unwrap();
        assert_eq!(
            c.geometry.shape,
            ShapeFunction::RaisedCosine { half_width: 1.5 }
        );
        assert_eq!(c.output.snapshot_times, vec![0.0, 50.0]);
        assert_eq!(parse_config(&c.to_config_string()).unwrap(), c);
    }
}
