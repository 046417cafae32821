//! Convergence studies of the final macro value `U_M` along one parameter axis.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::growth::{run_multiscale, MacroState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Micro step `dt`.
    MicroStep,
    /// Macro step `dT`.
    MacroStep,
    Epsilon,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::MicroStep => "dt",
            Axis::MacroStep => "dT",
            Axis::Epsilon => "eps",
        }
    }

    /// Current value of this axis in `config`.
    pub fn value(self, config: &SimConfig) -> f64 {
        match self {
            Axis::MicroStep => config.growth.dt(),
            Axis::MacroStep => config.growth.macro_step,
            Axis::Epsilon => config.growth.epsilon,
        }
    }

    /// Copy of `config` with this axis set to `value`.
    pub fn apply(self, config: &SimConfig, value: f64) -> Result<SimConfig> {
        let mut c = config.clone();
        match self {
            Axis::MicroStep => {
                let steps = (1.0 / value).round();
                if !(value > 0.0) || steps < 1.0 || (steps * value - 1.0).abs() > 1e-9 {
                    return Err(SimError::InvalidParameter(format!(
                        "micro step {value} is not 1/N for an integer N"
                    )));
                }
                c.growth.steps_per_period = steps as usize;
            }
            Axis::MacroStep => c.growth.macro_step = value,
            Axis::Epsilon => c.growth.epsilon = value,
        }
        c.validate()?;
        Ok(c)
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "dt" => Ok(Axis::MicroStep),
            "dT" => Ok(Axis::MacroStep),
            "eps" | "epsilon" => Ok(Axis::Epsilon),
            other => Err(format!("unknown axis '{other}' (expected dt, dT or eps)")),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub value: f64,
    pub u: f64,
    pub u_ref: f64,
    pub error: f64,
    /// `None` on the first row.
    pub order: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub axis: Axis,
    /// Sorted by decreasing parameter value.
    pub rows: Vec<ReportRow>,
    pub reference: String,
    /// Every cell of the study, rows first and then the reference runs.
    pub runs: Vec<CellRun>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellRun {
    pub label: String,
    pub config: SimConfig,
    pub state: MacroState,
    pub seconds: f64,
}

/// Observed order between two successive rows.
pub fn observed_order(coarse: (f64, f64), fine: (f64, f64)) -> f64 {
    (coarse.1 / fine.1).log2() / (coarse.0 / fine.0).log2()
}

impl ConvergenceReport {
    pub fn orders(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.order).collect()
    }

    /// Columns `value,U,U_ref,error,order,seconds`; the first order is empty.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "{},U,U_ref,error,order,seconds", self.axis.name())?;
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:e}")).unwrap_or_default();
            writeln!(
                w,
                "{:e},{:e},{:e},{:e},{},{:e}",
                r.value, r.u, r.u_ref, r.error, order, r.seconds
            )?;
        }
        Ok(())
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "axis: {}", self.axis.name());
        let _ = writeln!(s, "reference: {}", self.reference);
        let _ = writeln!(
            s,
            "{:>12}  {:>14}  {:>12}  {:>6}  {:>10}",
            self.axis.name(),
            "U",
            "error",
            "order",
            "seconds"
        );
        for r in &self.rows {
            let order = r.order.map(|o| format!("{o:.2}")).unwrap_or_default();
            let _ = writeln!(
                s,
                "{:>12.6e}  {:>14.8e}  {:>12.4e}  {:>6}  {:>10.2}",
                r.value, r.u, r.error, order, r.seconds
            );
        }
        s
    }

    /// Writes `report.csv` and `report.txt` into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut csv = Vec::new();
        self.write_csv(&mut csv)?;
        fs::write(dir.join("report.csv"), csv)?;
        fs::write(dir.join("report.txt"), self.to_table())?;
        Ok(())
    }
}

struct Cell {
    label: String,
    config: SimConfig,
}

fn run_cell(cell: &Cell, out: Option<&Path>) -> Result<CellRun> {
    let wrap = |e: SimError| SimError::AtStudyCell {
        cell: cell.label.clone(),
        source: Box::new(e),
    };
    let started = Instant::now();
    let state = run_multiscale(&cell.config).map_err(wrap)?;
    let seconds = started.elapsed().as_secs_f64();
    if let Some(dir) = out {
        let dir = dir.join(&cell.label);
        fs::create_dir_all(&dir).map_err(|e| wrap(e.into()))?;
        let mut buf = Vec::new();
        state
            .write_history_csv(&mut buf, cell.config.growth.u0)
            .map_err(|e| wrap(e.into()))?;
        fs::write(dir.join("history.csv"), buf).map_err(|e| wrap(e.into()))?;
    }
    Ok(CellRun {
        label: cell.label.clone(),
        config: cell.config.clone(),
        state,
        seconds,
    })
}

fn label(axis: Axis, value: f64, reference: bool) -> String {
    let tag = if reference { "ref_" } else { "" };
    format!("{tag}{}_{value:e}", axis.name())
}

#[derive(Clone, Debug, Default)]
pub struct StudyOptions {
    /// Worker threads; `None` or 1 runs the cells in order.
    pub threads: Option<usize>,
    /// Per-cell `history.csv` files go to `<out>/<cell>/`.
    pub out: Option<PathBuf>,
    /// On the `eps` axis, set `T = eps_base * T_base / eps` in every cell so
    /// the growth `eps * T` stays that of `base`.
    pub hold_growth: bool,
}

fn with_growth(config: &SimConfig, eps_t: f64) -> Result<SimConfig> {
    let mut c = config.clone();
    let dt_macro = c.growth.macro_step;
    let mut t = eps_t / c.growth.epsilon;
    let k = (t / dt_macro).round();
    if (k * dt_macro - t).abs() <= 1e-9 * t {
        t = k * dt_macro;
    }
    c.growth.horizon = t;
    c.validate()?;
    Ok(c)
}

/// Runs the multiscale loop once per value and against `reference`.
///
/// On the `dt` and `dT` axes a single reference run is shared. On the `eps`
/// axis the reference keeps its own `dt` and `dT` but takes each row's
/// `epsilon`, so every row has its own reference run.
pub fn convergence_study(
    base: &SimConfig,
    axis: Axis,
    values: &[f64],
    reference: &SimConfig,
    options: &StudyOptions,
) -> Result<ConvergenceReport> {
    if values.is_empty() {
        return Err(SimError::InvalidParameter("no study values".into()));
    }
    if values.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(SimError::InvalidParameter(format!(
            "study values must be strictly decreasing: {values:?}"
        )));
    }
    let hold = options.hold_growth && axis == Axis::Epsilon;
    let eps_t = base.growth.epsilon * base.growth.horizon;
    let configure = |config: &SimConfig, v: f64| -> Result<SimConfig> {
        let c = axis.apply(config, v)?;
        if hold {
            with_growth(&c, eps_t)
        } else {
            Ok(c)
        }
    };
    let mut cells: Vec<Cell> = values
        .iter()
        .map(|&v| {
            Ok(Cell {
                label: label(axis, v, false),
                config: configure(base, v)?,
            })
        })
        .collect::<Result<_>>()?;
    let description;
    match axis {
        Axis::MicroStep | Axis::MacroStep => {
            let r = axis.value(reference);
            let smallest = values[values.len() - 1];
            if !(r < smallest) {
                return Err(SimError::InvalidParameter(format!(
                    "reference {axis} = {r} is not finer than {smallest}"
                )));
            }
            reference.validate()?;
            description = format!(
                "dt = 1/{}, dT = {:e}, eps = {:e}",
                reference.growth.steps_per_period,
                reference.growth.macro_step,
                reference.growth.epsilon
            );
            cells.push(Cell {
                label: label(axis, r, true),
                config: reference.clone(),
            });
        }
        Axis::Epsilon => {
            let (rg, bg) = (&reference.growth, &base.growth);
            let finer = rg.macro_step <= bg.macro_step
                && rg.steps_per_period >= bg.steps_per_period
                && (rg.macro_step < bg.macro_step || rg.steps_per_period > bg.steps_per_period);
            if !finer {
                return Err(SimError::InvalidParameter(format!(
                    "reference (dt = 1/{}, dT = {}) is not finer than the base (dt = 1/{}, dT = {})",
                    rg.steps_per_period, rg.macro_step, bg.steps_per_period, bg.macro_step
                )));
            }
            description = format!(
                "eps-matched, dt = 1/{}, dT = {:e}{}",
                rg.steps_per_period,
                rg.macro_step,
                if hold {
                    format!(", eps*T = {eps_t:e}")
                } else {
                    String::new()
                }
            );
            for &v in values {
                cells.push(Cell {
                    label: label(axis, v, true),
                    config: configure(reference, v)?,
                });
            }
        }
    }

    let out = options.out.as_deref();
    let results: Vec<CellRun> = match options.threads {
        Some(n) if n > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| SimError::InvalidParameter(format!("thread pool: {e}")))?;
            pool.install(|| {
                cells
                    .par_iter()
                    .map(|c| run_cell(c, out))
                    .collect::<Result<_>>()
            })?
        }
        _ => cells
            .iter()
            .map(|c| run_cell(c, out))
            .collect::<Result<_>>()?,
    };

    let k = values.len();
    let mut rows: Vec<ReportRow> = Vec::with_capacity(k);
    for (i, &value) in values.iter().enumerate() {
        let u_ref = match axis {
            Axis::Epsilon => results[k + i].state.u,
            _ => results[k].state.u,
        };
        let u = results[i].state.u;
        let error = (u - u_ref).abs();
        let order = rows
            .last()
            .map(|p: &ReportRow| observed_order((p.value, p.error), (value, error)));
        rows.push(ReportRow {
            value,
            u,
            u_ref,
            error,
            order,
            seconds: results[i].seconds,
        });
    }
    Ok(ConvergenceReport {
        axis,
        rows,
        reference: description,
        runs: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_flow() -> SimConfig {
        let mut c = SimConfig::default();
        c.geometry.nx = 4;
        c.geometry.ny = 1;
        c.flow.amplitude = 0.0;
        c.growth.epsilon = 1e-2;
        c.growth.horizon = 80.0;
        c.growth.macro_step = 20.0;
        c.growth.steps_per_period = 4;
        c
    }

    #[test]
    fn axis_names_round_trip() {
        for a in [Axis::MicroStep, Axis::MacroStep, Axis::Epsilon] {
            assert_eq!(a.name().parse::<Axis>().unwrap(), a);
        }
        assert!("dx".parse::<Axis>().is_err());
    }

    #[test]
    fn micro_step_must_be_a_unit_fraction() {
        let c = zero_flow();
        assert_eq!(
            Axis::MicroStep
                .apply(&c, 0.125)
                .unwrap()
                .growth
                .steps_per_period,
            8
        );
        assert!(Axis::MicroStep.apply(&c, 0.3).is_err());
    }

    #[test]
    fn halving_gives_log2_ratio() {
        assert_eq!(observed_order((0.5, 8.0), (0.25, 2.0)), 2.0);
        assert_eq!(observed_order((800.0, 1.0), (400.0, 0.5)), 1.0);
    }

    #[test]
    fn macro_step_study_on_the_scalar_law() {
        // Zero flow reduces the loop to explicit Euler for u' = eps / (1 + u).
        let base = zero_flow();
        let mut reference = base.clone();
        reference.growth.macro_step = 1.25;
        let report = convergence_study(
            &base,
            Axis::MacroStep,
            &[20.0, 10.0, 5.0],
            &reference,
            &StudyOptions::default(),
        )
        .unwrap();
        let scalar = |dt_macro: f64| {
            let mut u = 0.0;
            for _ in 0..(80.0 / dt_macro) as usize {
                u += dt_macro * 1e-2 / (1.0 + u);
            }
            u
        };
        assert_eq!(report.rows.len(), 3);
        assert!(report.rows[0].order.is_none());
        for row in &report.rows {
            assert!((row.u - scalar(row.value)).abs() < 1e-13);
            assert!((row.u_ref - scalar(1.25)).abs() < 1e-13);
            assert_eq!(row.error, (row.u - row.u_ref).abs());
        }
        for o in report.orders() {
            assert!((o - 1.0).abs() < 0.3, "{o}");
        }
    }

    #[test]
    fn held_growth_scales_the_horizon() {
        let base = zero_flow();
        let mut reference = base.clone();
        reference.growth.macro_step = 5.0;
        let options = StudyOptions {
            hold_growth: true,
            ..StudyOptions::default()
        };
        let report = convergence_study(
            &base,
            Axis::Epsilon,
            &[1e-2, 5e-3, 2.5e-3],
            &reference,
            &options,
        )
        .unwrap();
        assert_eq!(report.runs.len(), 6);
        for run in &report.runs {
            let g = &run.config.growth;
            assert!((g.epsilon * g.horizon - 0.8).abs() < 1e-12);
            assert_eq!(run.state.time, g.horizon);
        }
        // With eps * T fixed the macro error is proportional to eps.
        for o in report.orders() {
            assert!((o - 1.0).abs() < 0.15, "{o}");
        }
    }

    #[test]
    fn rejects_unordered_values_and_coarse_reference() {
        let base = zero_flow();
        let opts = StudyOptions::default();
        assert!(convergence_study(&base, Axis::MacroStep, &[10.0, 20.0], &base, &opts).is_err());
        assert!(convergence_study(&base, Axis::MacroStep, &[40.0, 20.0], &base, &opts).is_err());
        assert!(convergence_study(&base, Axis::Epsilon, &[2e-2, 1e-2], &base, &opts).is_err());
    }

    #[test]
    fn csv_orders_are_recomputable() {
        let report = ConvergenceReport {
            axis: Axis::MacroStep,
            rows: vec![
                ReportRow {
                    value: 8.0,
                    u: 1.0,
                    u_ref: 1.3,
                    error: 0.3,
                    order: None,
                    seconds: 0.0,
                },
                ReportRow {
                    value: 4.0,
                    u: 1.2,
                    u_ref: 1.3,
                    error: 0.1,
                    order: Some(observed_order((8.0, 0.3), (4.0, 0.1))),
                    seconds: 0.0,
                },
            ],
            reference: String::new(),
            runs: Vec::new(),
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<Vec<&str>> = text
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect())
            .collect();
        let e0: f64 = lines[0][3].parse().unwrap();
        let e1: f64 = lines[1][3].parse().unwrap();
        let order: f64 = lines[1][4].parse().unwrap();
        assert_eq!(order, (e0 / e1).log2());
    }
}
