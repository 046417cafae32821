//! Plaque growth: wall shear stress, the reaction law, the macro step and
//! the two temporal drivers (multiscale and fully resolved).

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::config::SimConfig;
use crate::error::{Result, SimError};
use crate::fem::basis::EDGE_GAUSS;
use crate::fem::{FlowField, FlowParams, FunctionSpace, MicroSolver};
use crate::mesh::{build_reference_mesh, check_pinch, deform_mesh, wall_edges, Mesh};
use crate::periodic::{warm_start_on, PeriodicSolver, PeriodicTrajectory, SolveStats};

/// Growth-law and time-stepping parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthParams {
    pub epsilon: f64,
    pub sigma0: f64,
    /// Macro step `dT` in periods.
    pub macro_step: f64,
    /// `N = 1 / dt`.
    pub steps_per_period: usize,
    /// Horizon `T` in periods.
    pub horizon: f64,
    pub u0: f64,
}

impl Default for GrowthParams {
    fn default() -> Self {
        GrowthParams {
            epsilon: 2e-4,
            sigma0: 30.0,
            macro_step: 2000.0,
            steps_per_period: 32,
            horizon: 4.8e4,
            u0: 0.0,
        }
    }
}

impl GrowthParams {
    pub fn dt(&self) -> f64 {
        1.0 / self.steps_per_period as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SimError::InvalidParameter(m));
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return bad(format!("sigma0 must be > 0, got {}", self.sigma0));
        }
        if !(self.macro_step >= 1.0 && self.macro_step.is_finite()) {
            return bad(format!("dT must be >= 1, got {}", self.macro_step));
        }
        if self.steps_per_period == 0 {
            return bad("steps per period must be >= 1".into());
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad(format!("T must be > 0, got {}", self.horizon));
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return Err(SimError::NegativeConcentration(self.u0));
        }
        Ok(())
    }

    /// Macro step sizes covering `[0, T]`; a trailing partial step carries
    /// the remainder when `T` is not a multiple of `dT`.
    pub fn macro_schedule(&self) -> Vec<f64> {
        let ratio = self.horizon / self.macro_step;
        let nearest = ratio.round();
        if (ratio - nearest).abs() <= 1e-9 * ratio.max(1.0) {
            return vec![self.macro_step; nearest.max(1.0) as usize];
        }
        let full = ratio.floor() as usize;
        let mut steps = vec![self.macro_step; full];
        steps.push(self.horizon - full as f64 * self.macro_step);
        steps
    }
}

/// Normalized wall shear stress vector of `v` over both walls.
pub fn wall_shear_stress(v: &FlowField, params: &FlowParams, sigma0: f64) -> [f64; 2] {
    let space = v.space();
    let mesh = space.mesh();
    let scale = params.rho * params.nu / sigma0;
    let mut total = [0.0; 2];
    for edge in wall_edges(mesh) {
        let tri = mesh.triangles()[edge.triangle];
        let lp = tri
            .iter()
            .position(|&k| k == edge.vertices[0])
            .expect("edge vertex in triangle");
        let lq = tri
            .iter()
            .position(|&k| k == edge.vertices[1])
            .expect("edge vertex in triangle");
        let n = edge.normal;
        for &(s, w) in &EDGE_GAUSS {
            let mut l = [0.0; 3];
            l[lp] = 1.0 - s;
            l[lq] = s;
            let g = space.velocity_gradient(v.velocity(), edge.triangle, l);
            let sn = [
                2.0 * g[0][0] * n[0] + (g[0][1] + g[1][0]) * n[1],
                (g[1][0] + g[0][1]) * n[0] + 2.0 * g[1][1] * n[1],
            ];
            let nsn = n[0] * sn[0] + n[1] * sn[1];
            let weight = w * edge.length;
            total[0] += weight * (sn[0] - nsn * n[0]);
            total[1] += weight * (sn[1] - nsn * n[1]);
        }
    }
    [scale * total[0], scale * total[1]]
}

/// `R = (1 + u)^-1 (1 + |sigma|^2)^-1`.
pub fn reaction(sigma: [f64; 2], u: f64) -> Result<f64> {
    if !(u >= 0.0) {
        return Err(SimError::NegativeConcentration(u));
    }
    let s2 = sigma[0] * sigma[0] + sigma[1] * sigma[1];
    Ok(1.0 / (1.0 + u) * (1.0 / (1.0 + s2)))
}

fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

/// Reaction values at the trajectory samples `1..=N`.
pub fn reaction_samples(
    traj: &PeriodicTrajectory,
    u: f64,
    params: &FlowParams,
    sigma0: f64,
) -> Result<Vec<f64>> {
    traj.fields()[1..]
        .iter()
        .map(|f| reaction(wall_shear_stress(f, params, sigma0), u))
        .collect()
}

/// `dt * sum_{n=1}^{N} R(v_n, U)`.
pub fn period_averaged_reaction(
    traj: &PeriodicTrajectory,
    u: f64,
    params: &FlowParams,
    sigma0: f64,
) -> Result<f64> {
    Ok(traj.dt() * pairwise_sum(&reaction_samples(traj, u, params, sigma0)?))
}

/// Solver diagnostics attached to a macro step of the multiscale loop.
#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub residual: f64,
    pub cycles: usize,
    pub seconds: f64,
    pub verification_drift: Option<f64>,
    pub solve: SolveStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroRecord {
    pub m: usize,
    /// `T_m`.
    pub time: f64,
    /// `U_m`.
    pub u: f64,
    /// `R_{m-1}`.
    pub r_avg: f64,
    pub diagnostics: Option<StepDiagnostics>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacroState {
    pub u: f64,
    pub time: f64,
    pub history: Vec<MacroRecord>,
}

impl MacroState {
    pub fn new(u0: f64) -> Self {
        MacroState {
            u: u0,
            time: 0.0,
            history: Vec::new(),
        }
    }

    pub fn steps(&self) -> usize {
        self.history.len()
    }

    /// Writes `m,T,U,R_avg,residual,cycles,seconds`, starting with the `m = 0` row.
    pub fn write_history_csv<W: Write>(&self, w: &mut W, u0: f64) -> std::io::Result<()> {
        writeln!(w, "m,T,U,R_avg,residual,cycles,seconds")?;
        writeln!(w, "0,0e0,{:e},,,,", u0)?;
        for r in &self.history {
            match &r.diagnostics {
                Some(d) => writeln!(
                    w,
                    "{},{:e},{:e},{:e},{:e},{},{:.3}",
                    r.m, r.time, r.u, r.r_avg, d.residual, d.cycles, d.seconds
                )?,
                None => writeln!(w, "{},{:e},{:e},{:e},,,", r.m, r.time, r.u, r.r_avg)?,
            }
        }
        Ok(())
    }
}

/// `U_m = U_{m-1} + dT * eps * R_avg`.
pub fn macro_step(
    state: &MacroState,
    r_avg: f64,
    dt_macro: f64,
    epsilon: f64,
) -> Result<MacroState> {
    if !(r_avg > 0.0 && r_avg <= 1.0) {
        return Err(SimError::InvalidParameter(format!(
            "averaged reaction {r_avg} outside (0, 1]"
        )));
    }
    let u = state.u + dt_macro * epsilon * r_avg;
    let time = state.time + dt_macro;
    let mut history = state.history.clone();
    history.push(MacroRecord {
        m: history.len() + 1,
        time,
        u,
        r_avg,
        diagnostics: None,
    });
    Ok(MacroState { u, time, history })
}

/// Everything the multiscale loop knows after solving the periodic flow of
/// macro step `m`.
pub struct MacroEvent<'a> {
    pub record: &'a MacroRecord,
    /// Periodic flow on `Omega(U_{m-1})`.
    pub trajectory: &'a PeriodicTrajectory,
}

/// Multiscale front-tracking loop.
pub fn run_multiscale(config: &SimConfig) -> Result<MacroState> {
    run_multiscale_with(config, |_| Ok(()))
}

pub fn run_multiscale_with<F>(config: &SimConfig, mut observer: F) -> Result<MacroState>
where
    F: FnMut(&MacroEvent<'_>) -> Result<()>,
{
    config.validate()?;
    let g = &config.growth;
    let params = config.flow_params();
    let geo = &config.geometry;
    let reference = build_reference_mesh(geo.a, geo.b, geo.nx, geo.ny)?;
    let base = FunctionSpace::new(Arc::new(reference.clone()));
    let mut state = MacroState::new(g.u0);
    let mut previous: Option<PeriodicTrajectory> = None;

    for (idx, &dt_macro) in g.macro_schedule().iter().enumerate() {
        let m = idx + 1;
        let started = Instant::now();
        let step = |e: SimError| e.at_macro_step(m);
        let mesh = deform_mesh(&reference, state.u, &geo.shape).map_err(step)?;
        let space = base.on_mesh(Arc::new(mesh)).map_err(step)?;
        let initial = match &previous {
            Some(p) => warm_start_on(p, Arc::clone(&space)).map_err(step)?,
            None => FlowField::zero(Arc::clone(&space), 0.0),
        };
        let solver = PeriodicSolver::new(
            space,
            params.clone(),
            config.flow.bc,
            g.steps_per_period,
            config.solver.picard(),
        )
        .map_err(step)?;
        let traj = solver
            .find_periodic_solution(&initial, config.solver.tau, config.solver.max_cycles)
            .map_err(step)?;
        let mut solve = *traj.stats();
        let verification_drift = if config.solver.verify_periodicity {
            let (drift, extra) = solver.verification_drift(&traj).map_err(step)?;
            solve.merge(&extra);
            Some(drift)
        } else {
            None
        };
        let r_avg = period_averaged_reaction(&traj, state.u, &params, g.sigma0).map_err(step)?;
        let mut next = macro_step(&state, r_avg, dt_macro, g.epsilon).map_err(step)?;
        check_pinch(next.u, &geo.shape, geo.a, geo.b).map_err(step)?;
        let record = next.history.last_mut().expect("record appended");
        record.diagnostics = Some(StepDiagnostics {
            residual: traj.periodicity_residual(),
            cycles: traj.cycles_used(),
            seconds: started.elapsed().as_secs_f64(),
            verification_drift,
            solve,
        });
        log::info!(
            "macro step {m}: T={} U={:.6e} R={:.6e} cycles={} residual={:.3e}",
            record.time,
            record.u,
            r_avg,
            traj.cycles_used(),
            traj.periodicity_residual()
        );
        observer(&MacroEvent {
            record,
            trajectory: &traj,
        })?;
        state = next;
        previous = Some(traj);
    }
    Ok(state)
}

/// Fully resolved coupling sampled at every micro step.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectRun {
    /// `(t_k, u_k)` for `k = 0..=K`.
    pub samples: Vec<(f64, f64)>,
    pub stats: SolveStats,
}

impl DirectRun {
    pub fn final_u(&self) -> f64 {
        self.samples.last().map_or(f64::NAN, |s| s.1)
    }

    /// `t,u` rows every `stride` samples plus the last one.
    pub fn write_csv<W: Write>(&self, w: &mut W, stride: usize) -> std::io::Result<()> {
        writeln!(w, "t,u")?;
        let stride = stride.max(1);
        let last = self.samples.len() - 1;
        for (k, (t, u)) in self.samples.iter().enumerate() {
            if k % stride == 0 || k == last {
                writeln!(w, "{:e},{:e}", t, u)?;
            }
        }
        Ok(())
    }
}

/// Direct simulation over `t_short` periods, deforming the domain after
/// every micro step.
pub fn run_direct(config: &SimConfig, t_short: f64) -> Result<DirectRun> {
    config.validate()?;
    let g = &config.growth;
    let n = g.steps_per_period;
    let dt = g.dt();
    let total = (t_short * n as f64).round();
    if !(t_short > 0.0) || (total * dt - t_short).abs() > 1e-9 * t_short.max(1.0) {
        return Err(SimError::InvalidParameter(format!(
            "horizon {t_short} is not a multiple of dt = {dt}"
        )));
    }
    let total = total as usize;
    let params = config.flow_params();
    let geo = &config.geometry;
    let reference = build_reference_mesh(geo.a, geo.b, geo.nx, geo.ny)?;
    let deform =
        |u: f64| -> Result<Arc<Mesh>> { deform_mesh(&reference, u, &geo.shape).map(Arc::new) };

    let mut u = g.u0;
    let mut space = FunctionSpace::new(deform(u)?);
    let mut current = FlowField::zero(Arc::clone(&space), 0.0);
    let mut before: Option<Vec<f64>> = None;
    let mut samples = Vec::with_capacity(total + 1);
    samples.push((0.0, u));
    let mut stats = SolveStats::default();

    for k in 1..=total {
        let phase = match k % n {
            0 => 1.0,
            r => r as f64 / n as f64,
        };
        let solver = MicroSolver::new(
            Arc::clone(&space),
            params.clone(),
            config.flow.bc,
            dt,
            config.solver.picard(),
        )?;
        let guess: Option<Vec<f64>> = before.as_ref().map(|b| {
            current
                .velocity()
                .iter()
                .zip(b)
                .map(|(c, p)| 2.0 * c - p)
                .collect()
        });
        let (next, report) = solver
            .step(&current, phase, guess.as_deref())
            .map_err(|e| e.at_micro_step(k))?;
        stats.micro_steps += 1;
        stats.picard_iterations += report.iterations;
        stats.max_picard_iterations = stats.max_picard_iterations.max(report.iterations);
        stats.max_divergence_residual = stats
            .max_divergence_residual
            .max(report.divergence_residual);

        let r = reaction(wall_shear_stress(&next, &params, g.sigma0), u)?;
        u += dt * g.epsilon * r;
        samples.push((k as f64 * dt, u));

        space = space.on_mesh(deform(u).map_err(|e| e.at_micro_step(k))?)?;
        before = Some(current.velocity().to_vec());
        current = next.rebind(Arc::clone(&space))?;
        if k % n == 0 {
            log::debug!("direct: period {} u={:.6e}", k / n, u);
        }
    }
    Ok(DirectRun { samples, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{InflowProfile, Pulse};

    fn flow() -> FlowParams {
        FlowParams::new(1.0, 0.04, InflowProfile::pulsatile(20.0, 2.0))
    }

    fn space(nx: usize, ny: usize) -> Arc<FunctionSpace> {
        FunctionSpace::new(Arc::new(build_reference_mesh(5.0, 2.0, nx, ny).unwrap()))
    }

    #[test]
    fn reaction_examples() {
        assert_eq!(reaction([0.0, 0.0], 0.0).unwrap(), 1.0);
        assert_eq!(reaction([0.0, 0.0], 1.0).unwrap(), 0.5);
        assert!((reaction([1.0, 2.0], 0.0).unwrap() - 1.0 / 6.0).abs() < 1e-16);
        assert!(matches!(
            reaction([0.0, 0.0], -0.1),
            Err(SimError::NegativeConcentration(_))
        ));
    }

    #[test]
    fn zero_field_has_no_stress() {
        let v = FlowField::zero(space(6, 2), 0.0);
        assert_eq!(wall_shear_stress(&v, &flow(), 30.0), [0.0, 0.0]);
    }

    #[test]
    fn poiseuille_stress_matches_closed_form() {
        // d v_x / dy = -2 V y / b^2, so each wall contributes -rho nu 2 V / b over length 2a.
        let v = FlowField::interpolate(
            space(10, 3),
            0.0,
            |_, y| [20.0 * (1.0 - y * y / 4.0), 0.0],
            |_, _| 0.0,
        );
        let s = wall_shear_stress(&v, &flow(), 30.0);
        let expected = -2.0 * 2.0 * 5.0 * 0.04 * 2.0 * 20.0 / 2.0 / 30.0;
        assert!((s[0] - expected).abs() < 1e-12, "{s:?}");
        assert!(s[1].abs() < 1e-12);
    }

    #[test]
    fn mirror_symmetry() {
        let s = space(8, 2);
        let f = |x: f64, y: f64| {
            [
                (1.0 + y) * (2.0 - y) * (2.0 + y) * x.cos(),
                0.3 * x * (4.0 - y * y) + y,
            ]
        };
        let v = FlowField::interpolate(Arc::clone(&s), 0.0, f, |_, _| 0.0);
        let mirrored = FlowField::interpolate(
            Arc::clone(&s),
            0.0,
            |x, y| {
                let w = f(x, -y);
                [w[0], -w[1]]
            },
            |_, _| 0.0,
        );
        let a = wall_shear_stress(&v, &flow(), 30.0);
        let b = wall_shear_stress(&mirrored, &flow(), 30.0);
        assert!((a[0] - b[0]).abs() < 1e-12);
        assert!((a[1] + b[1]).abs() < 1e-12);
    }

    #[test]
    fn macro_step_arithmetic() {
        let s = macro_step(&MacroState::new(0.0), 1.0, 500.0, 2e-4).unwrap();
        assert!((s.u - 0.1).abs() < 1e-15);
        assert_eq!(s.time, 500.0);
        let s = macro_step(&MacroState::new(0.0), 1.0, 1000.0, 1e-3).unwrap();
        let s = macro_step(&s, 0.5, 1000.0, 1e-3).unwrap();
        assert!((s.u - 1.5).abs() < 1e-15);
        assert_eq!(s.history.len(), 2);
        assert_eq!(s.history[1].m, 2);
        let same = macro_step(&MacroState::new(0.3), 0.7, 1000.0, 0.0).unwrap();
        assert_eq!(same.u, 0.3);
        assert!(macro_step(&MacroState::new(0.0), 0.0, 1.0, 1.0).is_err());
        assert!(macro_step(&MacroState::new(0.0), 1.5, 1.0, 1.0).is_err());
    }

    #[test]
    fn schedule_with_remainder() {
        let g = GrowthParams {
            horizon: 4800.0,
            macro_step: 50.0,
            ..Default::default()
        };
        assert_eq!(g.macro_schedule(), vec![50.0; 96]);
        let g = GrowthParams {
            horizon: 1000.0,
            macro_step: 300.0,
            ..Default::default()
        };
        assert_eq!(g.macro_schedule(), vec![300.0, 300.0, 300.0, 100.0]);
        let g = GrowthParams {
            horizon: 100.0,
            macro_step: 12.5,
            ..Default::default()
        };
        assert_eq!(g.macro_schedule().len(), 8);
    }

    #[test]
    fn pairwise_sum_of_equal_terms_is_exact() {
        let r = 1.0 / 3.0;
        assert_eq!(pairwise_sum(&[r; 32]) / 32.0, r);
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn steady_averaging() {
        let s = space(6, 2);
        let mut p = flow();
        p.inflow = InflowProfile {
            amplitude: 0.0,
            half_height: 2.0,
            pulse: Pulse::Constant,
        };
        let traj = crate::periodic::find_periodic_solution(
            &FlowField::zero(s, 0.0),
            4,
            1e-6,
            2,
            &p,
            crate::fem::BoundarySpec::Channel,
        )
        .unwrap();
        assert_eq!(period_averaged_reaction(&traj, 0.0, &p, 30.0).unwrap(), 1.0);
        assert_eq!(period_averaged_reaction(&traj, 1.0, &p, 30.0).unwrap(), 0.5);
    }
}
