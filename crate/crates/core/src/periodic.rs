//! Time-periodic flow on a fixed domain by cycle marching.
//!
//! Whole periods `[0, 1]` are simulated with the implicit-Euler micro step
//! and the end state is fed back as the next start until the period map is
//! stationary to within `tau` in the H1 norm.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Result, SimError};
use crate::fem::{
    field_difference_norm, BoundarySpec, FlowField, FlowParams, FunctionSpace, MicroSolver, Norm,
    PicardSettings,
};
use crate::mesh::Mesh;

/// Default periodicity tolerance in the H1 norm.
pub const DEFAULT_TOLERANCE: f64 = 1e-6;

/// Diagnostics accumulated over every micro step of a solve.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub micro_steps: usize,
    pub picard_iterations: usize,
    pub max_picard_iterations: usize,
    pub max_divergence_residual: f64,
}

impl SolveStats {
    pub fn merge(&mut self, other: &SolveStats) {
        self.micro_steps += other.micro_steps;
        self.picard_iterations += other.picard_iterations;
        self.max_picard_iterations = self.max_picard_iterations.max(other.max_picard_iterations);
        self.max_divergence_residual = self
            .max_divergence_residual
            .max(other.max_divergence_residual);
    }
}

/// The `N + 1` fields produced by one pass over the period.
#[derive(Clone, Debug)]
pub struct PeriodRun {
    pub fields: Vec<FlowField>,
    pub stats: SolveStats,
}

/// One-period orbit with `fields[0]` at `t = 0` and `fields[N]` at `t = 1`.
#[derive(Clone, Debug)]
pub struct PeriodicTrajectory {
    fields: Vec<FlowField>,
    periodicity_residual: f64,
    cycles_used: usize,
    residual_history: Vec<f64>,
    stats: SolveStats,
}

impl PeriodicTrajectory {
    pub fn fields(&self) -> &[FlowField] {
        &self.fields
    }

    pub fn steps(&self) -> usize {
        self.fields.len() - 1
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.steps() as f64
    }

    /// H1 distance between the end and start fields.
    pub fn periodicity_residual(&self) -> f64 {
        self.periodicity_residual
    }

    pub fn cycles_used(&self) -> usize {
        self.cycles_used
    }

    /// Periodicity residual after each cycle.
    pub fn residual_history(&self) -> &[f64] {
        &self.residual_history
    }

    pub fn stats(&self) -> &SolveStats {
        &self.stats
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        self.fields[0].space()
    }

    /// Per-cycle residual log as CSV (`cycle,residual`).
    pub fn write_residual_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "cycle,residual")?;
        for (i, r) in self.residual_history.iter().enumerate() {
            writeln!(w, "{},{:e}", i + 1, r)?;
        }
        Ok(())
    }
}

/// Cycle-marching solver for one domain and step count.
pub struct PeriodicSolver {
    micro: MicroSolver,
    steps: usize,
}

impl PeriodicSolver {
    pub fn new(
        space: Arc<FunctionSpace>,
        params: FlowParams,
        bc: BoundarySpec,
        steps: usize,
        picard: PicardSettings,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(SimError::InvalidParameter(
                "steps per period must be >= 1".into(),
            ));
        }
        let micro = MicroSolver::new(space, params, bc, 1.0 / steps as f64, picard)?;
        Ok(PeriodicSolver { micro, steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn micro(&self) -> &MicroSolver {
        &self.micro
    }

    /// Marches one period from `start` (time 0). When `guide` holds the
    /// previous cycle, its fields seed the Picard iterations.
    pub fn run_one_period(
        &self,
        start: &FlowField,
        guide: Option<&[FlowField]>,
    ) -> Result<PeriodRun> {
        if start.time() != 0.0 {
            return Err(SimError::InvalidParameter(format!(
                "period must start at t = 0, got {}",
                start.time()
            )));
        }
        let n = self.steps;
        let guide = guide.filter(|g| g.len() == n + 1);
        let mut fields: Vec<FlowField> = Vec::with_capacity(n + 1);
        fields.push(start.rebind(Arc::clone(self.micro.space()))?);
        let mut stats = SolveStats::default();
        for step in 1..=n {
            let prev = &fields[step - 1];
            let guess: Option<Vec<f64>> = match guide {
                Some(g) => Some(
                    g[step]
                        .velocity()
                        .iter()
                        .zip(prev.velocity())
                        .zip(g[step - 1].velocity())
                        .map(|((gn, cur), gp)| gn + (cur - gp))
                        .collect(),
                ),
                None if step >= 2 => Some(
                    prev.velocity()
                        .iter()
                        .zip(fields[step - 2].velocity())
                        .map(|(a, b)| 2.0 * a - b)
                        .collect(),
                ),
                None => None,
            };
            let t_n = if step == n {
                1.0
            } else {
                step as f64 / n as f64
            };
            let (next, report) = self
                .micro
                .step(prev, t_n, guess.as_deref())
                .map_err(|e| e.at_micro_step(step))?;
            stats.micro_steps += 1;
            stats.picard_iterations += report.iterations;
            stats.max_picard_iterations = stats.max_picard_iterations.max(report.iterations);
            stats.max_divergence_residual = stats
                .max_divergence_residual
                .max(report.divergence_residual);
            fields.push(next);
        }
        Ok(PeriodRun { fields, stats })
    }

    /// Repeats whole periods until `||v(1) - v(0)||_H1 <= tau`.
    pub fn find_periodic_solution(
        &self,
        initial_guess: &FlowField,
        tau: f64,
        max_cycles: usize,
    ) -> Result<PeriodicTrajectory> {
        if !(tau >= 0.0) || max_cycles == 0 {
            return Err(SimError::InvalidParameter(format!(
                "need tau >= 0 and max_cycles >= 1 (tau={tau}, max_cycles={max_cycles})"
            )));
        }
        let mut start = initial_guess.clone().with_time(0.0);
        let mut guide: Option<Vec<FlowField>> = None;
        let mut history = Vec::new();
        let mut stats = SolveStats::default();
        for cycle in 1..=max_cycles {
            let run = self.run_one_period(&start, guide.as_deref())?;
            stats.merge(&run.stats);
            let residual =
                field_difference_norm(&run.fields[self.steps], &run.fields[0], Norm::H1)?;
            history.push(residual);
            log::debug!("cycle {cycle}: periodicity residual {residual:e}");
            if residual <= tau {
                return Ok(PeriodicTrajectory {
                    fields: run.fields,
                    periodicity_residual: residual,
                    cycles_used: cycle,
                    residual_history: history,
                    stats,
                });
            }
            start = run.fields[self.steps].clone().with_time(0.0);
            guide = Some(run.fields);
        }
        Err(SimError::PeriodicityNotReached {
            residual: *history.last().unwrap(),
            max_cycles,
        })
    }

    /// Runs one more period from the end field and returns the H1 change of
    /// the end field with the solve statistics of that period.
    pub fn verification_drift(&self, trajectory: &PeriodicTrajectory) -> Result<(f64, SolveStats)> {
        let end = &trajectory.fields[trajectory.steps()];
        let run = self.run_one_period(&end.clone().with_time(0.0), Some(&trajectory.fields))?;
        let drift = field_difference_norm(&run.fields[self.steps], end, Norm::H1)?;
        Ok((drift, run.stats))
    }
}

/// Successive micro steps over one period from `start`.
pub fn run_one_period(
    start: &FlowField,
    steps: usize,
    params: &FlowParams,
    bc: BoundarySpec,
) -> Result<PeriodRun> {
    PeriodicSolver::new(
        Arc::clone(start.space()),
        params.clone(),
        bc,
        steps,
        PicardSettings::default(),
    )?
    .run_one_period(start, None)
}

/// Cycle marching from `initial_guess` on its own space.
pub fn find_periodic_solution(
    initial_guess: &FlowField,
    steps: usize,
    tau: f64,
    max_cycles: usize,
    params: &FlowParams,
    bc: BoundarySpec,
) -> Result<PeriodicTrajectory> {
    PeriodicSolver::new(
        Arc::clone(initial_guess.space()),
        params.clone(),
        bc,
        steps,
        PicardSettings::default(),
    )?
    .find_periodic_solution(initial_guess, tau, max_cycles)
}

/// The previous orbit's initial field re-bound to a deformed mesh.
pub fn warm_start(previous: &PeriodicTrajectory, new_mesh: Arc<Mesh>) -> Result<FlowField> {
    let space = previous.space().on_mesh(new_mesh)?;
    warm_start_on(previous, space)
}

pub fn warm_start_on(
    previous: &PeriodicTrajectory,
    space: Arc<FunctionSpace>,
) -> Result<FlowField> {
    previous.fields[0].rebind(space)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{InflowProfile, Pulse};
    use crate::mesh::build_reference_mesh;

    fn space() -> Arc<FunctionSpace> {
        FunctionSpace::new(Arc::new(build_reference_mesh(5.0, 2.0, 8, 2).unwrap()))
    }

    fn params(amplitude: f64, pulse: Pulse) -> FlowParams {
        FlowParams {
            rho: 1.0,
            nu: 0.04,
            inflow: InflowProfile {
                amplitude,
                half_height: 2.0,
                pulse,
            },
            body_force: None,
            backflow: 1.0,
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let s = space();
        let run = run_one_period(
            &FlowField::zero(Arc::clone(&s), 0.0),
            4,
            &params(0.0, Pulse::SinSquared),
            BoundarySpec::Channel,
        )
        .unwrap();
        assert_eq!(run.fields.len(), 5);
        assert_eq!(run.fields[4].time(), 1.0);
        assert!(run
            .fields
            .iter()
            .all(|f| f.velocity().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn steady_start_converges_in_one_cycle() {
        let s = space();
        let exact = FlowField::interpolate(
            Arc::clone(&s),
            0.0,
            |_, y| [5.0 * (1.0 - y * y / 4.0), 0.0],
            |x, _| 2.0 * 0.04 * 5.0 / 4.0 * (5.0 - x),
        );
        let traj = find_periodic_solution(
            &exact,
            4,
            1e-6,
            3,
            &params(5.0, Pulse::Constant),
            BoundarySpec::Channel,
        )
        .unwrap();
        assert_eq!(traj.cycles_used(), 1);
        assert!(traj.periodicity_residual() <= 1e-8);
        for f in traj.fields() {
            let err = f
                .velocity()
                .iter()
                .zip(exact.velocity())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-9);
        }
    }

    #[test]
    fn zero_tolerance_is_unreachable() {
        let s = space();
        let err = find_periodic_solution(
            &FlowField::zero(s, 0.0),
            4,
            0.0,
            2,
            &params(5.0, Pulse::SinSquared),
            BoundarySpec::Channel,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            SimError::PeriodicityNotReached { max_cycles: 2, .. }
        ));
    }

    #[test]
    fn start_time_must_be_zero() {
        let s = space();
        let p = params(1.0, Pulse::SinSquared);
        let solver = PeriodicSolver::new(
            Arc::clone(&s),
            p,
            BoundarySpec::Channel,
            4,
            PicardSettings::default(),
        )
        .unwrap();
        assert!(solver
            .run_one_period(&FlowField::zero(s, 0.5), None)
            .is_err());
    }

    #[test]
    fn warm_start_identity() {
        let s = space();
        let p = params(5.0, Pulse::SinSquared);
        let traj = find_periodic_solution(
            &FlowField::zero(Arc::clone(&s), 0.0),
            8,
            1e-3,
            50,
            &p,
            BoundarySpec::Channel,
        )
        .unwrap();
        let again = warm_start(&traj, Arc::clone(s.mesh())).unwrap();
        assert_eq!(again.velocity(), traj.fields()[0].velocity());
        let other = Arc::new(build_reference_mesh(5.0, 2.0, 9, 2).unwrap());
        assert!(matches!(
            warm_start(&traj, other),
            Err(SimError::ConnectivityMismatch)
        ));
    }
}
