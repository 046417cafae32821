//! Flow fields and the implicit-Euler micro step.
//!
//! One micro step solves, for `(v_n, p_n)`,
//!
//! ```text
//! [ rho/dt M + rho N(w) + nu K   B^T ] [v_n]   [ rho/dt M v_{n-1} + F(t_n) ]
//! [ B                            0   ] [p_n] = [ 0                         ]
//! ```
//!
//! with Picard iteration on the convection wind `w`, Dirichlet rows replaced
//! by identity rows, and the natural (do-nothing) condition on the outflow.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use log::warn;

use crate::error::{Result, SimError};
use crate::fem::anderson::Anderson;
use crate::fem::assembly::{assemble_load, local_convection, local_convection_derivative};
use crate::fem::basis::EDGE_LOCAL;
use crate::fem::space::FunctionSpace;
use crate::mesh::BoundaryTag;
use crate::sparse::{norm2, BandLu};
use crate::vtk;

/// Body force `f(t, x, y)`, expected to have period 1 in `t`.
pub type BodyForce = Arc<dyn Fn(f64, f64, f64) -> [f64; 2] + Send + Sync>;

/// Weak divergence residual above which a step is reported as suspicious.
pub const DIVERGENCE_TOLERANCE: f64 = 1e-9;

/// Relative Picard increment below which Newton iterations may take over.
const NEWTON_SWITCH: f64 = 1e-2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pulse {
    /// `sin^2(pi t)`
    SinSquared,
    Constant,
}

/// Parabolic inflow `amplitude * (1 - y^2 / half_height^2) * pulse(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InflowProfile {
    pub amplitude: f64,
    /// Reference half-height; the profile is not rescaled when the mesh deforms.
    pub half_height: f64,
    pub pulse: Pulse,
}

impl InflowProfile {
    pub fn pulsatile(amplitude: f64, half_height: f64) -> Self {
        InflowProfile {
            amplitude,
            half_height,
            pulse: Pulse::SinSquared,
        }
    }

    pub fn steady(amplitude: f64, half_height: f64) -> Self {
        InflowProfile {
            amplitude,
            half_height,
            pulse: Pulse::Constant,
        }
    }

    pub fn value(&self, t: f64, y: f64) -> f64 {
        let g = match self.pulse {
            Pulse::SinSquared => {
                let s = (std::f64::consts::PI * t).sin();
                s * s
            }
            Pulse::Constant => 1.0,
        };
        let r = y / self.half_height;
        self.amplitude * (1.0 - r * r) * g
    }
}

#[derive(Clone)]
pub struct FlowParams {
    pub rho: f64,
    pub nu: f64,
    pub inflow: InflowProfile,
    pub body_force: Option<BodyForce>,
    /// Weight `beta` of the outflow backflow term `-(rho beta / 2) ((w.n)_-) v`;
    /// zero gives the plain do-nothing condition.
    pub backflow: f64,
}

impl fmt::Debug for FlowParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FlowParams")
            .field("rho", &self.rho)
            .field("nu", &self.nu)
            .field("inflow", &self.inflow)
            .field("body_force", &self.body_force.as_ref().map(|_| "<fn>"))
            .field("backflow", &self.backflow)
            .finish()
    }
}

impl FlowParams {
    /// No body force, backflow stabilization on.
    pub fn new(rho: f64, nu: f64, inflow: InflowProfile) -> Self {
        FlowParams {
            rho,
            nu,
            inflow,
            body_force: None,
            backflow: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) || !(self.nu > 0.0) {
            return Err(SimError::InvalidParameter(format!(
                "density and viscosity must be positive (rho={}, nu={})",
                self.rho, self.nu
            )));
        }
        if !(self.backflow >= 0.0 && self.backflow.is_finite()) {
            return Err(SimError::InvalidParameter(format!(
                "backflow weight must be >= 0, got {}",
                self.backflow
            )));
        }
        Ok(())
    }
}

/// Boundary condition sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundarySpec {
    /// Dirichlet inflow profile, no-slip walls, do-nothing outflow.
    Channel,
    /// Homogeneous Dirichlet on the whole boundary, pressure pinned at vertex 0.
    Enclosed,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PicardSettings {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Anderson mixing depth applied to the Picard map (0 = plain Picard).
    pub anderson_depth: usize,
    /// Allow Newton iterations after this many Picard steps, once the relative
    /// Picard increment is small.
    pub newton_after: Option<usize>,
}

impl Default for PicardSettings {
    fn default() -> Self {
        PicardSettings {
            tolerance: 1e-9,
            max_iterations: 50,
            anderson_depth: 5,
            newton_after: Some(10),
        }
    }
}

/// Prescribed values `(unknown index, value)` at time `t`. Wall data
/// overrides inflow data at the shared corner nodes.
pub fn dirichlet_values(
    space: &FunctionSpace,
    params: &FlowParams,
    bc: BoundarySpec,
    t: f64,
) -> Vec<(usize, f64)> {
    let topo = space.topology();
    let n = topo.num_nodes();
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    match bc {
        BoundarySpec::Channel => {
            for &i in topo.boundary_nodes(BoundaryTag::Inflow) {
                fixed[i] = Some(params.inflow.value(t, space.node_coords()[i][1]));
            }
            for tag in [BoundaryTag::WallTop, BoundaryTag::WallBottom] {
                for &i in topo.boundary_nodes(tag) {
                    fixed[i] = Some(0.0);
                }
            }
        }
        BoundarySpec::Enclosed => {
            for tag in [
                BoundaryTag::Inflow,
                BoundaryTag::Outflow,
                BoundaryTag::WallTop,
                BoundaryTag::WallBottom,
            ] {
                for &i in topo.boundary_nodes(tag) {
                    fixed[i] = Some(0.0);
                }
            }
        }
    }
    let mut out = Vec::new();
    for (i, f) in fixed.iter().enumerate() {
        if let Some(vx) = *f {
            out.push((i, vx));
        }
    }
    for (i, f) in fixed.iter().enumerate() {
        if f.is_some() {
            out.push((n + i, 0.0));
        }
    }
    if bc == BoundarySpec::Enclosed {
        out.push((2 * n, 0.0));
    }
    out
}

/// Finite-element velocity/pressure coefficients at one time instant.
#[derive(Clone, Debug)]
pub struct FlowField {
    space: Arc<FunctionSpace>,
    velocity: Vec<f64>,
    pressure: Vec<f64>,
    time: f64,
}

impl FlowField {
    pub fn new(
        space: Arc<FunctionSpace>,
        velocity: Vec<f64>,
        pressure: Vec<f64>,
        time: f64,
    ) -> Result<Self> {
        let topo = space.topology();
        if velocity.len() != topo.num_velocity_dofs() {
            return Err(SimError::DimensionMismatch {
                expected: topo.num_velocity_dofs(),
                found: velocity.len(),
            });
        }
        if pressure.len() != topo.num_pressure_dofs() {
            return Err(SimError::DimensionMismatch {
                expected: topo.num_pressure_dofs(),
                found: pressure.len(),
            });
        }
        Ok(FlowField {
            space,
            velocity,
            pressure,
            time,
        })
    }

    pub fn zero(space: Arc<FunctionSpace>, time: f64) -> Self {
        let topo = space.topology();
        let (nv, np) = (topo.num_velocity_dofs(), topo.num_pressure_dofs());
        FlowField {
            space,
            velocity: vec![0.0; nv],
            pressure: vec![0.0; np],
            time,
        }
    }

    /// Nodal interpolant of the given velocity and pressure functions.
    pub fn interpolate(
        space: Arc<FunctionSpace>,
        time: f64,
        velocity: impl Fn(f64, f64) -> [f64; 2],
        pressure: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let n = space.num_nodes();
        let mut v = vec![0.0; 2 * n];
        for (i, &[x, y]) in space.node_coords().iter().enumerate() {
            let [a, b] = velocity(x, y);
            v[i] = a;
            v[n + i] = b;
        }
        let p = space
            .mesh()
            .vertices()
            .iter()
            .map(|&[x, y]| pressure(x, y))
            .collect();
        FlowField {
            space,
            velocity: v,
            pressure: p,
            time,
        }
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn velocity(&self) -> &[f64] {
        &self.velocity
    }

    pub fn pressure(&self) -> &[f64] {
        &self.pressure
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Same coefficients on another mesh with identical connectivity.
    pub fn rebind(&self, space: Arc<FunctionSpace>) -> Result<Self> {
        if !Arc::ptr_eq(self.space.topology(), space.topology())
            && !self.space.mesh().same_connectivity(space.mesh())
        {
            return Err(SimError::ConnectivityMismatch);
        }
        Ok(FlowField {
            space,
            velocity: self.velocity.clone(),
            pressure: self.pressure.clone(),
            time: self.time,
        })
    }

    /// `||B v||_2`, the weak divergence residual.
    pub fn divergence_residual(&self) -> f64 {
        let bv = self
            .space
            .operators()
            .divergence
            .mul_vec(&self.velocity)
            .expect("velocity length");
        norm2(&bv)
    }

    /// Largest deviation of the Dirichlet coefficients from the boundary data
    /// at the field's time stamp.
    pub fn boundary_mismatch(&self, params: &FlowParams, bc: BoundarySpec) -> f64 {
        let n2 = self.velocity.len();
        dirichlet_values(&self.space, params, bc, self.time)
            .into_iter()
            .map(|(i, v)| {
                if i < n2 {
                    (self.velocity[i] - v).abs()
                } else {
                    self.pressure[i - n2].abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn vertex_velocities(&self) -> Vec<[f64; 2]> {
        let n = self.space.num_nodes();
        (0..self.space.topology().num_vertices())
            .map(|i| [self.velocity[i], self.velocity[n + i]])
            .collect()
    }

    pub fn write_vtk<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let vel = self.vertex_velocities();
        let mesh = self.space.mesh();
        vtk::write_triangles(
            w,
            &format!("flow field t={} U={}", self.time, mesh.concentration()),
            mesh.vertices(),
            mesh.triangles(),
            &[("pressure", &self.pressure)],
            &[("velocity", &vel)],
        )
    }

    /// DOF vectors as CSV: `kind,component,node,x,y,value`.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "kind,component,node,x,y,value")?;
        let n = self.space.num_nodes();
        for c in 0..2 {
            for (i, &[x, y]) in self.space.node_coords().iter().enumerate() {
                writeln!(
                    w,
                    "velocity,{c},{i},{x:e},{y:e},{:e}",
                    self.velocity[c * n + i]
                )?;
            }
        }
        for (i, &[x, y]) in self.space.mesh().vertices().iter().enumerate() {
            writeln!(w, "pressure,0,{i},{x:e},{y:e},{:e}", self.pressure[i])?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Norm {
    L2,
    H1,
}

/// Velocity difference norm with unit-parameter operators:
/// `L2 = sqrt(e^T M e)`, `H1 = sqrt(e^T (M + K) e)`.
pub fn field_difference_norm(u: &FlowField, v: &FlowField, which: Norm) -> Result<f64> {
    if u.velocity.len() != v.velocity.len() {
        return Err(SimError::DimensionMismatch {
            expected: u.velocity.len(),
            found: v.velocity.len(),
        });
    }
    let e: Vec<f64> = u
        .velocity
        .iter()
        .zip(&v.velocity)
        .map(|(a, b)| a - b)
        .collect();
    let ops = u.space.operators();
    let mut s = ops.mass.bilinear(&e, &e)?;
    if which == Norm::H1 {
        s += ops.stiffness.bilinear(&e, &e)?;
    }
    Ok(s.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepReport {
    pub iterations: usize,
    pub increment: f64,
    pub divergence_residual: f64,
}

/// Micro-step solver bound to one space and step size; reusable across steps.
pub struct MicroSolver {
    space: Arc<FunctionSpace>,
    params: FlowParams,
    bc: BoundarySpec,
    dt: f64,
    picard: PicardSettings,
    base: Vec<f64>,
    outflow: Vec<OutflowEdge>,
}

/// Outflow edge data for the backflow term: P2 nodes (end, end, midpoint)
/// and the system positions of the 3x3 block for each component.
struct OutflowEdge {
    nodes: [usize; 3],
    normal: [f64; 2],
    length: f64,
    /// `positions[a][b][i][j]`: row (component a, node i), column (component b, node j).
    positions: [[[[usize; 3]; 3]; 2]; 2],
}

/// Four-point Gauss rule on `[0, 1]`.
const EDGE_GAUSS4: [(f64, f64); 4] = [
    (
        0.069_431_844_202_973_712_388_026_755_553_595,
        0.173_927_422_568_726_928_686_531_974_610_999,
    ),
    (
        0.330_009_478_207_571_867_598_667_120_448_377,
        0.326_072_577_431_273_071_313_468_025_389_001,
    ),
    (
        0.669_990_521_792_428_132_401_332_879_551_623,
        0.326_072_577_431_273_071_313_468_025_389_001,
    ),
    (
        0.930_568_155_797_026_287_611_973_244_446_405,
        0.173_927_422_568_726_928_686_531_974_610_999,
    ),
];

fn outflow_edges(space: &FunctionSpace) -> Vec<OutflowEdge> {
    let mesh = space.mesh();
    let topo = space.topology();
    let pattern = topo.pattern();
    let n = space.num_nodes();
    mesh.boundary_edges()
        .iter()
        .filter(|e| e.tag == BoundaryTag::Outflow)
        .map(|e| {
            let tri = mesh.triangles()[e.triangle];
            let lp = tri
                .iter()
                .position(|&k| k == e.vertices[0])
                .expect("edge vertex in triangle");
            let lq = tri
                .iter()
                .position(|&k| k == e.vertices[1])
                .expect("edge vertex in triangle");
            let k = EDGE_LOCAL
                .iter()
                .position(|&[a, b]| (a == lp && b == lq) || (a == lq && b == lp))
                .expect("edge of triangle");
            let nodes = [
                e.vertices[0],
                e.vertices[1],
                topo.element_nodes()[e.triangle][3 + k],
            ];
            let p = mesh.vertices()[e.vertices[0]];
            let q = mesh.vertices()[e.vertices[1]];
            let (tx, ty) = (q[0] - p[0], q[1] - p[1]);
            let length = tx.hypot(ty);
            let mut positions = [[[[0; 3]; 3]; 2]; 2];
            for (a, row) in positions.iter_mut().enumerate() {
                for (b, block) in row.iter_mut().enumerate() {
                    for i in 0..3 {
                        for j in 0..3 {
                            block[i][j] = pattern
                                .position(a * n + nodes[i], b * n + nodes[j])
                                .expect("edge block in pattern");
                        }
                    }
                }
            }
            OutflowEdge {
                nodes,
                normal: [ty / length, -tx / length],
                length,
                positions,
            }
        })
        .collect()
}

impl MicroSolver {
    pub fn new(
        space: Arc<FunctionSpace>,
        params: FlowParams,
        bc: BoundarySpec,
        dt: f64,
        picard: PicardSettings,
    ) -> Result<Self> {
        params.validate()?;
        if !(dt > 0.0 && dt <= 1.0) {
            return Err(SimError::InvalidParameter(format!(
                "micro step must lie in (0, 1], got {dt}"
            )));
        }
        let topo = space.topology();
        let ops = space.operators();
        let mut base = vec![0.0; topo.pattern().nnz()];
        let (rdt, nu) = (params.rho / dt, params.nu);
        for (e, slots) in topo.slots().iter().enumerate() {
            let (m, k) = (&ops.local_mass[e], &ops.local_stiffness[e]);
            for c in 0..2 {
                for (idx, &pos) in slots.velocity[c].iter().enumerate() {
                    base[pos] += rdt * m[idx] + nu * k[idx];
                }
            }
            let d = &ops.local_divergence[e];
            for kk in 0..3 {
                for col in 0..12 {
                    base[slots.div[kk][col]] += d[kk][col];
                    base[slots.grad[col][kk]] += d[kk][col];
                }
            }
        }
        let outflow = if bc == BoundarySpec::Channel && params.backflow > 0.0 {
            outflow_edges(&space)
        } else {
            Vec::new()
        };
        Ok(MicroSolver {
            space,
            params,
            bc,
            dt,
            picard,
            base,
            outflow,
        })
    }

    pub fn space(&self) -> &Arc<FunctionSpace> {
        &self.space
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn params(&self) -> &FlowParams {
        &self.params
    }

    pub fn boundary(&self) -> BoundarySpec {
        self.bc
    }

    /// Adds the backflow term lagged in `wind` to `values`; with `jacobian`,
    /// also adds its derivative with respect to the wind.
    fn add_backflow(&self, values: &mut [f64], jacobian: Option<&mut [f64]>, wind: &[f64]) {
        let n = self.space.num_nodes();
        let scale = -0.5 * self.params.rho * self.params.backflow;
        let mut jacobian = jacobian;
        for edge in &self.outflow {
            let mut local = [[0.0; 3]; 3];
            let mut deriv = [[[[0.0; 3]; 3]; 2]; 2];
            let mut active = false;
            for &(s, w) in &EDGE_GAUSS4 {
                let phi = [
                    (1.0 - s) * (1.0 - 2.0 * s),
                    s * (2.0 * s - 1.0),
                    4.0 * s * (1.0 - s),
                ];
                let mut wv = [0.0; 2];
                for (i, &node) in edge.nodes.iter().enumerate() {
                    wv[0] += phi[i] * wind[node];
                    wv[1] += phi[i] * wind[n + node];
                }
                let wn = wv[0] * edge.normal[0] + wv[1] * edge.normal[1];
                if wn >= 0.0 {
                    continue;
                }
                active = true;
                let f = scale * w * edge.length;
                for i in 0..3 {
                    for j in 0..3 {
                        let pp = f * phi[i] * phi[j];
                        local[i][j] += pp * wn;
                        for a in 0..2 {
                            for b in 0..2 {
                                deriv[a][b][i][j] += pp * wv[a] * edge.normal[b];
                            }
                        }
                    }
                }
            }
            if !active {
                continue;
            }
            for c in 0..2 {
                for i in 0..3 {
                    for j in 0..3 {
                        values[edge.positions[c][c][i][j]] += local[i][j];
                    }
                }
            }
            if let Some(jac) = jacobian.as_deref_mut() {
                for a in 0..2 {
                    for b in 0..2 {
                        for i in 0..3 {
                            for j in 0..3 {
                                jac[edge.positions[a][b][i][j]] += deriv[a][b][i][j];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Fills `values` with the frozen-wind operator and, with `jacobian`, the
    /// derivative part of the Newton matrix.
    fn assemble_operator(&self, values: &mut [f64], jacobian: Option<&mut [f64]>, wind: &[f64]) {
        let topo = self.space.topology();
        let rho = self.params.rho;
        values.copy_from_slice(&self.base);
        let mut jacobian = jacobian;
        if let Some(jac) = jacobian.as_deref_mut() {
            jac.fill(0.0);
        }
        for (e, slots) in topo.slots().iter().enumerate() {
            let local = local_convection(&self.space, e, wind);
            for c in 0..2 {
                for (idx, &pos) in slots.velocity[c].iter().enumerate() {
                    values[pos] += rho * local[idx];
                }
            }
            if let Some(jac) = jacobian.as_deref_mut() {
                let d = local_convection_derivative(&self.space, e, wind);
                for a in 0..2 {
                    for idx in 0..36 {
                        jac[slots.velocity[a][idx]] += rho * d[a][a][idx];
                        jac[slots.coupling[a][idx]] += rho * d[a][1 - a][idx];
                    }
                }
            }
        }
        self.add_backflow(values, jacobian, wind);
    }

    /// Advances `prev` to time `t_n`. `guess` seeds the Picard wind; the
    /// previous velocity is used when absent.
    pub fn step(
        &self,
        prev: &FlowField,
        t_n: f64,
        guess: Option<&[f64]>,
    ) -> Result<(FlowField, StepReport)> {
        let topo = self.space.topology();
        let ops = self.space.operators();
        let n2 = topo.num_velocity_dofs();
        if prev.velocity.len() != n2 {
            return Err(SimError::DimensionMismatch {
                expected: n2,
                found: prev.velocity.len(),
            });
        }
        if !Arc::ptr_eq(prev.space.topology(), topo)
            && !prev.space.mesh().same_connectivity(self.space.mesh())
        {
            return Err(SimError::ConnectivityMismatch);
        }
        let nu = topo.num_unknowns();
        let rdt = self.params.rho / self.dt;

        let mut rhs = vec![0.0; nu];
        let mv = ops.mass.mul_vec(&prev.velocity)?;
        for (r, m) in rhs.iter_mut().zip(&mv) {
            *r = rdt * m;
        }
        if let Some(f) = &self.params.body_force {
            let load = assemble_load(&self.space, f.as_ref(), t_n);
            for (r, l) in rhs.iter_mut().zip(&load) {
                *r += l;
            }
        }
        let dirichlet = dirichlet_values(&self.space, &self.params, self.bc, t_n);
        let mut fixed = vec![f64::NAN; nu];
        for &(i, v) in &dirichlet {
            rhs[i] = v;
            fixed[i] = v;
        }
        let cols = topo.pattern().col_indices();

        let mut wind: Vec<f64> = match guess {
            Some(g) if g.len() == n2 => g.to_vec(),
            Some(g) => {
                return Err(SimError::DimensionMismatch {
                    expected: n2,
                    found: g.len(),
                })
            }
            None => prev.velocity.clone(),
        };
        let mut system = topo.pattern().clone();
        let offsets = topo.pattern().row_offsets();
        let diagonal = topo.diagonal();
        let mut increment = f64::INFINITY;
        let mut lifted = rhs.clone();
        let mut mixer = Anderson::new(self.picard.anderson_depth);
        let mut jacobian: Option<Vec<f64>> = None;
        // Mass shift of a damped Newton step, raised when a step is rejected.
        let mut shift = 0.0f64;
        let mut accepted: Option<(f64, Vec<f64>)> = None;
        // Current iterate including pressure.
        let mut state = vec![0.0; nu];
        state[..n2].copy_from_slice(&wind);
        if prev.pressure.len() == nu - n2 {
            state[n2..].copy_from_slice(&prev.pressure);
        }
        let free_residual = |values: &[f64], z: &[f64]| -> f64 {
            let mut sum = 0.0;
            for row in 0..nu {
                if !fixed[row].is_nan() {
                    continue;
                }
                let mut r = -rhs[row];
                for pos in offsets[row]..offsets[row + 1] {
                    r += values[pos] * z[cols[pos]];
                }
                sum += r * r;
            }
            sum.sqrt()
        };

        for iteration in 1..=self.picard.max_iterations {
            if jacobian.is_some() {
                for &(row, v) in &dirichlet {
                    state[row] = v;
                }
                wind.copy_from_slice(&state[..n2]);
            }
            lifted.copy_from_slice(&rhs);
            let values = system.values_mut();
            self.assemble_operator(values, jacobian.as_deref_mut(), &wind);
            let residual = match jacobian.as_ref() {
                Some(jac) => {
                    let r = free_residual(values, &state);
                    // (J(w) + s M) v = rhs + J'(w) w + s M w with J' the derivative part.
                    for row in 0..n2 {
                        if !fixed[row].is_nan() {
                            continue;
                        }
                        for pos in offsets[row]..offsets[row + 1] {
                            let c = cols[pos];
                            if c < n2 {
                                lifted[row] += jac[pos] * wind[c];
                            }
                        }
                    }
                    for (v, j) in values.iter_mut().zip(jac) {
                        *v += j;
                    }
                    if let Some((prev_r, ref prev_state)) = accepted {
                        if r > 2.0 * prev_r {
                            state.copy_from_slice(prev_state);
                            shift = 4.0 * shift.max(rdt);
                            log::trace!("t={t_n} newton {iteration}: rejected, residual {r:e}");
                            continue;
                        }
                        shift *= r / prev_r;
                    }
                    accepted = Some((r, state.clone()));
                    if shift > 0.0 {
                        for (e, slots) in topo.slots().iter().enumerate() {
                            let m = &ops.local_mass[e];
                            for c in 0..2 {
                                for (idx, &pos) in slots.velocity[c].iter().enumerate() {
                                    values[pos] += shift * m[idx];
                                }
                            }
                        }
                        let mz = ops.mass.mul_vec(&state[..n2])?;
                        for row in 0..n2 {
                            if fixed[row].is_nan() {
                                lifted[row] += shift * mz[row];
                            }
                        }
                    }
                    r
                }
                None => f64::NAN,
            };
            for &(row, _) in &dirichlet {
                values[offsets[row]..offsets[row + 1]].fill(0.0);
                values[diagonal[row]] = 1.0;
            }
            for row in 0..nu {
                if !fixed[row].is_nan() {
                    continue;
                }
                for pos in offsets[row]..offsets[row + 1] {
                    let g = fixed[cols[pos]];
                    if !g.is_nan() {
                        lifted[row] -= values[pos] * g;
                        values[pos] = 0.0;
                    }
                }
            }
            let lu = BandLu::factor(&system, topo.ordering())?;
            let x = lu.solve_refined(&system, &lifted)?;
            increment = x[..n2]
                .iter()
                .zip(&wind)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let size = x[..n2].iter().fold(1.0f64, |m, v| m.max(v.abs()));
            log::trace!(
                "t={t_n} {} {iteration}: increment {increment:e}",
                if jacobian.is_some() {
                    "newton"
                } else {
                    "picard"
                }
            );
            if increment <= self.picard.tolerance * size {
                let mut x = x;
                let pressure = x.split_off(n2);
                let field = FlowField {
                    space: Arc::clone(&self.space),
                    velocity: x,
                    pressure,
                    time: t_n,
                };
                let divergence_residual = field.divergence_residual();
                if divergence_residual > DIVERGENCE_TOLERANCE {
                    warn!("weak divergence residual {divergence_residual:e} at t={t_n}");
                }
                return Ok((
                    field,
                    StepReport {
                        iterations: iteration,
                        increment,
                        divergence_residual,
                    },
                ));
            }
            if jacobian.is_some() {
                log::trace!("t={t_n} newton {iteration}: residual {residual:e}, shift {shift:e}");
                state.copy_from_slice(&x);
            } else {
                state.copy_from_slice(&x);
                if self
                    .picard
                    .newton_after
                    .is_some_and(|k| iteration >= k && increment <= NEWTON_SWITCH * size)
                {
                    log::debug!("t={t_n}: switching to Newton after {iteration} Picard iterations");
                    jacobian = Some(vec![0.0; self.base.len()]);
                } else {
                    wind = mixer.next(&wind, &x[..n2]);
                }
            }
        }
        Err(SimError::NonlinearDivergence {
            iterations: self.picard.max_iterations,
            increment,
        })
    }
}

/// One implicit-Euler step from `prev` to `t_n` on `prev`'s space.
pub fn micro_step(
    prev: &FlowField,
    t_n: f64,
    dt: f64,
    params: &FlowParams,
    bc: BoundarySpec,
) -> Result<FlowField> {
    let solver = MicroSolver::new(
        Arc::clone(&prev.space),
        params.clone(),
        bc,
        dt,
        PicardSettings::default(),
    )?;
    solver.step(prev, t_n, None).map(|(f, _)| f)
}
