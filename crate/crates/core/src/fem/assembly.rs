//! Weak forms of the linear and convective Navier-Stokes terms.
//!
//! All operators are assembled with unit density and viscosity; the coupled
//! system scales them. Every integral uses the 7-point degree-5 rule.

use crate::fem::basis::{p2_gradients, p2_values, QUAD_POINTS, QUAD_WEIGHTS};
use crate::fem::space::FunctionSpace;
use crate::sparse::{to_csr, CsrMatrix, Triplets};

/// Velocity-block operators act on `[u_x nodes | u_y nodes]`; the divergence
/// maps velocity to the pressure test space, `B[k, (c, j)] = -(psi_k, d_c phi_j)`.
#[derive(Clone, Debug)]
pub struct ConstantOperators {
    pub mass: CsrMatrix,
    pub stiffness: CsrMatrix,
    pub divergence: CsrMatrix,
    pub(crate) local_mass: Vec<[f64; 36]>,
    pub(crate) local_stiffness: Vec<[f64; 36]>,
    pub(crate) local_divergence: Vec<[[f64; 12]; 3]>,
}

pub(crate) fn local_constant(
    space: &FunctionSpace,
    t: usize,
) -> ([f64; 36], [f64; 36], [[f64; 12]; 3]) {
    let geo = &space.geometry()[t];
    let mut m = [0.0; 36];
    let mut k = [0.0; 36];
    let mut d = [[0.0; 12]; 3];
    for (l, w) in QUAD_POINTS.iter().zip(QUAD_WEIGHTS) {
        let wa = w * geo.area;
        let phi = p2_values(*l);
        let g = p2_gradients(*l, &geo.grad_lambda);
        for i in 0..6 {
            for j in 0..6 {
                m[6 * i + j] += wa * phi[i] * phi[j];
                k[6 * i + j] += wa * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        for (row, &psi) in d.iter_mut().zip(l.iter()) {
            for j in 0..6 {
                row[j] -= wa * psi * g[j][0];
                row[6 + j] -= wa * psi * g[j][1];
            }
        }
    }
    (m, k, d)
}

/// Mass `M`, vector-Laplacian stiffness `K` and divergence `B`.
pub fn assemble_constant_operators(space: &FunctionSpace) -> ConstantOperators {
    let topo = space.topology();
    let n = topo.num_nodes();
    let ne = space.geometry().len();
    let mut tm = Triplets::with_capacity(2 * n, 2 * n, 72 * ne);
    let mut tk = Triplets::with_capacity(2 * n, 2 * n, 72 * ne);
    let mut tb = Triplets::with_capacity(topo.num_vertices(), 2 * n, 36 * ne);
    let mut local_mass = Vec::with_capacity(ne);
    let mut local_stiffness = Vec::with_capacity(ne);
    let mut local_divergence = Vec::with_capacity(ne);
    for (t, nodes) in topo.element_nodes().iter().enumerate() {
        let (m, k, d) = local_constant(space, t);
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    tm.push(c * n + nodes[i], c * n + nodes[j], m[6 * i + j]);
                    tk.push(c * n + nodes[i], c * n + nodes[j], k[6 * i + j]);
                }
            }
            for (kk, row) in d.iter().enumerate() {
                for j in 0..6 {
                    tb.push(nodes[kk], c * n + nodes[j], row[6 * c + j]);
                }
            }
        }
        local_mass.push(m);
        local_stiffness.push(k);
        local_divergence.push(d);
    }
    ConstantOperators {
        mass: to_csr(&tm),
        stiffness: to_csr(&tk),
        divergence: to_csr(&tb),
        local_mass,
        local_stiffness,
        local_divergence,
    }
}

/// Element matrix of `((w . grad) phi_j, phi_i)` for one velocity component.
pub(crate) fn local_convection(space: &FunctionSpace, t: usize, w: &[f64]) -> [f64; 36] {
    let geo = &space.geometry()[t];
    let nodes = &space.topology().element_nodes()[t];
    let n = space.num_nodes();
    let mut wx = [0.0; 6];
    let mut wy = [0.0; 6];
    for (j, &node) in nodes.iter().enumerate() {
        wx[j] = w[node];
        wy[j] = w[n + node];
    }
    let mut out = [0.0; 36];
    if wx.iter().chain(&wy).all(|&v| v == 0.0) {
        return out;
    }
    for (l, q) in QUAD_POINTS.iter().zip(QUAD_WEIGHTS) {
        let wa = q * geo.area;
        let phi = p2_values(*l);
        let g = p2_gradients(*l, &geo.grad_lambda);
        let (mut ux, mut uy) = (0.0, 0.0);
        for j in 0..6 {
            ux += wx[j] * phi[j];
            uy += wy[j] * phi[j];
        }
        let mut adv = [0.0; 6];
        for j in 0..6 {
            adv[j] = wa * (ux * g[j][0] + uy * g[j][1]);
        }
        for i in 0..6 {
            for j in 0..6 {
                out[6 * i + j] += phi[i] * adv[j];
            }
        }
    }
    out
}

/// Element blocks of the convection derivative: `out[a][b][6 * i + j]` is
/// `(phi_j d w_a / d x_b, phi_i)`, coupling component `a` rows to component
/// `b` columns.
pub(crate) fn local_convection_derivative(
    space: &FunctionSpace,
    t: usize,
    w: &[f64],
) -> [[[f64; 36]; 2]; 2] {
    let geo = &space.geometry()[t];
    let mut out = [[[0.0; 36]; 2]; 2];
    for (l, q) in QUAD_POINTS.iter().zip(QUAD_WEIGHTS) {
        let wa = q * geo.area;
        let phi = p2_values(*l);
        let g = space.velocity_gradient(w, t, *l);
        for i in 0..6 {
            for j in 0..6 {
                let pp = wa * phi[i] * phi[j];
                for a in 0..2 {
                    for b in 0..2 {
                        out[a][b][6 * i + j] += pp * g[a][b];
                    }
                }
            }
        }
    }
    out
}

/// Linearized convection matrix `N(w)` with `(N(w) v)_i = ((w . grad) v, phi_i)`.
pub fn assemble_convection(space: &FunctionSpace, w: &[f64]) -> CsrMatrix {
    let topo = space.topology();
    let n = topo.num_nodes();
    let mut t = Triplets::with_capacity(2 * n, 2 * n, 72 * space.geometry().len());
    for (e, nodes) in topo.element_nodes().iter().enumerate() {
        let local = local_convection(space, e, w);
        for c in 0..2 {
            for i in 0..6 {
                for j in 0..6 {
                    t.push(c * n + nodes[i], c * n + nodes[j], local[6 * i + j]);
                }
            }
        }
    }
    to_csr(&t)
}

/// Load vector `(f(t), phi_i)` for both velocity components.
pub fn assemble_load(
    space: &FunctionSpace,
    f: &dyn Fn(f64, f64, f64) -> [f64; 2],
    time: f64,
) -> Vec<f64> {
    let n = space.num_nodes();
    let mut out = vec![0.0; 2 * n];
    for (e, nodes) in space.topology().element_nodes().iter().enumerate() {
        let geo = &space.geometry()[e];
        for (l, q) in QUAD_POINTS.iter().zip(QUAD_WEIGHTS) {
            let [x, y] = geo.point(*l);
            let fv = f(time, x, y);
            let phi = p2_values(*l);
            for (i, &node) in nodes.iter().enumerate() {
                out[node] += q * geo.area * fv[0] * phi[i];
                out[n + node] += q * geo.area * fv[1] * phi[i];
            }
        }
    }
    out
}
