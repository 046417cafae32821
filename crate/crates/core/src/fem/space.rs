//! Taylor-Hood (P2 velocity / P1 pressure) degrees of freedom on a mesh.
//!
//! Unknown layout of the coupled system: `[u_x nodes | u_y nodes | p vertices]`,
//! where velocity nodes are the mesh vertices followed by the edge midpoints.
//! Everything here that depends only on connectivity lives in [`Topology`]
//! and is shared between a reference mesh and all of its deformations.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use crate::error::{Result, SimError};
use crate::fem::assembly::ConstantOperators;
use crate::fem::basis::{p2_gradients, p2_values, EDGE_LOCAL};
use crate::mesh::{BoundaryTag, Mesh};
use crate::sparse::{to_csr, BandOrdering, CsrMatrix, Triplets};

/// Positions of one element's entries inside the coupled system's value array.
#[derive(Clone, Debug)]
pub(crate) struct ElementSlots {
    /// `velocity[c][6 * i + j]`: block (component c, node i) x (component c, node j).
    pub velocity: [[usize; 36]; 2],
    /// `coupling[a][6 * i + j]`: block (component a, node i) x (component 1 - a, node j).
    pub coupling: [[usize; 36]; 2],
    /// `div[k][6 * c + j]`: pressure row k, velocity column (c, j).
    pub div: [[usize; 12]; 3],
    /// Transpose block: velocity row (c, j), pressure column k, indexed `[c * 6 + j][k]`.
    pub grad: [[usize; 3]; 12],
}

#[derive(Debug)]
pub struct Topology {
    num_vertices: usize,
    edges: Vec<[usize; 2]>,
    element_nodes: Vec<[usize; 6]>,
    /// Velocity nodes on each boundary tag (vertices and edge midpoints), sorted.
    tag_nodes: HashMap<BoundaryTag, Vec<usize>>,
    pattern: CsrMatrix,
    slots: Vec<ElementSlots>,
    diagonal: Vec<usize>,
    ordering: BandOrdering,
}

impl Topology {
    pub fn new(mesh: &Mesh) -> Self {
        let nv = mesh.num_vertices();
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges = Vec::new();
        let mut element_nodes = Vec::with_capacity(mesh.num_triangles());
        for tri in mesh.triangles() {
            let mut nodes = [tri[0], tri[1], tri[2], 0, 0, 0];
            for (k, &[a, b]) in EDGE_LOCAL.iter().enumerate() {
                let key = (tri[a].min(tri[b]), tri[a].max(tri[b]));
                let id = *edge_ids.entry(key).or_insert_with(|| {
                    edges.push([key.0, key.1]);
                    edges.len() - 1
                });
                nodes[3 + k] = nv + id;
            }
            element_nodes.push(nodes);
        }

        let mut tag_nodes: HashMap<BoundaryTag, Vec<usize>> = HashMap::new();
        for e in mesh.boundary_edges() {
            let [a, b] = e.vertices;
            let mid = nv + edge_ids[&(a.min(b), a.max(b))];
            tag_nodes.entry(e.tag).or_default().extend([a, b, mid]);
        }
        for nodes in tag_nodes.values_mut() {
            nodes.sort_unstable();
            nodes.dedup();
        }

        let num_nodes = nv + edges.len();
        let n = 2 * num_nodes + nv;
        let mut t = Triplets::with_capacity(n, n, element_nodes.len() * (144 + 72) + n);
        for nodes in &element_nodes {
            for c in 0..2 {
                for &i in nodes {
                    for &j in nodes {
                        t.push(c * num_nodes + i, c * num_nodes + j, 0.0);
                        t.push(c * num_nodes + i, (1 - c) * num_nodes + j, 0.0);
                    }
                }
                for &k in &nodes[..3] {
                    for &j in nodes {
                        t.push(2 * num_nodes + k, c * num_nodes + j, 0.0);
                        t.push(c * num_nodes + j, 2 * num_nodes + k, 0.0);
                    }
                }
            }
        }
        // pressure diagonal is stored so a pressure row can be pinned
        for k in 0..nv {
            t.push(2 * num_nodes + k, 2 * num_nodes + k, 0.0);
        }
        let pattern = to_csr(&t);

        let pos = |i: usize, j: usize| pattern.position(i, j).expect("entry in pattern");
        let slots = element_nodes
            .iter()
            .map(|nodes| {
                let mut s = ElementSlots {
                    velocity: [[0; 36]; 2],
                    coupling: [[0; 36]; 2],
                    div: [[0; 12]; 3],
                    grad: [[0; 3]; 12],
                };
                for c in 0..2 {
                    for i in 0..6 {
                        for j in 0..6 {
                            s.velocity[c][6 * i + j] =
                                pos(c * num_nodes + nodes[i], c * num_nodes + nodes[j]);
                            s.coupling[c][6 * i + j] =
                                pos(c * num_nodes + nodes[i], (1 - c) * num_nodes + nodes[j]);
                        }
                    }
                    for k in 0..3 {
                        for j in 0..6 {
                            let p = 2 * num_nodes + nodes[k];
                            let v = c * num_nodes + nodes[j];
                            s.div[k][6 * c + j] = pos(p, v);
                            s.grad[6 * c + j][k] = pos(v, p);
                        }
                    }
                }
                s
            })
            .collect();
        let diagonal = (0..n).map(|i| pos(i, i)).collect();
        let ordering = BandOrdering::reverse_cuthill_mckee(&pattern).expect("square pattern");

        Topology {
            num_vertices: nv,
            edges,
            element_nodes,
            tag_nodes,
            pattern,
            slots,
            diagonal,
            ordering,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Velocity nodes: vertices plus edge midpoints.
    pub fn num_nodes(&self) -> usize {
        self.num_vertices + self.edges.len()
    }

    pub fn num_velocity_dofs(&self) -> usize {
        2 * self.num_nodes()
    }

    pub fn num_pressure_dofs(&self) -> usize {
        self.num_vertices
    }

    /// Size of the coupled velocity-pressure system.
    pub fn num_unknowns(&self) -> usize {
        self.num_velocity_dofs() + self.num_pressure_dofs()
    }

    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    pub fn element_nodes(&self) -> &[[usize; 6]] {
        &self.element_nodes
    }

    pub fn boundary_nodes(&self, tag: BoundaryTag) -> &[usize] {
        self.tag_nodes.get(&tag).map_or(&[], Vec::as_slice)
    }

    pub(crate) fn pattern(&self) -> &CsrMatrix {
        &self.pattern
    }

    pub(crate) fn slots(&self) -> &[ElementSlots] {
        &self.slots
    }

    pub(crate) fn diagonal(&self) -> &[usize] {
        &self.diagonal
    }

    pub(crate) fn ordering(&self) -> &BandOrdering {
        &self.ordering
    }
}

/// Per-element affine geometry.
#[derive(Clone, Copy, Debug)]
pub struct ElementGeometry {
    pub area: f64,
    /// Gradients of the three barycentric coordinates.
    pub grad_lambda: [[f64; 2]; 3],
    pub vertices: [[f64; 2]; 3],
}

impl ElementGeometry {
    fn new(p: [[f64; 2]; 3]) -> Self {
        let det =
            (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
        let mut grad_lambda = [[0.0; 2]; 3];
        for i in 0..3 {
            let (j, k) = ((i + 1) % 3, (i + 2) % 3);
            grad_lambda[i] = [(p[j][1] - p[k][1]) / det, (p[k][0] - p[j][0]) / det];
        }
        ElementGeometry {
            area: 0.5 * det,
            grad_lambda,
            vertices: p,
        }
    }

    pub fn point(&self, l: [f64; 3]) -> [f64; 2] {
        let p = &self.vertices;
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }
}

/// Discrete spaces on one (possibly deformed) mesh.
#[derive(Debug)]
pub struct FunctionSpace {
    mesh: Arc<Mesh>,
    topology: Arc<Topology>,
    geometry: Vec<ElementGeometry>,
    node_coords: Vec<[f64; 2]>,
    operators: OnceLock<Arc<ConstantOperators>>,
}

impl FunctionSpace {
    pub fn new(mesh: Arc<Mesh>) -> Arc<Self> {
        let topology = Arc::new(Topology::new(&mesh));
        Self::build(mesh, topology)
    }

    /// Space on a mesh sharing this space's connectivity (front-tracking transfer).
    pub fn on_mesh(&self, mesh: Arc<Mesh>) -> Result<Arc<Self>> {
        if !self.mesh.same_connectivity(&mesh) {
            return Err(SimError::ConnectivityMismatch);
        }
        Ok(Self::build(mesh, Arc::clone(&self.topology)))
    }

    fn build(mesh: Arc<Mesh>, topology: Arc<Topology>) -> Arc<Self> {
        let v = mesh.vertices();
        let geometry = mesh
            .triangles()
            .iter()
            .map(|t| ElementGeometry::new([v[t[0]], v[t[1]], v[t[2]]]))
            .collect();
        let mut node_coords = v.to_vec();
        node_coords.extend(
            topology
                .edges()
                .iter()
                .map(|&[a, b]| [0.5 * (v[a][0] + v[b][0]), 0.5 * (v[a][1] + v[b][1])]),
        );
        Arc::new(FunctionSpace {
            mesh,
            topology,
            geometry,
            node_coords,
            operators: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn geometry(&self) -> &[ElementGeometry] {
        &self.geometry
    }

    pub fn node_coords(&self) -> &[[f64; 2]] {
        &self.node_coords
    }

    pub fn num_nodes(&self) -> usize {
        self.topology.num_nodes()
    }

    /// Unit-parameter mass, stiffness and divergence operators, assembled once.
    pub fn operators(&self) -> &Arc<ConstantOperators> {
        self.operators
            .get_or_init(|| Arc::new(crate::fem::assembly::assemble_constant_operators(self)))
    }

    /// Velocity gradient `G[a][b] = d v_a / d x_b` of a P2 field on element
    /// `t` at barycentric point `l`.
    pub fn velocity_gradient(&self, velocity: &[f64], t: usize, l: [f64; 3]) -> [[f64; 2]; 2] {
        let n = self.num_nodes();
        let nodes = &self.topology.element_nodes[t];
        let g = p2_gradients(l, &self.geometry[t].grad_lambda);
        let mut out = [[0.0; 2]; 2];
        for (j, &node) in nodes.iter().enumerate() {
            for a in 0..2 {
                let v = velocity[a * n + node];
                out[a][0] += v * g[j][0];
                out[a][1] += v * g[j][1];
            }
        }
        out
    }

    /// Velocity of a P2 field on element `t` at barycentric point `l`.
    pub fn velocity_at(&self, velocity: &[f64], t: usize, l: [f64; 3]) -> [f64; 2] {
        let n = self.num_nodes();
        let phi = p2_values(l);
        let nodes = &self.topology.element_nodes[t];
        let mut out = [0.0; 2];
        for (j, &node) in nodes.iter().enumerate() {
            out[0] += velocity[node] * phi[j];
            out[1] += velocity[n + node] * phi[j];
        }
        out
    }
}
