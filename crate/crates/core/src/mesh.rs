//! Channel triangulation and front-tracking deformation.
//!
//! The reference mesh covers the rectangle `[-a, a] x [-b, b]`. A deformed
//! mesh for concentration `u` is obtained by scaling every vertex vertically,
//! `y -> y * (b - gamma(u, x)) / b`, so both walls follow `|y| = b - gamma`
//! while connectivity and boundary tags stay fixed.

use std::io::Write;
use std::sync::Arc;

use log::warn;

use crate::error::{Result, SimError};
use crate::vtk;

/// Fraction of the half-height at which a narrowing warning is emitted.
pub const PINCH_WARNING_FRACTION: f64 = 0.95;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    Inflow,
    Outflow,
    WallTop,
    WallBottom,
}

impl BoundaryTag {
    pub fn is_wall(self) -> bool {
        matches!(self, BoundaryTag::WallTop | BoundaryTag::WallBottom)
    }
}

/// A boundary edge, oriented counter-clockwise with respect to its owning
/// triangle (so the domain lies to the left of `vertices[0] -> vertices[1]`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
    pub triangle: usize,
}

/// Wall edge with its outward unit normal and length.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WallEdge {
    pub vertices: [usize; 2],
    pub tag: BoundaryTag,
    pub triangle: usize,
    pub normal: [f64; 2],
    pub length: f64,
}

/// Height reduction `gamma(u, x)` of the walls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ShapeFunction {
    /// `u * exp(-(x / width)^2)`; `width = 1` is the standard bump.
    Gaussian { width: f64 },
    /// `u * (1 + cos(pi x / half_width)) / 2` on `|x| < half_width`, zero outside.
    RaisedCosine { half_width: f64 },
}

impl Default for ShapeFunction {
    fn default() -> Self {
        ShapeFunction::Gaussian { width: 1.0 }
    }
}

impl ShapeFunction {
    pub fn height(&self, u: f64, x: f64) -> f64 {
        match *self {
            ShapeFunction::Gaussian { width } => {
                let s = x / width;
                u * (-s * s).exp()
            }
            ShapeFunction::RaisedCosine { half_width } => {
                if x.abs() < half_width {
                    0.5 * u * (1.0 + (std::f64::consts::PI * x / half_width).cos())
                } else {
                    0.0
                }
            }
        }
    }

    /// Maximum of `gamma(u, x)` over `x` in `[-a, a]`. Both shapes peak at `x = 0`.
    pub fn max_height(&self, u: f64, _half_length: f64) -> f64 {
        self.height(u, 0.0)
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Arc<Vec<[usize; 3]>>,
    boundary_edges: Arc<Vec<BoundaryEdge>>,
    half_length: f64,
    half_height: f64,
    concentration: f64,
}

impl Mesh {
    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn boundary_edges(&self) -> &[BoundaryEdge] {
        &self.boundary_edges
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    /// Half-height `b` of the undeformed channel.
    pub fn half_height(&self) -> f64 {
        self.half_height
    }

    /// Concentration the mesh was deformed to (0 for the reference mesh).
    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// True if both meshes share triangles and boundary edges.
    pub fn same_connectivity(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len()
            && (Arc::ptr_eq(&self.triangles, &other.triangles) || self.triangles == other.triangles)
            && (Arc::ptr_eq(&self.boundary_edges, &other.boundary_edges)
                || self.boundary_edges == other.boundary_edges)
    }

    pub fn signed_area(&self, triangle: usize) -> f64 {
        let [i, j, k] = self.triangles[triangle];
        let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1]))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn centroid(&self, triangle: usize) -> [f64; 2] {
        let [i, j, k] = self.triangles[triangle];
        let (p, q, r) = (self.vertices[i], self.vertices[j], self.vertices[k]);
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Writes the mesh as a legacy-VTK ASCII unstructured grid.
    pub fn write_vtk<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        vtk::write_triangles(w, "channel mesh", &self.vertices, &self.triangles, &[], &[])
    }
}

/// Structured triangulation of `[-a, a] x [-b, b]` with `2 * nx * ny` triangles.
///
/// Vertex `(i, j)` sits at `x = -a + 2a i / nx`, `y = -b + 2b j / ny` and has
/// index `i * (ny + 1) + j`. Each cell is split along its rising diagonal.
pub fn build_reference_mesh(a: f64, b: f64, nx: usize, ny: usize) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(SimError::InvalidParameter(format!(
            "mesh needs nx, ny >= 1 (got {nx}, {ny})"
        )));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(SimError::InvalidParameter(format!(
            "channel extents must be positive (a={a}, b={b})"
        )));
    }
    let id = |i: usize, j: usize| i * (ny + 1) + j;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        // Endpoints are set exactly so that inflow/outflow x are exactly -a/+a.
        let x = if i == nx {
            a
        } else {
            -a + 2.0 * a * i as f64 / nx as f64
        };
        for j in 0..=ny {
            let y = if j == ny {
                b
            } else {
                -b + 2.0 * b * j as f64 / ny as f64
            };
            vertices.push([x, y]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let cell = |i: usize, j: usize| 2 * (i * ny + j);

    let mut boundary_edges = Vec::with_capacity(2 * (nx + ny));
    for i in 0..nx {
        boundary_edges.push(BoundaryEdge {
            vertices: [id(i, 0), id(i + 1, 0)],
            tag: BoundaryTag::WallBottom,
            triangle: cell(i, 0),
        });
    }
    for j in 0..ny {
        boundary_edges.push(BoundaryEdge {
            vertices: [id(nx, j), id(nx, j + 1)],
            tag: BoundaryTag::Outflow,
            triangle: cell(nx - 1, j),
        });
    }
    for i in (0..nx).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [id(i + 1, ny), id(i, ny)],
            tag: BoundaryTag::WallTop,
            triangle: cell(i, ny - 1) + 1,
        });
    }
    for j in (0..ny).rev() {
        boundary_edges.push(BoundaryEdge {
            vertices: [id(0, j + 1), id(0, j)],
            tag: BoundaryTag::Inflow,
            triangle: cell(0, j) + 1,
        });
    }

    Ok(Mesh {
        vertices,
        triangles: Arc::new(triangles),
        boundary_edges: Arc::new(boundary_edges),
        half_length: a,
        half_height: b,
        concentration: 0.0,
    })
}

/// Checks the pinch condition for concentration `u` without building a mesh.
pub fn check_pinch(u: f64, shape: &ShapeFunction, a: f64, b: f64) -> Result<()> {
    let max_height = shape.max_height(u, a);
    if max_height >= b {
        return Err(SimError::DomainCollapse {
            max_height,
            half_height: b,
        });
    }
    if max_height >= PINCH_WARNING_FRACTION * b {
        warn!("channel nearly pinched: wall height reduction {max_height:.4} of half-height {b}");
    }
    Ok(())
}

/// Moves the reference vertices to the walls of `Omega(u)`.
pub fn deform_mesh(reference: &Mesh, u: f64, shape: &ShapeFunction) -> Result<Mesh> {
    if u < 0.0 || u.is_nan() {
        return Err(SimError::NegativeConcentration(u));
    }
    let b = reference.half_height;
    check_pinch(u, shape, reference.half_length, b)?;
    let vertices = reference
        .vertices
        .iter()
        .map(|&[x, y]| [x, y * (b - shape.height(u, x)) / b])
        .collect();
    Ok(Mesh {
        vertices,
        triangles: Arc::clone(&reference.triangles),
        boundary_edges: Arc::clone(&reference.boundary_edges),
        half_length: reference.half_length,
        half_height: b,
        concentration: u,
    })
}

/// Edges on the top and bottom walls with outward unit normals.
pub fn wall_edges(mesh: &Mesh) -> Vec<WallEdge> {
    mesh.boundary_edges
        .iter()
        .filter(|e| e.tag.is_wall())
        .map(|e| {
            let p = mesh.vertices[e.vertices[0]];
            let q = mesh.vertices[e.vertices[1]];
            let (tx, ty) = (q[0] - p[0], q[1] - p[1]);
            let length = tx.hypot(ty);
            WallEdge {
                vertices: e.vertices,
                tag: e.tag,
                triangle: e.triangle,
                // domain is on the left of a CCW edge, so the right-hand normal points out
                normal: [ty / length, -tx / length],
                length,
            }
        })
        .collect()
}
