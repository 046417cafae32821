//! Legacy-VTK ASCII writer for triangle meshes with point data.

use std::io::{self, Write};

const VTK_TRIANGLE: u8 = 5;

/// Writes an unstructured grid of triangles. `scalars` and `vectors` are
/// `(name, values)` pairs with one entry per point.
pub fn write_triangles<W: Write>(
    w: &mut W,
    title: &str,
    points: &[[f64; 2]],
    triangles: &[[usize; 3]],
    scalars: &[(&str, &[f64])],
    vectors: &[(&str, &[[f64; 2]])],
) -> io::Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{:e} {:e} 0", p[0], p[1])?;
    }
    writeln!(w, "CELLS {} {}", triangles.len(), 4 * triangles.len())?;
    for t in triangles {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2])?;
    }
    writeln!(w, "CELL_TYPES {}", triangles.len())?;
    for _ in triangles {
        writeln!(w, "{VTK_TRIANGLE}")?;
    }
    if scalars.is_empty() && vectors.is_empty() {
        return Ok(());
    }
    writeln!(w, "POINT_DATA {}", points.len())?;
    for (name, values) in scalars {
        writeln!(w, "SCALARS {name} double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;
        for v in values.iter() {
            writeln!(w, "{v:e}")?;
        }
    }
    for (name, values) in vectors {
        writeln!(w, "VECTORS {name} double")?;
        for v in values.iter() {
            writeln!(w, "{:e} {:e} 0", v[0], v[1])?;
        }
    }
    Ok(())
}
