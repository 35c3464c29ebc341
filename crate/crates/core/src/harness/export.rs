use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Legacy ASCII VTK unstructured grid with one point scalar `name`.
pub fn export_field_vtk(mesh: &Mesh, values: &[f64], name: &str, path: &Path) -> Result<()> {
    if values.len() != mesh.n_nodes() {
        return Err(Error::Data(format!(
            "field has {} values for {} nodes",
            values.len(),
            mesh.n_nodes()
        )));
    }
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(Error::Parameter(format!("invalid VTK array name {name:?}")));
    }
    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    let _ = writeln!(s, "{name}");
    s.push_str("ASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(s, "POINTS {} double", mesh.n_nodes());
    for [x, y] in &mesh.nodes {
        let _ = writeln!(s, "{x:?} {y:?} 0");
    }
    let _ = writeln!(s, "CELLS {} {}", mesh.n_triangles(), 4 * mesh.n_triangles());
    for [a, b, c] in &mesh.triangles {
        let _ = writeln!(s, "3 {a} {b} {c}");
    }
    let _ = writeln!(s, "CELL_TYPES {}", mesh.n_triangles());
    for _ in 0..mesh.n_triangles() {
        s.push_str("5\n");
    }
    let _ = writeln!(s, "POINT_DATA {}", mesh.n_nodes());
    let _ = writeln!(s, "SCALARS {name} double 1");
    s.push_str("LOOKUP_TABLE default\n");
    for v in values {
        let _ = writeln!(s, "{v:?}");
    }
    let mut w = create(path)?;
    w.write_all(s.as_bytes())?;
    w.flush()?;
    Ok(())
}

/// CSV with a header row; numbers use the shortest round-trip form.
pub fn export_csv(header: &[&str], rows: &[Vec<f64>], path: &Path) -> Result<()> {
    if let Some(r) = rows.iter().position(|r| r.len() != header.len()) {
        return Err(Error::Data(format!(
            "row {r} has {} columns, header {}",
            rows[r].len(),
            header.len()
        )));
    }
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// `log10 |e|` with zero errors replaced by the smallest nonzero magnitude.
/// An all-zero field maps to zeros.
pub fn log10_error_field(errors: &[f64]) -> Vec<f64> {
    let floor = errors
        .iter()
        .map(|e| e.abs())
        .filter(|&e| e > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return vec![0.0; errors.len()];
    }
    errors.iter().map(|e| e.abs().max(floor).log10()).collect()
}
