use spade::{DelaunayTriangulation, Point2, Triangulation};

use super::signed_area;
use crate::error::{Error, Result};

/// Delaunay triangulation of `points`; triangles index into `points` and are
/// counterclockwise. Duplicate points are rejected.
pub fn delaunay_triangulate(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    if points.len() < 3 {
        return Err(Error::Geometry(format!(
            "cannot triangulate {} points",
            points.len()
        )));
    }
    let mut tri = DelaunayTriangulation::<Point2<f64>>::new();
    for (i, p) in points.iter().enumerate() {
        let handle = tri
            .insert(Point2::new(p[0], p[1]))
            .map_err(|e| Error::Geometry(format!("point {i} rejected by triangulator: {e:?}")))?;
        if handle.index() != i {
            return Err(Error::Geometry(format!(
                "point {i} duplicates point {}",
                handle.index()
            )));
        }
    }
    let mut triangles: Vec<[usize; 3]> = tri
        .inner_faces()
        .map(|f| {
            let v = f.vertices();
            let mut t = [v[0].fix().index(), v[1].fix().index(), v[2].fix().index()];
            if signed_area(points[t[0]], points[t[1]], points[t[2]]) < 0.0 {
                t.swap(1, 2);
            }
            t
        })
        .filter(|t| signed_area(points[t[0]], points[t[1]], points[t[2]]) > 0.0)
        .collect();
    if triangles.is_empty() {
        return Err(Error::Geometry("points are collinear".into()));
    }
    // Canonical order, independent of the triangulator's internal face order.
    for t in &mut triangles {
        let min = (0..3).min_by_key(|&k| t[k]).unwrap();
        t.rotate_left(min);
    }
    triangles.sort_unstable();
    Ok(triangles)
}

/// True when `p` lies strictly inside the circumcircle of the counterclockwise
/// triangle `(a, b, c)` by more than `tol` (on the scaled in-circle determinant).
pub fn in_circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], p: [f64; 2], tol: f64) -> bool {
    let (adx, ady) = (a[0] - p[0], a[1] - p[1]);
    let (bdx, bdy) = (b[0] - p[0], b[1] - p[1]);
    let (cdx, cdy) = (c[0] - p[0], c[1] - p[1]);
    let det = (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy)
        - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady)
        + (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
    det > tol
}
