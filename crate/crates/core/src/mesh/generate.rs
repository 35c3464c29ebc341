use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{delaunay_triangulate, Mesh, NodeGroup, Polygon};
use crate::error::{Error, Result};

/// Structured `nx x ny` grid on `[0, width] x [0, height]`, each cell split
/// along its lower-left to upper-right diagonal. Node `(i, j)` has index
/// `j * nx + i`.
pub fn generate_regular_grid(nx: usize, ny: usize, width: f64, height: f64) -> Result<Mesh> {
    if nx < 2 || ny < 2 {
        return Err(Error::Parameter(format!(
            "grid needs at least 2 nodes per side, got {nx} x {ny}"
        )));
    }
    if !(width > 0.0 && height > 0.0) {
        return Err(Error::Parameter(format!(
            "grid extents must be positive, got {width} x {height}"
        )));
    }
    let mut nodes = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            nodes.push([
                width * i as f64 / (nx - 1) as f64,
                height * j as f64 / (ny - 1) as f64,
            ]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let bl = j * nx + i;
            let (br, tl) = (bl + 1, bl + nx);
            let tr = tl + 1;
            triangles.push([bl, br, tr]);
            triangles.push([bl, tr, tl]);
        }
    }
    Mesh::new(nodes, triangles)
}

/// Boundary nodes at spacing `h` plus a jittered interior lattice
/// (uniform jitter of a quarter spacing per axis), Delaunay-triangulated and
/// clipped to the polygon.
pub fn generate_irregular_mesh(
    domain: &Polygon,
    target_edge_length: f64,
    seed: u64,
) -> Result<Mesh> {
    let h = target_edge_length;
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Parameter(format!(
            "target edge length must be positive, got {h}"
        )));
    }
    let domain = Polygon::new(domain.vertices().to_vec())?;
    let mut points = domain.boundary_points(h);
    let [xmin, xmax, ymin, ymax] = domain.bounding_box();
    let nx = ((xmax - xmin) / h).round().max(1.0) as usize;
    let ny = ((ymax - ymin) / h).round().max(1.0) as usize;
    let (sx, sy) = ((xmax - xmin) / nx as f64, (ymax - ymin) / ny as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for j in 1..ny {
        for i in 1..nx {
            let jx: f64 = rng.random_range(-0.25..0.25);
            let jy: f64 = rng.random_range(-0.25..0.25);
            let p = [xmin + (i as f64 + jx) * sx, ymin + (j as f64 + jy) * sy];
            // Points closer than half a spacing to the boundary would break
            // the boundary edges out of the Delaunay triangulation.
            if domain.contains(p) && domain.distance_to_boundary(p) >= 0.5 * h {
                points.push(p);
            }
        }
    }
    let all = delaunay_triangulate(&points)?;
    let triangles: Vec<[usize; 3]> = all
        .into_iter()
        .filter(|t| {
            let c = [
                (points[t[0]][0] + points[t[1]][0] + points[t[2]][0]) / 3.0,
                (points[t[0]][1] + points[t[1]][1] + points[t[2]][1]) / 3.0,
            ];
            domain.contains(c)
        })
        .collect();
    let mesh = Mesh {
        groups: vec![NodeGroup::Interior; points.len()],
        nodes: points,
        triangles,
        domain_params: None,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// L-shaped domain on a `base x base` square: a full-width top arm of height
/// `a * base / 2` and a full-height left leg of width `b * base / 2`; the
/// lower-right rectangle is removed.
pub fn lshape_polygon(a: f64, b: f64, base: f64) -> Result<Polygon> {
    for (name, v) in [("a", a), ("b", b)] {
        if !(0.4..=1.2).contains(&v) {
            return Err(Error::Parameter(format!(
                "L-shape parameter {name} = {v} outside [0.4, 1.2]"
            )));
        }
    }
    if !(base > 0.0) {
        return Err(Error::Parameter(format!(
            "base must be positive, got {base}"
        )));
    }
    let leg = 0.5 * b * base;
    let notch_top = base - 0.5 * a * base;
    Polygon::new(vec![
        [0.0, 0.0],
        [leg, 0.0],
        [leg, notch_top],
        [base, notch_top],
        [base, base],
        [0.0, base],
    ])
}

pub fn generate_lshape(
    a: f64,
    b: f64,
    base: f64,
    target_edge_length: f64,
    seed: u64,
) -> Result<Mesh> {
    let poly = lshape_polygon(a, b, base)?;
    let mut mesh = generate_irregular_mesh(&poly, target_edge_length, seed)?;
    mesh.domain_params = Some([a, b]);
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{in_circumcircle, mesh_to_edges};

    #[test]
    fn single_cell_grid() {
        let m = generate_regular_grid(2, 2, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(mesh_to_edges(&m).len() / 2, 5);
        assert!((0..2).all(|t| m.triangle_area(t) > 0.0));
    }

    #[test]
    fn three_by_three_grid() {
        let m = generate_regular_grid(3, 3, 1.0, 1.0).unwrap();
        assert_eq!(m.n_nodes(), 9);
        assert_eq!(m.n_triangles(), 8);
        // 6 horizontal + 6 vertical + 4 diagonals, both directions
        let edges = mesh_to_edges(&m);
        assert_eq!(edges.len(), 32);
        let diagonals = edges.edges.iter().filter(|[i, j]| {
            let (a, b) = (m.nodes[*i], m.nodes[*j]);
            a[0] != b[0] && a[1] != b[1]
        });
        assert_eq!(diagonals.count(), 8);
    }

    #[test]
    fn grid_counts_general() {
        for (nx, ny) in [(2, 5), (7, 3), (15, 15)] {
            let m = generate_regular_grid(nx, ny, 2.0, 1.0).unwrap();
            assert_eq!(m.n_nodes(), nx * ny);
            assert_eq!(m.n_triangles(), 2 * (nx - 1) * (ny - 1));
        }
    }

    #[test]
    fn interior_grid_node_has_six_triangulation_neighbours() {
        let m = generate_regular_grid(5, 5, 1.0, 1.0).unwrap();
        let e = mesh_to_edges(&m);
        let center = 2 * 5 + 2;
        assert_eq!(e.edges.iter().filter(|x| x[0] == center).count(), 6);
    }

    #[test]
    fn invalid_grid_dimensions() {
        assert!(matches!(
            generate_regular_grid(1, 4, 1.0, 1.0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_regular_grid(3, 4, 0.0, 1.0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn irregular_mesh_inside_square() {
        let sq = Polygon::rectangle(1.0, 1.0);
        let m = generate_irregular_mesh(&sq, 0.5, 1).unwrap();
        for t in &m.triangles {
            let c = [
                (m.nodes[t[0]][0] + m.nodes[t[1]][0] + m.nodes[t[2]][0]) / 3.0,
                (m.nodes[t[0]][1] + m.nodes[t[1]][1] + m.nodes[t[2]][1]) / 3.0,
            ];
            assert!(sq.contains(c));
        }
        assert!((m.total_area() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn irregular_mesh_is_deterministic() {
        let sq = Polygon::rectangle(1.0, 1.0);
        let a = generate_irregular_mesh(&sq, 0.1, 1).unwrap();
        let b = generate_irregular_mesh(&sq, 0.1, 1).unwrap();
        assert_eq!(a, b);
        let c = generate_irregular_mesh(&sq, 0.1, 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn halving_edge_length_quadruples_nodes() {
        let sq = Polygon::rectangle(1.0, 1.0);
        let coarse = generate_irregular_mesh(&sq, 0.1, 1).unwrap().n_nodes() as f64;
        let fine = generate_irregular_mesh(&sq, 0.05, 1).unwrap().n_nodes() as f64;
        let ratio = fine / coarse;
        assert!((ratio - 4.0).abs() <= 0.3 * 4.0, "ratio {ratio}");
    }

    #[test]
    fn irregular_mesh_is_delaunay() {
        let m = generate_irregular_mesh(&Polygon::rectangle(1.0, 1.0), 0.15, 7).unwrap();
        for t in &m.triangles {
            let (a, b, c) = (m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]);
            for (i, &p) in m.nodes.iter().enumerate() {
                if t.contains(&i) {
                    continue;
                }
                assert!(!in_circumcircle(a, b, c, p, 1e-9));
            }
        }
    }

    #[test]
    fn lshape_area_matches_analytic() {
        for (a, b) in [(1.2, 1.2), (0.4, 1.2), (1.0, 0.4), (0.8, 0.8), (0.4, 0.4)] {
            let m = generate_lshape(a, b, 1.0, 0.07, 3).unwrap();
            let analytic = 1.0 - (1.0 - 0.5 * b) * (1.0 - 0.5 * a);
            let rel = (m.total_area() - analytic).abs() / analytic;
            assert!(
                rel < 1e-9,
                "a={a} b={b} area {} vs {analytic}",
                m.total_area()
            );
            assert_eq!(m.domain_params, Some([a, b]));
        }
    }

    #[test]
    fn nearly_full_lshape() {
        let m = generate_lshape(1.2, 1.2, 1.0, 0.07, 3).unwrap();
        assert!((m.total_area() - 0.84).abs() < 1e-9);
    }

    #[test]
    fn tall_notch_lshape() {
        // a = 0.4, b = 1.2: thin top arm, wide left leg, notch taller than wide.
        let poly = lshape_polygon(0.4, 1.2, 1.0).unwrap();
        assert!(poly.contains([0.3, 0.1]));
        assert!(!poly.contains([0.8, 0.5]));
        assert!(poly.contains([0.8, 0.95]));
        let notch_w = 1.0 - 0.6;
        let notch_h = 1.0 - 0.2;
        assert!(notch_h > notch_w);
    }

    #[test]
    fn lshape_parameter_range() {
        assert!(matches!(
            generate_lshape(0.3, 1.0, 1.0, 0.1, 1),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            generate_lshape(1.0, 1.3, 1.0, 0.1, 1),
            Err(Error::Parameter(_))
        ));
    }
}
