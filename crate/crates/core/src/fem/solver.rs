use super::sparse::{conjugate_gradient, CsrMatrix};
use super::{
    conductivity, LoadField, Material, SimulationSeries, AMBIENT_TEMPERATURE, CG_TOLERANCE,
    PICARD_MAX_ITERATIONS, PICARD_TOLERANCE,
};
use crate::error::{Error, Result};
use crate::mesh::{signed_area, Mesh, NodeGroup};

/// P1 stiffness of one triangle with constant conductivity `k`.
pub fn element_stiffness(p: [[f64; 2]; 3], k: f64) -> Result<[[f64; 3]; 3]> {
    let area = signed_area(p[0], p[1], p[2]);
    if area.abs() <= f64::EPSILON * 1e-3 {
        return Err(Error::Geometry(format!("degenerate triangle {p:?}")));
    }
    let mut b = [0.0; 3];
    let mut c = [0.0; 3];
    for i in 0..3 {
        let (j, l) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = p[j][1] - p[l][1];
        c[i] = p[l][0] - p[j][0];
    }
    let scale = k / (4.0 * area.abs());
    let mut ke = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            ke[i][j] = scale * (b[i] * b[j] + c[i] * c[j]);
        }
    }
    Ok(ke)
}

fn triangle_points(mesh: &Mesh, t: usize) -> [[f64; 2]; 3] {
    let [a, b, c] = mesh.triangles[t];
    [mesh.nodes[a], mesh.nodes[b], mesh.nodes[c]]
}

/// Lumped mass diagonal and stiffness matrix. Element conductivity is the
/// mean of its vertex values in `conductivity_field`.
pub fn assemble_system(
    mesh: &Mesh,
    material: &Material,
    conductivity_field: &[f64],
) -> Result<(Vec<f64>, CsrMatrix)> {
    if conductivity_field.len() != mesh.n_nodes() {
        return Err(Error::Shape(format!(
            "{} conductivities for {} nodes",
            conductivity_field.len(),
            mesh.n_nodes()
        )));
    }
    if conductivity_field.iter().any(|&k| !(k > 0.0)) {
        return Err(Error::NumericDomain(
            "conductivities must be positive".into(),
        ));
    }
    let mut stiffness = CsrMatrix::mesh_pattern(mesh);
    let mut mass = vec![0.0; mesh.n_nodes()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let p = triangle_points(mesh, t);
        let k_e = tri.iter().map(|&v| conductivity_field[v]).sum::<f64>() / 3.0;
        let ke = element_stiffness(p, k_e)?;
        let share = material.rho_cp * signed_area(p[0], p[1], p[2]).abs() / 3.0;
        for a in 0..3 {
            mass[tri[a]] += share;
            for b in 0..3 {
                stiffness.add(tri[a], tri[b], ke[a][b]);
            }
        }
    }
    Ok((mass, stiffness))
}

/// Consistent load vector. The source acts on the elements whose three
/// vertices are all loaded (P1-interpolated density); when no such element
/// exists it acts on every element touching a loaded node with the largest
/// vertex value as a constant density.
pub fn load_vector(mesh: &Mesh, load: &LoadField) -> Vec<f64> {
    let mut f = vec![0.0; mesh.n_nodes()];
    let loaded = |v: usize| load.q_v[v] > 0.0;
    let full: Vec<usize> = (0..mesh.n_triangles())
        .filter(|&t| mesh.triangles[t].iter().all(|&v| loaded(v)))
        .collect();
    if !full.is_empty() {
        for t in full {
            let tri = mesh.triangles[t];
            let area = mesh.triangle_area(t);
            let q = [load.q_v[tri[0]], load.q_v[tri[1]], load.q_v[tri[2]]];
            let sum: f64 = q.iter().sum();
            for a in 0..3 {
                f[tri[a]] += area / 12.0 * (sum + q[a]);
            }
        }
    } else {
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let q = tri.iter().map(|&v| load.q_v[v]).fold(0.0, f64::max);
            if q > 0.0 {
                let share = q * mesh.triangle_area(t) / 3.0;
                for &v in tri {
                    f[v] += share;
                }
            }
        }
    }
    f
}

/// `M + dt K` with Dirichlet rows and columns eliminated symmetrically.
/// Returns the constrained matrix and the column contribution of the fixed
/// values, to be subtracted from free right-hand-side rows.
fn constrained_operator(
    mass: &[f64],
    stiffness: &CsrMatrix,
    dt: f64,
    fixed: &[bool],
    value: f64,
) -> (CsrMatrix, Vec<f64>) {
    let mut a = stiffness.clone();
    let mut lift = vec![0.0; a.n];
    for i in 0..a.n {
        for k in a.row_ptr[i]..a.row_ptr[i + 1] {
            let j = a.cols[k];
            let mut v = dt * a.values[k];
            if i == j {
                v += mass[i];
            }
            if fixed[i] {
                v = if i == j { 1.0 } else { 0.0 };
            } else if fixed[j] {
                lift[i] += v * value;
                v = 0.0;
            }
            a.values[k] = v;
        }
    }
    (a, lift)
}

struct Problem<'a> {
    mesh: &'a Mesh,
    material: Material,
    fixed: Vec<bool>,
    force: Vec<f64>,
    dt: f64,
}

impl<'a> Problem<'a> {
    fn new(
        mesh: &'a Mesh,
        material: &Material,
        load: &LoadField,
        n_frames: usize,
        dt: f64,
    ) -> Result<Self> {
        mesh.validate()?;
        material.validate()?;
        load.validate(mesh.n_nodes())?;
        if n_frames < 1 {
            return Err(Error::Parameter(
                "at least one time step is required".into(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Parameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        Ok(Problem {
            mesh,
            material: *material,
            fixed: mesh
                .groups
                .iter()
                .map(|&g| g == NodeGroup::DirichletBC)
                .collect(),
            force: load_vector(mesh, load),
            dt,
        })
    }

    fn rhs(&self, mass: &[f64], previous: &[f64], lift: &[f64]) -> Vec<f64> {
        (0..previous.len())
            .map(|i| {
                if self.fixed[i] {
                    AMBIENT_TEMPERATURE
                } else {
                    mass[i] * previous[i] + self.dt * self.force[i] - lift[i]
                }
            })
            .collect()
    }

    fn max_iter(&self) -> usize {
        10 * self.mesh.n_nodes()
    }

    fn series(&self, frames: Vec<Vec<f64>>) -> SimulationSeries {
        SimulationSeries {
            mesh_id: String::new(),
            frames,
            dt: self.dt,
            t_init: AMBIENT_TEMPERATURE,
            t_dirichlet: AMBIENT_TEMPERATURE,
            material: self.material,
        }
    }
}

/// Backward Euler with constant conductivity `k0`; returns `n_frames + 1` frames.
pub fn solve_linear_transient(
    mesh: &Mesh,
    material: &Material,
    load: &LoadField,
    n_frames: usize,
    dt: f64,
) -> Result<SimulationSeries> {
    let problem = Problem::new(mesh, material, load, n_frames, dt)?;
    let k_field = vec![material.k0; mesh.n_nodes()];
    let (mass, stiffness) = assemble_system(mesh, material, &k_field)?;
    let (a, lift) =
        constrained_operator(&mass, &stiffness, dt, &problem.fixed, AMBIENT_TEMPERATURE);
    let mut frames = Vec::with_capacity(n_frames + 1);
    frames.push(vec![AMBIENT_TEMPERATURE; mesh.n_nodes()]);
    for _ in 0..n_frames {
        let prev = frames.last().unwrap();
        let b = problem.rhs(&mass, prev, &lift);
        let mut x = prev.clone();
        conjugate_gradient(&a, &b, &mut x, CG_TOLERANCE, problem.max_iter())?;
        frames.push(x);
    }
    Ok(problem.series(frames))
}

/// Backward Euler with `k(T)` handled by Picard iteration on the
/// conductivity field within every step.
pub fn solve_nonlinear_transient(
    mesh: &Mesh,
    material: &Material,
    load: &LoadField,
    n_frames: usize,
    dt: f64,
) -> Result<SimulationSeries> {
    let problem = Problem::new(mesh, material, load, n_frames, dt)?;
    let mut frames = Vec::with_capacity(n_frames + 1);
    frames.push(vec![AMBIENT_TEMPERATURE; mesh.n_nodes()]);
    for step in 1..=n_frames {
        let prev = frames.last().unwrap().clone();
        let mut candidate = prev.clone();
        let mut converged = false;
        let mut change = f64::INFINITY;
        for _ in 0..PICARD_MAX_ITERATIONS {
            let k_field = candidate
                .iter()
                .map(|&t| conductivity(t, material))
                .collect::<Result<Vec<_>>>()?;
            let (mass, stiffness) = assemble_system(mesh, material, &k_field)?;
            let (a, lift) =
                constrained_operator(&mass, &stiffness, dt, &problem.fixed, AMBIENT_TEMPERATURE);
            let b = problem.rhs(&mass, &prev, &lift);
            let mut next = candidate.clone();
            conjugate_gradient(&a, &b, &mut next, CG_TOLERANCE, problem.max_iter())?;
            let diff = next
                .iter()
                .zip(&candidate)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            let scale = next.iter().map(|v| v.abs()).fold(0.0, f64::max);
            change = diff / scale;
            candidate = next;
            if change < PICARD_TOLERANCE {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::PicardDivergence {
                step,
                iterations: PICARD_MAX_ITERATIONS,
                change,
            });
        }
        frames.push(candidate);
    }
    Ok(problem.series(frames))
}

/// Terms of the discrete energy balance of one linear backward-Euler step.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBalance {
    /// Sum of lumped-capacity weighted temperature changes (J per unit thickness).
    pub stored: f64,
    /// Heat injected through unconstrained nodes over the step.
    pub source: f64,
    /// Heat leaving through Dirichlet nodes over the step.
    pub boundary_outflow: f64,
}

pub fn step_energy_balance(
    mesh: &Mesh,
    material: &Material,
    load: &LoadField,
    previous: &[f64],
    next: &[f64],
    dt: f64,
) -> Result<EnergyBalance> {
    let k_field = vec![material.k0; mesh.n_nodes()];
    let (mass, stiffness) = assemble_system(mesh, material, &k_field)?;
    let force = load_vector(mesh, load);
    let kt = stiffness.mul_vec(next);
    let mut balance = EnergyBalance {
        stored: 0.0,
        source: 0.0,
        boundary_outflow: 0.0,
    };
    for i in 0..mesh.n_nodes() {
        balance.stored += mass[i] * (next[i] - previous[i]);
        if mesh.groups[i] == NodeGroup::DirichletBC {
            balance.boundary_outflow -= dt * kt[i];
        } else {
            balance.source += dt * force[i];
        }
    }
    Ok(balance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::gaussian_load;
    use crate::mesh::{
        generate_irregular_mesh, generate_regular_grid, label_nodes, Polygon, Region,
    };

    fn plate(n: usize, fraction: f64) -> Mesh {
        let m = generate_regular_grid(n, n, 1.0, 1.0).unwrap();
        label_nodes(&m, &Region::top_edge(&m, fraction), &Region::left_edge(&m)).unwrap()
    }

    #[test]
    fn right_triangle_stiffness() {
        let ke = element_stiffness([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], 1.0).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((ke[i][j] - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        assert!(element_stiffness([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 1.0).is_err());
    }

    #[test]
    fn stiffness_rows_sum_to_zero_and_symmetric() {
        let m = generate_irregular_mesh(&Polygon::rectangle(1.0, 1.0), 0.15, 4).unwrap();
        let k: Vec<f64> = (0..m.n_nodes()).map(|i| 1.0 + (i % 7) as f64).collect();
        for field in [vec![3.0; m.n_nodes()], k] {
            let (mass, stiff) = assemble_system(&m, &Material::default(), &field).unwrap();
            assert!(stiff.max_asymmetry() < 1e-12);
            assert!(mass.iter().all(|&v| v > 0.0));
            if field.iter().all(|&v| v == 3.0) {
                for i in 0..m.n_nodes() {
                    let s: f64 = stiff.row(i).map(|(_, v)| v).sum();
                    assert!(s.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn lumped_mass_conserves_capacity() {
        let m = generate_regular_grid(7, 5, 1.0, 1.0).unwrap();
        let mat = Material {
            rho_cp: 1000.0,
            ..Material::default()
        };
        let (mass, _) = assemble_system(&m, &mat, &vec![1.0; m.n_nodes()]).unwrap();
        let trace: f64 = mass.iter().sum();
        assert!((trace - 1000.0 * m.total_area()).abs() < 1e-9);
    }

    #[test]
    fn zero_load_stays_at_ambient() {
        let m = plate(6, 1.0);
        let load = LoadField::zeros(m.n_nodes());
        let s = solve_linear_transient(&m, &Material::default(), &load, 5, 0.1).unwrap();
        assert_eq!(s.n_frames(), 6);
        assert!(s.frames.iter().flatten().all(|&t| t == 298.0));
        let nl = solve_nonlinear_transient(&m, &Material::default(), &load, 5, 0.1).unwrap();
        assert_eq!(nl.frames, s.frames);
    }

    #[test]
    fn dirichlet_nodes_pinned() {
        let m = plate(8, 0.5);
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let s = solve_nonlinear_transient(&m, &Material::default(), &load, 10, 0.05).unwrap();
        for f in &s.frames {
            for i in m.nodes_in_group(NodeGroup::DirichletBC) {
                assert!((f[i] - 298.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn beta_zero_matches_linear() {
        let m = plate(8, 1.0);
        let mat = Material::default().with_beta(0.0);
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let lin = solve_linear_transient(&m, &mat, &load, 20, 0.05).unwrap();
        let nl = solve_nonlinear_transient(&m, &mat, &load, 20, 0.05).unwrap();
        for (a, b) in lin.frames.iter().zip(&nl.frames) {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn nonlinear_runs_hotter_at_source() {
        let m = plate(8, 1.0);
        let mat = Material {
            rho_cp: 200.0,
            k0: 2.0,
            ..Material::default()
        };
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let lin = solve_linear_transient(&m, &mat, &load, 40, 0.25).unwrap();
        let nl = solve_nonlinear_transient(&m, &mat, &load, 40, 0.25).unwrap();
        for i in m.nodes_in_group(NodeGroup::HeatSource) {
            assert!(nl.final_frame()[i] >= lin.final_frame()[i]);
        }
        let gap: f64 = (0..m.n_nodes())
            .map(|i| nl.final_frame()[i] - lin.final_frame()[i])
            .fold(0.0, f64::max);
        assert!(gap > 1.0, "gap {gap}");
    }

    #[test]
    fn temperatures_nondecreasing_in_time() {
        let m = plate(10, 1.0);
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let mat = Material {
            rho_cp: 200.0,
            k0: 2.0,
            ..Material::default()
        };
        for s in [
            solve_linear_transient(&m, &mat, &load, 30, 0.1).unwrap(),
            solve_nonlinear_transient(&m, &mat, &load, 30, 0.1).unwrap(),
        ] {
            for w in s.frames.windows(2) {
                for (a, b) in w[0].iter().zip(&w[1]) {
                    assert!(b - a >= -1e-9, "{a} -> {b}");
                }
            }
        }
    }

    #[test]
    fn energy_balance_per_step() {
        let m = plate(9, 0.5);
        let mat = Material::default();
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let s = solve_linear_transient(&m, &mat, &load, 10, 0.05).unwrap();
        for w in s.frames.windows(2) {
            let e = step_energy_balance(&m, &mat, &load, &w[0], &w[1], 0.05).unwrap();
            let rhs = e.source - e.boundary_outflow;
            // CG stops at 1e-10 of |M T + dt F|, so the balance is exact relative to the
            // heat content M T, not to the much smaller per-step input
            let (mass, _) = assemble_system(&m, &mat, &vec![mat.k0; m.n_nodes()]).unwrap();
            let content: f64 = mass.iter().zip(&w[1]).map(|(m, t)| m * t).sum();
            assert!((e.stored - rhs).abs() <= 1e-8 * content, "{e:?}");
            assert!((e.stored - rhs).abs() <= 1e-6 * e.source, "{e:?}");
        }
    }

    #[test]
    fn gaussian_source_heats_around_center() {
        let m = generate_regular_grid(11, 11, 1.0, 1.0).unwrap();
        let center = 5 * 11 + 5;
        let m = label_nodes(&m, &Region::Node { index: center }, &Region::left_edge(&m)).unwrap();
        let load = gaussian_load(&m, center, 0.15, 60.0).unwrap();
        let s = solve_linear_transient(&m, &Material::default(), &load, 5, 0.1).unwrap();
        let last = s.final_frame();
        let hottest = (0..m.n_nodes())
            .max_by(|&a, &b| last[a].total_cmp(&last[b]))
            .unwrap();
        assert_eq!(hottest, center);
    }

    #[test]
    fn deterministic_bitwise() {
        let m = plate(7, 1.0);
        let load = LoadField::on_group(&m, NodeGroup::HeatSource, 15000.0);
        let a = solve_nonlinear_transient(&m, &Material::default(), &load, 5, 0.1).unwrap();
        let b = solve_nonlinear_transient(&m, &Material::default(), &load, 5, 0.1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn invalid_arguments() {
        let m = plate(4, 1.0);
        let load = LoadField::zeros(m.n_nodes());
        assert!(solve_linear_transient(&m, &Material::default(), &load, 0, 0.1).is_err());
        assert!(solve_linear_transient(&m, &Material::default(), &load, 1, 0.0).is_err());
        let short = LoadField::zeros(3);
        assert!(solve_linear_transient(&m, &Material::default(), &short, 1, 0.1).is_err());
    }

    /// Strip of length 1 with both ends at 298 K and uniform source `q`;
    /// returns the max error of the piecewise-linear bottom-row profile
    /// against 298 + q x (1 - x) / (2 k), sampled densely.
    fn strip_error(nx: usize, q: f64, k: f64) -> (f64, f64) {
        let mut m = generate_regular_grid(nx, 2, 1.0, 0.05).unwrap();
        for (i, p) in m.nodes.iter().enumerate() {
            m.groups[i] = if p[0] == 0.0 || p[0] == 1.0 {
                NodeGroup::DirichletBC
            } else {
                NodeGroup::HeatSource
            };
        }
        let mat = Material {
            rho_cp: 1.0,
            k0: k,
            beta: 0.0,
            t0: 298.0,
        };
        let load = LoadField {
            q_v: vec![q; m.n_nodes()],
        };
        let s = solve_linear_transient(&m, &mat, &load, 4, 1e6).unwrap();
        let t = s.final_frame();
        let exact = |x: f64| 298.0 + q * x * (1.0 - x) / (2.0 * k);
        let h = 1.0 / (nx - 1) as f64;
        let mut nodal: f64 = 0.0;
        for i in 0..nx {
            nodal = nodal.max((t[i] - exact(i as f64 * h)).abs());
            assert!(
                (t[i] - t[i + nx]).abs() < 1e-6,
                "profile not uniform across the strip"
            );
        }
        let mut sampled: f64 = 0.0;
        for s in 0..=1000 {
            let x = s as f64 / 1000.0;
            let cell = ((x / h) as usize).min(nx - 2);
            let w = x / h - cell as f64;
            let interp = (1.0 - w) * t[cell] + w * t[cell + 1];
            sampled = sampled.max((interp - exact(x)).abs());
        }
        (nodal, sampled)
    }

    #[test]
    fn strip_matches_analytic_steady_state() {
        let (q, k) = (800.0, 1.0);
        let rise = q / (8.0 * k);
        let (nodal, sampled) = strip_error(41, q, k);
        assert!(nodal <= 0.005 * rise, "nodal {nodal}");
        assert!(sampled <= 0.005 * rise, "sampled {sampled}");
    }

    #[test]
    fn strip_error_decreases_under_refinement() {
        let errs: Vec<f64> = [6, 11, 21]
            .iter()
            .map(|&n| strip_error(n, 800.0, 1.0).1)
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        // piecewise-linear interpolation error is second order
        assert!(errs[1] / errs[2] > 3.5, "{errs:?}");
    }
}
