use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Compressed sparse row matrix with a fixed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Zero matrix with the node-adjacency pattern of `mesh` (plus diagonal).
    pub fn mesh_pattern(mesh: &Mesh) -> Self {
        let n = mesh.n_nodes();
        let mut adj: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for tri in &mesh.triangles {
            for a in 0..3 {
                for b in 0..3 {
                    if a != b {
                        adj[tri[a]].push(tri[b]);
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        row_ptr.push(0);
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
            cols.extend_from_slice(row);
            row_ptr.push(cols.len());
        }
        let nnz = cols.len();
        CsrMatrix {
            n,
            row_ptr,
            cols,
            values: vec![0.0; nnz],
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let row = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        row.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |k| self.values[k])
    }

    /// Adds `v` at `(i, j)`; the entry must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.values[k] += v;
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.values[k]))
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Outcome of a converged conjugate-gradient solve.
#[derive(Debug, Clone, Copy)]
pub struct CgStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradient for SPD `a`, warm-started from `x`.
/// Converges when `|r| <= tol * |b|`.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> Result<CgStats> {
    let n = a.n;
    let inv_diag: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgStats {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut r = a.mul_vec(x);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r_norm <= tol * b_norm {
        return Ok(CgStats {
            iterations: 0,
            relative_residual: r_norm / b_norm,
        });
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(r, d)| r * d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::SolverDivergence {
                iterations: it,
                residual: r_norm / b_norm,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r_norm <= tol * b_norm {
            return Ok(CgStats {
                iterations: it,
                relative_residual: r_norm / b_norm,
            });
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDivergence {
        iterations: max_iter,
        residual: r_norm / b_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_regular_grid;

    #[test]
    fn cg_on_spd_tridiagonal() {
        // 1D Laplacian with Dirichlet ends folded in: tridiag(-1, 2, -1).
        let mesh = generate_regular_grid(6, 2, 1.0, 1.0).unwrap();
        let mut a = CsrMatrix::mesh_pattern(&mesh);
        for i in 0..a.n {
            a.add(i, i, 4.0);
            for j in [i.wrapping_sub(1), i + 1] {
                if j < a.n && a.position(i, j).is_some() {
                    a.add(i, j, -1.0);
                }
            }
        }
        let x_true: Vec<f64> = (0..a.n).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x_true);
        let mut x = vec![0.0; a.n];
        let stats = conjugate_gradient(&a, &b, &mut x, 1e-12, 100).unwrap();
        assert!(stats.relative_residual <= 1e-12);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn cg_reports_non_convergence() {
        let mesh = generate_regular_grid(10, 10, 1.0, 1.0).unwrap();
        let mut a = CsrMatrix::mesh_pattern(&mesh);
        for i in 0..a.n {
            a.add(i, i, 1.0 + i as f64);
        }
        for i in 0..a.n - 1 {
            if a.position(i, i + 1).is_some() {
                a.add(i, i + 1, -0.4);
                a.add(i + 1, i, -0.4);
            }
        }
        let b = vec![1.0; a.n];
        let mut x = vec![0.0; a.n];
        let err = conjugate_gradient(&a, &b, &mut x, 1e-14, 1).unwrap_err();
        assert!(matches!(err, Error::SolverDivergence { iterations: 1, .. }));
    }
}
