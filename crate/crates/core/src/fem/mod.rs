//! Transient P1 finite elements for the heat equation.
//!
//! The linear model uses a constant conductivity `k0`; the nonlinear ground
//! truth uses `k(T) = k0 / (1 + beta (T - T0))`. Both are integrated with
//! backward Euler on a lumped mass matrix, Dirichlet nodes held at 298 K.

mod io;
mod solver;
mod sparse;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh, NodeGroup};

pub use io::{read_series_binary, series_to_csv, write_series_binary};
pub use solver::{
    assemble_system, element_stiffness, load_vector, solve_linear_transient,
    solve_nonlinear_transient, step_energy_balance, EnergyBalance,
};
pub use sparse::{conjugate_gradient, CgStats, CsrMatrix};

/// Initial and boundary temperature used by every simulation (K).
pub const AMBIENT_TEMPERATURE: f64 = 298.0;

/// Relative tolerance of the conjugate-gradient solves.
pub const CG_TOLERANCE: f64 = 1e-10;
pub const PICARD_TOLERANCE: f64 = 1e-8;
pub const PICARD_MAX_ITERATIONS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Volumetric heat capacity, J m^-3 K^-1.
    pub rho_cp: f64,
    /// Reference conductivity, W m^-1 K^-1.
    pub k0: f64,
    /// Nonlinearity coefficient, K^-1.
    pub beta: f64,
    /// Reference temperature, K.
    #[serde(rename = "T0")]
    pub t0: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            rho_cp: 1.0e3,
            k0: 50.0,
            beta: 1.2e-3,
            t0: AMBIENT_TEMPERATURE,
        }
    }
}

impl Material {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho_cp > 0.0 && self.k0 > 0.0 && self.beta >= 0.0 && self.t0.is_finite()) {
            return Err(Error::Parameter(format!("invalid material {self:?}")));
        }
        Ok(())
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// Temperature-dependent conductivity `k0 / (1 + beta (T - T0))`.
pub fn conductivity(temperature: f64, material: &Material) -> Result<f64> {
    let denom = 1.0 + material.beta * (temperature - material.t0);
    if !(denom > 0.0) {
        return Err(Error::NumericDomain(format!(
            "conductivity undefined at T = {temperature} K (1 + beta (T - T0) = {denom})"
        )));
    }
    Ok(material.k0 / denom)
}

/// Per-node volumetric heat source (W m^-3).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadField {
    pub q_v: Vec<f64>,
}

impl LoadField {
    pub fn zeros(n: usize) -> Self {
        LoadField { q_v: vec![0.0; n] }
    }

    /// `power` on every node of `group`, zero elsewhere.
    pub fn on_group(mesh: &Mesh, group: NodeGroup, power: f64) -> Self {
        LoadField {
            q_v: mesh
                .groups
                .iter()
                .map(|&g| if g == group { power } else { 0.0 })
                .collect(),
        }
    }

    pub fn validate(&self, n_nodes: usize) -> Result<()> {
        if self.q_v.len() != n_nodes {
            return Err(Error::Shape(format!(
                "load field has {} entries for {} nodes",
                self.q_v.len(),
                n_nodes
            )));
        }
        if self.q_v.iter().any(|&q| !(q >= 0.0 && q.is_finite())) {
            return Err(Error::Parameter(
                "load values must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Gaussian source `p_max exp(-|x - x_c|^2 / (2 sigma^2))` centered on a node.
pub fn gaussian_load(mesh: &Mesh, center: usize, sigma: f64, p_max: f64) -> Result<LoadField> {
    if center >= mesh.n_nodes() {
        return Err(Error::Parameter(format!(
            "center node {center} out of range for {} nodes",
            mesh.n_nodes()
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::Parameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let c = mesh.nodes[center];
    let q_v = mesh
        .nodes
        .iter()
        .map(|p| {
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            p_max * (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Ok(LoadField { q_v })
}

/// Time-ordered temperature frames of one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSeries {
    pub mesh_id: String,
    pub frames: Vec<Vec<f64>>,
    pub dt: f64,
    pub t_init: f64,
    pub t_dirichlet: f64,
    pub material: Material,
}

impl SimulationSeries {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    pub fn final_frame(&self) -> &[f64] {
        self.frames.last().map(Vec::as_slice).unwrap_or(&[])
    }

    /// Same series restricted to the given node indices.
    pub fn restrict(&self, nodes: &[usize]) -> SimulationSeries {
        SimulationSeries {
            frames: self
                .frames
                .iter()
                .map(|f| nodes.iter().map(|&i| f[i]).collect())
                .collect(),
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_regular_grid;

    #[test]
    fn conductivity_values() {
        let m = Material::default();
        assert_eq!(conductivity(298.0, &m).unwrap(), m.k0);
        let lin = m.with_beta(0.0);
        assert_eq!(conductivity(1234.0, &lin).unwrap(), lin.k0);
        let k = conductivity(298.0 + 1000.0, &Material { k0: 50.0, ..m }).unwrap();
        assert!((k - 50.0 / 2.2).abs() < 1e-12);
        assert!((k - 22.7273).abs() < 1e-4);
    }

    #[test]
    fn conductivity_domain_error() {
        let m = Material {
            beta: 0.01,
            ..Material::default()
        };
        assert!(matches!(
            conductivity(100.0, &m),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn gaussian_load_values() {
        let mesh = generate_regular_grid(11, 11, 1.0, 1.0).unwrap();
        let center = 5 * 11 + 5;
        let sigma = 0.2;
        let load = gaussian_load(&mesh, center, sigma, 60.0).unwrap();
        assert_eq!(load.q_v[center], 60.0);
        // node two grid steps to the right is exactly sigma away
        let at_sigma = load.q_v[center + 2];
        assert!((at_sigma - 60.0 * (-0.5f64).exp()).abs() < 1e-12);
        assert!((at_sigma / 60.0 - 0.6065).abs() < 1e-4);
        assert!(load.q_v.iter().all(|&q| q > 0.0 && q <= 60.0));
    }

    #[test]
    fn gaussian_load_rejects_bad_center() {
        let mesh = generate_regular_grid(3, 3, 1.0, 1.0).unwrap();
        assert!(gaussian_load(&mesh, 9, 0.1, 1.0).is_err());
        assert!(gaussian_load(&mesh, 0, 0.0, 1.0).is_err());
    }
}
