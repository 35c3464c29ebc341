use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{DatasetConfig, LoadSpec, MeshSpec, Role, ShapeSpec};
use crate::error::{Error, Result};
use crate::fem::{
    gaussian_load, solve_linear_transient, solve_nonlinear_transient, LoadField, SimulationSeries,
};
use crate::mesh::{
    extract_submesh, generate_irregular_mesh, generate_lshape, generate_regular_grid, label_nodes,
    sample_submesh_nodes, Mesh, NodeGroup, Polygon, Region,
};

pub const GENERATOR_VERSION: &str = concat!("hybrid-twin ", env!("CARGO_PKG_VERSION"));

/// One simulated design: a labelled mesh with paired linear and nonlinear
/// series.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignRecord {
    pub id: String,
    pub role: Role,
    pub mesh: Mesh,
    pub linear: SimulationSeries,
    pub nonlinear: SimulationSeries,
    /// Parent-mesh index of every node of a submesh design.
    pub parent_nodes: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub config: DatasetConfig,
    pub config_hash: String,
    pub generator_version: String,
    pub designs: Vec<DesignRecord>,
}

impl DatasetBundle {
    pub fn design(&self, id: &str) -> Result<&DesignRecord> {
        self.designs.iter().find(|d| d.id == id).ok_or_else(|| {
            Error::Config(format!("bundle {} has no design {id:?}", self.config.name))
        })
    }

    pub fn with_role(&self, role: Role) -> Vec<&DesignRecord> {
        self.designs.iter().filter(|d| d.role == role).collect()
    }
}

/// Simulation job before solving.
struct Job {
    id: String,
    role: Role,
    mesh: Mesh,
    load: LoadField,
}

fn base_mesh(shape: &ShapeSpec, spec: &MeshSpec, seed: u64) -> Result<Mesh> {
    match (shape, spec) {
        (ShapeSpec::Rectangle { width, height }, MeshSpec::Regular { nx, ny }) => {
            generate_regular_grid(*nx, *ny, *width, *height)
        }
        (ShapeSpec::Rectangle { width, height }, MeshSpec::Irregular { h }) => {
            generate_irregular_mesh(&Polygon::rectangle(*width, *height), *h, seed)
        }
        (ShapeSpec::Lshape { a, b }, MeshSpec::Irregular { h }) => {
            generate_lshape(*a, *b, 1.0, *h, seed)
        }
        (_, MeshSpec::Submesh { parent, .. }) => base_mesh(shape, parent, seed),
        (ShapeSpec::Lshape { .. }, MeshSpec::Regular { .. }) => {
            Err(Error::Config("regular grids only mesh rectangles".into()))
        }
    }
}

fn shape_id(shape: &ShapeSpec, single: bool) -> String {
    match shape {
        _ if single => "main".into(),
        ShapeSpec::Rectangle { width, height } => format!("w{width:.2}_h{height:.2}"),
        ShapeSpec::Lshape { a, b } => format!("a{a:.2}_b{b:.2}"),
    }
}

/// Seeded uniform choice of `count` nodes off the bounding-box boundary with
/// pairwise distance at least `min_distance`.
pub fn sample_gaussian_centers(
    mesh: &Mesh,
    count: usize,
    min_distance: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    let [xmin, xmax, ymin, ymax] = mesh.bounding_box();
    let tol = 1e-9 * (xmax - xmin).max(ymax - ymin);
    let mut candidates: Vec<usize> = (0..mesh.n_nodes())
        .filter(|&i| {
            let [x, y] = mesh.nodes[i];
            x > xmin + tol && x < xmax - tol && y > ymin + tol && y < ymax - tol
        })
        .collect();
    candidates.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = Vec::with_capacity(count);
    for c in candidates {
        if chosen.len() == count {
            break;
        }
        let p = mesh.nodes[c];
        let far = chosen.iter().all(|&q| {
            let o = mesh.nodes[q];
            (p[0] - o[0]).hypot(p[1] - o[1]) >= min_distance
        });
        if far {
            chosen.push(c);
        }
    }
    if chosen.len() < count {
        return Err(Error::Config(format!(
            "only {} of {count} Gaussian centers fit with separation {min_distance}",
            chosen.len()
        )));
    }
    Ok(chosen)
}

fn jobs(config: &DatasetConfig) -> Result<Vec<Job>> {
    let single = config.shapes.len() == 1;
    let mut out = Vec::new();
    for (s, design) in config.shapes.iter().enumerate() {
        let seed = config.seed.wrapping_add(s as u64);
        let mesh = base_mesh(&design.shape, &config.mesh, seed)?;
        let id = shape_id(&design.shape, single);
        let bc = Region::left_edge(&mesh);
        match &config.load {
            LoadSpec::BoundaryStrip { fraction, power } => {
                let mesh = label_nodes(&mesh, &Region::top_edge(&mesh, *fraction), &bc)?;
                let load = LoadField::on_group(&mesh, NodeGroup::HeatSource, *power);
                out.push(Job {
                    id,
                    role: design.role,
                    mesh,
                    load,
                });
            }
            LoadSpec::Gaussian {
                p_max,
                sigma_fraction,
                min_separation_fraction,
                n_train,
                n_eval,
            } => {
                let [xmin, xmax, ..] = mesh.bounding_box();
                let width = xmax - xmin;
                let centers = sample_gaussian_centers(
                    &mesh,
                    n_train + n_eval,
                    min_separation_fraction * width,
                    seed,
                )?;
                for (k, &c) in centers.iter().enumerate() {
                    let labelled = label_nodes(&mesh, &Region::Node { index: c }, &bc)?;
                    let load = gaussian_load(&labelled, c, sigma_fraction * width, *p_max)?;
                    out.push(Job {
                        id: format!("g{k:02}"),
                        role: if k < *n_train {
                            Role::Train
                        } else {
                            Role::Eval
                        },
                        mesh: labelled,
                        load,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn solve(config: &DatasetConfig, job: Job) -> Result<Vec<DesignRecord>> {
    let mut linear = solve_linear_transient(
        &job.mesh,
        &config.material.with_beta(0.0),
        &job.load,
        config.n_steps,
        config.dt,
    )?;
    let mut nonlinear = solve_nonlinear_transient(
        &job.mesh,
        &config.material,
        &job.load,
        config.n_steps,
        config.dt,
    )?;
    linear.mesh_id = job.id.clone();
    nonlinear.mesh_id = job.id.clone();
    match &config.mesh {
        MeshSpec::Submesh { fraction, .. } => {
            let seed = config.seed;
            let kept = sample_submesh_nodes(&job.mesh, *fraction, seed)?;
            let sub = extract_submesh(&job.mesh, *fraction, seed)?;
            let sub_id = |base: &str| {
                if base == "main" {
                    ("parent".to_string(), "sub".to_string())
                } else {
                    (format!("{base}_parent"), format!("{base}_sub"))
                }
            };
            let (parent_id, child_id) = sub_id(&job.id);
            let mut sub_lin = linear.restrict(&kept);
            let mut sub_nl = nonlinear.restrict(&kept);
            sub_lin.mesh_id = child_id.clone();
            sub_nl.mesh_id = child_id.clone();
            linear.mesh_id = parent_id.clone();
            nonlinear.mesh_id = parent_id.clone();
            Ok(vec![
                DesignRecord {
                    id: parent_id,
                    role: Role::Eval,
                    mesh: job.mesh,
                    linear,
                    nonlinear,
                    parent_nodes: None,
                },
                DesignRecord {
                    id: child_id,
                    role: job.role,
                    mesh: sub,
                    linear: sub_lin,
                    nonlinear: sub_nl,
                    parent_nodes: Some(kept),
                },
            ])
        }
        _ => Ok(vec![DesignRecord {
            id: job.id,
            role: job.role,
            mesh: job.mesh,
            linear,
            nonlinear,
            parent_nodes: None,
        }]),
    }
}

/// Generates every design of the configuration; designs are solved
/// concurrently and returned in configuration order.
pub fn build_dataset(config: &DatasetConfig) -> Result<DatasetBundle> {
    config.validate()?;
    let jobs = jobs(config)?;
    let solved: Vec<Vec<DesignRecord>> = jobs
        .into_par_iter()
        .map(|job| {
            let id = job.id.clone();
            solve(config, job).map_err(|e| Error::Design {
                design: id,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    Ok(DatasetBundle {
        config: config.clone(),
        config_hash: config.hash()?,
        generator_version: GENERATOR_VERSION.to_string(),
        designs: solved.into_iter().flatten().collect(),
    })
}
