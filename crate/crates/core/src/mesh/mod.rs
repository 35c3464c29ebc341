//! Two-dimensional triangular meshes.
//!
//! A [`Mesh`] is the geometric substrate shared by the finite-element solver
//! and the graph network: node coordinates, counterclockwise triangles and a
//! group label per node. [`mesh_to_edges`] derives the bidirectional graph
//! connectivity used by message passing.

mod delaunay;
mod generate;
mod label;
mod polygon;
mod submesh;

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use delaunay::{delaunay_triangulate, in_circumcircle};
pub use generate::{
    generate_irregular_mesh, generate_lshape, generate_regular_grid, lshape_polygon,
};
pub use label::{label_nodes, Region};
pub use polygon::Polygon;
pub use submesh::{extract_submesh, sample_submesh_nodes};

/// Node role used for boundary conditions and the one-hot node feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum NodeGroup {
    Interior,
    HeatSource,
    DirichletBC,
}

impl NodeGroup {
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut v = [0.0; 3];
        v[self.index()] = 1.0;
        v
    }
}

impl From<NodeGroup> for u8 {
    fn from(g: NodeGroup) -> u8 {
        g as u8
    }
}

impl TryFrom<u8> for NodeGroup {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(NodeGroup::Interior),
            1 => Ok(NodeGroup::HeatSource),
            2 => Ok(NodeGroup::DirichletBC),
            other => Err(format!("unknown node group label {other}")),
        }
    }
}

/// Triangular mesh. Field names double as the on-disk JSON schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    pub groups: Vec<NodeGroup>,
    #[serde(default)]
    pub domain_params: Option<[f64; 2]>,
}

/// Directed edges, both orientations of every mesh edge, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeList {
    pub edges: Vec<[usize; 2]>,
}

impl EdgeList {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

pub fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds a mesh with every node labelled interior and checks invariants.
    pub fn new(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let groups = vec![NodeGroup::Interior; nodes.len()];
        let mesh = Mesh {
            nodes,
            triangles,
            groups,
            domain_params: None,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.triangle_area(t))
            .sum()
    }

    /// `[xmin, xmax, ymin, ymax]`
    pub fn bounding_box(&self) -> [f64; 4] {
        let mut bb = [
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        ];
        for p in &self.nodes {
            bb[0] = bb[0].min(p[0]);
            bb[1] = bb[1].max(p[0]);
            bb[2] = bb[2].min(p[1]);
            bb[3] = bb[3].max(p[1]);
        }
        bb
    }

    pub fn nodes_in_group(&self, group: NodeGroup) -> Vec<usize> {
        (0..self.n_nodes())
            .filter(|&i| self.groups[i] == group)
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.groups.len() != n {
            return Err(Error::Geometry(format!(
                "{} group labels for {} nodes",
                self.groups.len(),
                n
            )));
        }
        if self
            .nodes
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(Error::Geometry("non-finite node coordinate".into()));
        }
        let mut used = vec![false; n];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                if v >= n {
                    return Err(Error::Geometry(format!(
                        "triangle {t} references node {v} but the mesh has {n} nodes"
                    )));
                }
                used[v] = true;
            }
            let area = self.triangle_area(t);
            if area <= 0.0 {
                return Err(Error::Geometry(format!(
                    "triangle {t} is degenerate or clockwise (signed area {area:e})"
                )));
            }
        }
        if let Some(orphan) = used.iter().position(|u| !u) {
            return Err(Error::Geometry(format!(
                "node {orphan} belongs to no triangle"
            )));
        }
        Ok(())
    }

    /// Translates every node by `offset`.
    pub fn translated(&self, offset: [f64; 2]) -> Mesh {
        let mut m = self.clone();
        for p in &mut m.nodes {
            p[0] += offset[0];
            p[1] += offset[1];
        }
        m
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Mesh> {
        let mesh: Mesh = serde_json::from_str(text)?;
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Mesh> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Mesh::from_json(&fs::read_to_string(path)?)
    }
}

/// Both orientations of every triangle edge, sorted lexicographically.
pub fn mesh_to_edges(mesh: &Mesh) -> EdgeList {
    let mut undirected = BTreeSet::new();
    for tri in &mesh.triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            undirected.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<[usize; 2]> = undirected
        .into_iter()
        .flat_map(|(a, b)| [[a, b], [b, a]])
        .collect();
    edges.sort_unstable();
    EdgeList { edges }
}
