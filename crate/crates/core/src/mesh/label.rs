use serde::{Deserialize, Serialize};

use super::{Mesh, NodeGroup};
use crate::error::{Error, Result};

const TOL: f64 = 1e-9;

/// Node selector used to place loads and boundary conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    /// Closed axis-aligned box `[x0, x1] x [y0, y1]` (with a small tolerance).
    Box { x: [f64; 2], y: [f64; 2] },
    /// A single node, e.g. the center of a Gaussian source.
    Node { index: usize },
}

impl Region {
    /// Left side of the mesh bounding box.
    pub fn left_edge(mesh: &Mesh) -> Region {
        let [xmin, _, ymin, ymax] = mesh.bounding_box();
        Region::Box {
            x: [xmin, xmin],
            y: [ymin, ymax],
        }
    }

    /// Top side of the bounding box restricted to `x <= xmin + fraction * width`.
    pub fn top_edge(mesh: &Mesh, fraction: f64) -> Region {
        let [xmin, xmax, _, ymax] = mesh.bounding_box();
        Region::Box {
            x: [xmin, xmin + fraction * (xmax - xmin)],
            y: [ymax, ymax],
        }
    }

    pub fn contains(&self, index: usize, p: [f64; 2]) -> bool {
        match self {
            Region::Box { x, y } => {
                p[0] >= x[0] - TOL && p[0] <= x[1] + TOL && p[1] >= y[0] - TOL && p[1] <= y[1] + TOL
            }
            Region::Node { index: i } => *i == index,
        }
    }
}

/// Labels nodes: boundary-condition matches first, then load matches, the
/// rest interior.
pub fn label_nodes(mesh: &Mesh, load_region: &Region, bc_region: &Region) -> Result<Mesh> {
    for r in [load_region, bc_region] {
        if let Region::Node { index } = r {
            if *index >= mesh.n_nodes() {
                return Err(Error::Config(format!(
                    "region node {index} out of range for {} nodes",
                    mesh.n_nodes()
                )));
            }
        }
    }
    let mut out = mesh.clone();
    for (i, &p) in mesh.nodes.iter().enumerate() {
        out.groups[i] = if bc_region.contains(i, p) {
            NodeGroup::DirichletBC
        } else if load_region.contains(i, p) {
            NodeGroup::HeatSource
        } else {
            NodeGroup::Interior
        };
    }
    if !out.groups.contains(&NodeGroup::DirichletBC) {
        return Err(Error::Config(
            "boundary-condition region matches no node; the problem is ill-posed".into(),
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_regular_grid;

    #[test]
    fn bc_wins_on_overlap() {
        let m = generate_regular_grid(5, 5, 1.0, 1.0).unwrap();
        let l = label_nodes(&m, &Region::top_edge(&m, 1.0), &Region::left_edge(&m)).unwrap();
        let top_left = 4 * 5;
        assert_eq!(l.groups[top_left], NodeGroup::DirichletBC);
    }

    #[test]
    fn three_by_three_counts() {
        let m = generate_regular_grid(3, 3, 1.0, 1.0).unwrap();
        let l = label_nodes(&m, &Region::top_edge(&m, 1.0), &Region::left_edge(&m)).unwrap();
        let count = |g| l.groups.iter().filter(|&&x| x == g).count();
        assert_eq!(count(NodeGroup::DirichletBC), 3);
        assert_eq!(count(NodeGroup::HeatSource), 2);
        assert_eq!(count(NodeGroup::Interior), 4);
    }

    #[test]
    fn half_top_edge() {
        let m = generate_regular_grid(5, 5, 1.0, 1.0).unwrap();
        let l = label_nodes(&m, &Region::top_edge(&m, 0.5), &Region::left_edge(&m)).unwrap();
        assert_eq!(l.nodes_in_group(NodeGroup::HeatSource), vec![21, 22]);
    }

    #[test]
    fn gaussian_center_node() {
        let m = generate_regular_grid(4, 4, 1.0, 1.0).unwrap();
        let l = label_nodes(&m, &Region::Node { index: 7 }, &Region::left_edge(&m)).unwrap();
        assert_eq!(l.nodes_in_group(NodeGroup::HeatSource), vec![7]);
    }

    #[test]
    fn empty_bc_is_config_error() {
        let m = generate_regular_grid(3, 3, 1.0, 1.0).unwrap();
        let nowhere = Region::Box {
            x: [5.0, 6.0],
            y: [5.0, 6.0],
        };
        assert!(matches!(
            label_nodes(&m, &Region::top_edge(&m, 1.0), &nowhere),
            Err(Error::Config(_))
        ));
    }
}
