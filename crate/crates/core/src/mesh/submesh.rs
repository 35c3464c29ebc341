use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{delaunay_triangulate, Mesh, NodeGroup};
use crate::error::{Error, Result};

/// Sorted parent indices kept by [`extract_submesh`]: every labelled node plus
/// a seeded uniform sample of interior nodes, `ceil(keep_fraction * n)` in total.
pub fn sample_submesh_nodes(mesh: &Mesh, keep_fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(Error::Parameter(format!(
            "keep fraction must lie in (0, 1], got {keep_fraction}"
        )));
    }
    let n = mesh.n_nodes();
    let target = ((keep_fraction * n as f64) - 1e-9).ceil() as usize;
    let (labelled, mut interior): (Vec<usize>, Vec<usize>) =
        (0..n).partition(|&i| mesh.groups[i] != NodeGroup::Interior);
    let extra = target.saturating_sub(labelled.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    interior.shuffle(&mut rng);
    let mut kept: Vec<usize> = labelled
        .into_iter()
        .chain(interior.into_iter().take(extra))
        .collect();
    kept.sort_unstable();
    if kept.len() < 3 {
        return Err(Error::Geometry(format!(
            "submesh would keep only {} nodes",
            kept.len()
        )));
    }
    Ok(kept)
}

/// Keeps a node subset and reconnects it by Delaunay triangulation. Kept
/// nodes retain their coordinates and labels; the triangulation covers the
/// convex hull of the kept nodes.
pub fn extract_submesh(mesh: &Mesh, keep_fraction: f64, seed: u64) -> Result<Mesh> {
    let kept = sample_submesh_nodes(mesh, keep_fraction, seed)?;
    let nodes: Vec<[f64; 2]> = kept.iter().map(|&i| mesh.nodes[i]).collect();
    let groups = kept.iter().map(|&i| mesh.groups[i]).collect();
    let triangles = delaunay_triangulate(&nodes)?;
    let sub = Mesh {
        nodes,
        triangles,
        groups,
        domain_params: mesh.domain_params,
    };
    sub.validate()?;
    Ok(sub)
}
