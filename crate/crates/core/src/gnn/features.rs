use std::sync::Arc;

use crate::error::{Error, Result};
use crate::mesh::{EdgeList, Mesh, NodeGroup};
use crate::nncore::{MinMaxScaler, Tensor2D};

/// Directed edges split into receiver (first index, the aggregating node)
/// and sender columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeIndex {
    pub receivers: Arc<[usize]>,
    pub senders: Arc<[usize]>,
}

impl EdgeIndex {
    pub fn from_edge_list(edges: &EdgeList) -> Self {
        EdgeIndex {
            receivers: edges.edges.iter().map(|e| e[0]).collect(),
            senders: edges.edges.iter().map(|e| e[1]).collect(),
        }
    }

    pub fn from_pairs(pairs: &[[usize; 2]]) -> Self {
        EdgeIndex {
            receivers: pairs.iter().map(|e| e[0]).collect(),
            senders: pairs.iter().map(|e| e[1]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.receivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.receivers.is_empty()
    }
}

/// `[normalized temperature, one-hot(Interior, HeatSource, DirichletBC)]`
/// per node; the temperature uses channel 0 of `scaler`.
pub fn build_node_features(
    frame: &[f64],
    groups: &[NodeGroup],
    scaler: &MinMaxScaler,
) -> Result<Tensor2D> {
    if frame.len() != groups.len() {
        return Err(Error::Data(format!(
            "{} temperatures for {} labelled nodes",
            frame.len(),
            groups.len()
        )));
    }
    let mut data = Vec::with_capacity(4 * frame.len());
    for (&t, g) in frame.iter().zip(groups) {
        data.push(scaler.apply_value(0, t));
        data.extend_from_slice(&g.one_hot());
    }
    Tensor2D::new(frame.len(), 4, data)
}

/// Same as [`build_node_features`] for raw integer labels.
pub fn build_node_features_from_labels(
    frame: &[f64],
    labels: &[u8],
    scaler: &MinMaxScaler,
) -> Result<Tensor2D> {
    let groups = labels
        .iter()
        .map(|&l| NodeGroup::try_from(l).map_err(Error::Data))
        .collect::<Result<Vec<_>>>()?;
    build_node_features(frame, &groups, scaler)
}

/// `[x_i - x_j, |x_i - x_j|]` per directed edge (i, j), unnormalized.
pub fn build_edge_features(mesh: &Mesh, edges: &EdgeList) -> Tensor2D {
    let mut data = Vec::with_capacity(3 * edges.len());
    for &[i, j] in &edges.edges {
        let (a, b) = (mesh.nodes[i], mesh.nodes[j]);
        let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
        data.extend_from_slice(&[dx, dy, dx.hypot(dy)]);
    }
    Tensor2D::new(edges.len(), 3, data).unwrap()
}

/// One graph: node features, edge features and per-node targets.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphSample {
    pub node_features: Tensor2D,
    pub edge_features: Tensor2D,
    pub edges: EdgeIndex,
    pub targets: Option<Vec<f64>>,
}

impl GraphSample {
    pub fn new(
        node_features: Tensor2D,
        edge_features: Tensor2D,
        edges: EdgeIndex,
        targets: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = node_features.rows;
        if edge_features.rows != edges.len() {
            return Err(Error::Shape(format!(
                "{} edge feature rows for {} edges",
                edge_features.rows,
                edges.len()
            )));
        }
        if edges
            .receivers
            .iter()
            .chain(edges.senders.iter())
            .any(|&i| i >= n)
        {
            return Err(Error::Shape(format!(
                "edge references a node outside 0..{n}"
            )));
        }
        if let Some(t) = &targets {
            if t.len() % n.max(1) != 0 || t.is_empty() != (n == 0) {
                return Err(Error::Shape(format!("{} targets for {n} nodes", t.len())));
            }
        }
        Ok(GraphSample {
            node_features,
            edge_features,
            edges,
            targets,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.rows
    }
}

/// Block-diagonal union of several graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphBatch {
    pub node_features: Tensor2D,
    pub edge_features: Tensor2D,
    pub edges: EdgeIndex,
    pub targets: Option<Tensor2D>,
    pub n_nodes: usize,
    /// First node of each member graph, plus the total at the end.
    pub node_offsets: Vec<usize>,
}

impl GraphBatch {
    pub fn from_samples(samples: &[&GraphSample]) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Shape("empty batch".into()))?;
        let (nf, ef) = (first.node_features.cols, first.edge_features.cols);
        if samples
            .iter()
            .any(|s| s.node_features.cols != nf || s.edge_features.cols != ef)
        {
            return Err(Error::Shape(
                "batch members have different feature widths".into(),
            ));
        }
        let n_nodes: usize = samples.iter().map(|s| s.n_nodes()).sum();
        let n_edges: usize = samples.iter().map(|s| s.edges.len()).sum();
        let mut nodes = Vec::with_capacity(n_nodes * nf);
        let mut efeat = Vec::with_capacity(n_edges * ef);
        let mut recv = Vec::with_capacity(n_edges);
        let mut send = Vec::with_capacity(n_edges);
        let mut offsets = Vec::with_capacity(samples.len() + 1);
        let with_targets = samples.iter().all(|s| s.targets.is_some());
        let mut targets = Vec::new();
        let mut offset = 0;
        for s in samples {
            offsets.push(offset);
            nodes.extend_from_slice(&s.node_features.data);
            efeat.extend_from_slice(&s.edge_features.data);
            recv.extend(s.edges.receivers.iter().map(|&i| i + offset));
            send.extend(s.edges.senders.iter().map(|&i| i + offset));
            if with_targets {
                targets.extend_from_slice(s.targets.as_ref().unwrap());
            }
            offset += s.n_nodes();
        }
        offsets.push(offset);
        let targets = if with_targets {
            let out = targets.len() / n_nodes.max(1);
            Some(Tensor2D::new(n_nodes, out, targets)?)
        } else {
            None
        };
        Ok(GraphBatch {
            node_features: Tensor2D::new(n_nodes, nf, nodes)?,
            edge_features: Tensor2D::new(n_edges, ef, efeat)?,
            edges: EdgeIndex {
                receivers: recv.into(),
                senders: send.into(),
            },
            targets,
            n_nodes,
            node_offsets: offsets,
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }

    /// Rows of `values` (n_nodes x cols) belonging to member graph `g`.
    pub fn split<'a>(&self, values: &'a Tensor2D, g: usize) -> &'a [f64] {
        let c = values.cols;
        &values.data[self.node_offsets[g] * c..self.node_offsets[g + 1] * c]
    }
}
