//! Encode-process-decode graph network with residual message passing and
//! mean aggregation.

mod features;

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nncore::{
    Activation, Architecture, BoundMlp, Checkpoint, InputBlock, MinMaxScaler, MlpParams,
    ParamArray, Tape, Tensor2D, Var, CHECKPOINT_FORMAT,
};

pub use features::{
    build_edge_features, build_node_features, build_node_features_from_labels, EdgeIndex,
    GraphBatch, GraphSample,
};

pub const NODE_FEATURES: usize = 4;
pub const EDGE_FEATURES: usize = 3;
pub const DEFAULT_HIDDEN_DIM: usize = 64;
pub const DEFAULT_MESSAGE_PASSING_STEPS: usize = 10;
/// Hidden layers per MLP.
pub const MLP_HIDDEN_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessorLayer {
    pub edge: MlpParams,
    pub node: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub node_encoder: MlpParams,
    pub edge_encoder: MlpParams,
    pub processor: Vec<ProcessorLayer>,
    pub decoder: MlpParams,
    pub hidden_dim: usize,
}

fn widths(input: usize, hidden: usize, out: usize) -> Vec<usize> {
    let mut d = vec![input];
    d.extend(std::iter::repeat_n(hidden, MLP_HIDDEN_LAYERS));
    d.push(out);
    d
}

/// Seeded Glorot initialization of every encoder, processor and decoder MLP.
pub fn init_model(
    seed: u64,
    hidden_dim: usize,
    k: usize,
    node_feat_dim: usize,
    edge_feat_dim: usize,
    out_dim: usize,
) -> Result<GnnModel> {
    if hidden_dim == 0 || k == 0 || node_feat_dim == 0 || edge_feat_dim == 0 || out_dim == 0 {
        return Err(Error::Parameter(format!(
            "model dimensions must be positive (hidden {hidden_dim}, K {k}, in {node_feat_dim}/{edge_feat_dim}, out {out_dim})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hidden_dim;
    let node_encoder = MlpParams::new(
        &mut rng,
        &widths(node_feat_dim, h, h),
        Activation::Relu,
        true,
    )?;
    let edge_encoder = MlpParams::new(
        &mut rng,
        &widths(edge_feat_dim, h, h),
        Activation::Relu,
        true,
    )?;
    let mut processor = Vec::with_capacity(k);
    for _ in 0..k {
        processor.push(ProcessorLayer {
            edge: MlpParams::new(&mut rng, &widths(3 * h, h, h), Activation::Relu, true)?,
            node: MlpParams::new(&mut rng, &widths(2 * h, h, h), Activation::Relu, true)?,
        });
    }
    let decoder = MlpParams::new(&mut rng, &widths(h, h, out_dim), Activation::Relu, false)?;
    Ok(GnnModel {
        node_encoder,
        edge_encoder,
        processor,
        decoder,
        hidden_dim,
    })
}

/// Model parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundGnn {
    node_encoder: BoundMlp,
    edge_encoder: BoundMlp,
    processor: Vec<(BoundMlp, BoundMlp)>,
    decoder: BoundMlp,
}

impl BoundGnn {
    /// Parameter handles in the model's enumeration order.
    pub fn vars(&self) -> Vec<Var> {
        let mut v = self.node_encoder.vars();
        v.extend(self.edge_encoder.vars());
        for (e, n) in &self.processor {
            v.extend(e.vars());
            v.extend(n.vars());
        }
        v.extend(self.decoder.vars());
        v
    }

    /// Encoded node and edge latents.
    pub fn encode(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<(Var, Var)> {
        let x = tape.constant(batch.node_features.clone());
        let e = tape.constant(batch.edge_features.clone());
        Ok((
            self.node_encoder.forward(tape, x)?,
            self.edge_encoder.forward(tape, e)?,
        ))
    }

    /// Runs the K residual message-passing layers.
    pub fn process(
        &self,
        tape: &mut Tape,
        batch: &GraphBatch,
        mut hv: Var,
        mut he: Var,
    ) -> Result<(Var, Var)> {
        let recv = &batch.edges.receivers;
        let send = &batch.edges.senders;
        for (edge, node) in &self.processor {
            let blocks = [
                InputBlock::Dense(he),
                InputBlock::Gathered {
                    source: hv,
                    index: recv.clone(),
                },
                InputBlock::Gathered {
                    source: hv,
                    index: send.clone(),
                },
            ];
            he = edge.forward_blocks(tape, &blocks, Some(he))?;
            let agg = tape.segment_mean(he, recv, batch.n_nodes)?;
            hv = node.forward_blocks(
                tape,
                &[InputBlock::Dense(hv), InputBlock::Dense(agg)],
                Some(hv),
            )?;
        }
        Ok((hv, he))
    }

    pub fn forward(&self, tape: &mut Tape, batch: &GraphBatch) -> Result<Var> {
        let (hv, he) = self.encode(tape, batch)?;
        let (hv, _) = self.process(tape, batch, hv, he)?;
        self.decoder.forward(tape, hv)
    }
}

impl GnnModel {
    pub fn message_passing_steps(&self) -> usize {
        self.processor.len()
    }

    pub fn node_features(&self) -> usize {
        self.node_encoder.in_dim()
    }

    pub fn edge_features(&self) -> usize {
        self.edge_encoder.in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.decoder.out_dim()
    }

    fn mlps(&self) -> Vec<(String, &MlpParams)> {
        let mut v = vec![
            ("node_encoder".to_string(), &self.node_encoder),
            ("edge_encoder".to_string(), &self.edge_encoder),
        ];
        for (k, l) in self.processor.iter().enumerate() {
            v.push((format!("processor.{k}.edge"), &l.edge));
            v.push((format!("processor.{k}.node"), &l.node));
        }
        v.push(("decoder".to_string(), &self.decoder));
        v
    }

    /// Every parameter in the fixed enumeration order: node encoder, edge
    /// encoder, per processor layer edge then node MLP, decoder.
    pub fn params(&self) -> Vec<&Tensor2D> {
        self.mlps()
            .into_iter()
            .flat_map(|(_, m)| m.params())
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut v = self.node_encoder.params_mut();
        v.extend(self.edge_encoder.params_mut());
        for l in &mut self.processor {
            v.extend(l.edge.params_mut());
            v.extend(l.node.params_mut());
        }
        v.extend(self.decoder.params_mut());
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (prefix, m) in self.mlps() {
            for i in 0..m.layers.len() {
                names.push(format!("{prefix}.{i}.weight"));
                names.push(format!("{prefix}.{i}.bias"));
            }
            if m.output_norm.is_some() {
                names.push(format!("{prefix}.norm.gamma"));
                names.push(format!("{prefix}.norm.beta"));
            }
        }
        names
    }

    pub fn n_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGnn {
        BoundGnn {
            node_encoder: self.node_encoder.bind(tape, trainable),
            edge_encoder: self.edge_encoder.bind(tape, trainable),
            processor: self
                .processor
                .iter()
                .map(|l| (l.edge.bind(tape, trainable), l.node.bind(tape, trainable)))
                .collect(),
            decoder: self.decoder.bind(tape, trainable),
        }
    }

    fn check_batch(&self, batch: &GraphBatch) -> Result<()> {
        if batch.node_features.cols != self.node_features()
            || batch.edge_features.cols != self.edge_features()
        {
            return Err(Error::Shape(format!(
                "batch has {}/{} node/edge features, model expects {}/{}",
                batch.node_features.cols,
                batch.edge_features.cols,
                self.node_features(),
                self.edge_features()
            )));
        }
        Ok(())
    }

    /// Per-node outputs (n_nodes x out_dim) without gradient tracking.
    pub fn forward(&self, batch: &GraphBatch) -> Result<Tensor2D> {
        self.check_batch(batch)?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let y = bound.forward(&mut tape, batch)?;
        Ok(tape.value(y).clone())
    }

    pub fn forward_sample(&self, sample: &GraphSample) -> Result<Tensor2D> {
        self.forward(&GraphBatch::from_samples(&[sample])?)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            hidden_dim: self.hidden_dim,
            message_passing_steps: self.message_passing_steps(),
            node_features: self.node_features(),
            edge_features: self.edge_features(),
            out_dim: self.out_dim(),
            hidden_layers: MLP_HIDDEN_LAYERS,
            activation: Activation::Relu,
        }
    }

    pub fn to_checkpoint(
        &self,
        scalers: BTreeMap<String, MinMaxScaler>,
        metadata: BTreeMap<String, String>,
    ) -> Checkpoint {
        let params = self
            .param_names()
            .into_iter()
            .zip(self.params())
            .map(|(name, p)| ParamArray {
                name,
                rows: p.rows,
                cols: p.cols,
                data: p.data.clone(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            architecture: self.architecture(),
            scalers,
            metadata,
            params,
        }
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let a = &c.architecture;
        if a.hidden_layers != MLP_HIDDEN_LAYERS || a.activation != Activation::Relu {
            return Err(Error::Format("unsupported MLP layout in checkpoint".into()));
        }
        let mut model = init_model(
            0,
            a.hidden_dim,
            a.message_passing_steps,
            a.node_features,
            a.edge_features,
            a.out_dim,
        )?;
        let names = model.param_names();
        if names.len() != c.params.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameter arrays, architecture needs {}",
                c.params.len(),
                names.len()
            )));
        }
        for ((dst, name), src) in model.params_mut().into_iter().zip(&names).zip(&c.params) {
            if &src.name != name || src.rows != dst.rows || src.cols != dst.cols {
                return Err(Error::Format(format!(
                    "parameter {} ({}x{}) does not match expected {name} ({}x{})",
                    src.name, src.rows, src.cols, dst.rows, dst.cols
                )));
            }
            *dst = src.tensor()?;
        }
        Ok(model)
    }
}

/// Mean of the incoming edge rows per node; isolated nodes get zeros.
pub fn mean_aggregate(
    messages: &Tensor2D,
    receivers: &[usize],
    n_nodes: usize,
) -> Result<Tensor2D> {
    let mut tape = Tape::new();
    let m = tape.constant(messages.clone());
    let seg: Arc<[usize]> = Arc::from(receivers);
    let y = tape.segment_mean(m, &seg, n_nodes)?;
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests;
