use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Tape, Tensor2D, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Affine map `x W + b`; `weight` is in x out, `bias` is 1 x out.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Tensor2D,
    pub bias: Tensor2D,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Tensor2D,
    pub beta: Tensor2D,
}

/// Fully connected network; the activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub output_norm: Option<LayerNormParams>,
}

/// Glorot-uniform matrix, bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Tensor2D {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-a..=a))
        .collect();
    Tensor2D::new(fan_in, fan_out, data).unwrap()
}

impl MlpParams {
    /// Network with layer widths `dims` (input first), zero biases, unit
    /// layer-norm gain.
    pub fn new<R: Rng>(
        rng: &mut R,
        dims: &[usize],
        activation: Activation,
        output_norm: bool,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Parameter(format!("invalid MLP widths {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer {
                weight: glorot_uniform(rng, w[0], w[1]),
                bias: Tensor2D::zeros(1, w[1]),
            })
            .collect();
        let out = *dims.last().unwrap();
        Ok(MlpParams {
            layers,
            activation,
            output_norm: output_norm.then(|| LayerNormParams {
                gamma: Tensor2D::filled(1, out, 1.0),
                beta: Tensor2D::zeros(1, out),
            }),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].weight.rows
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().weight.cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("MLP without layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.shape() != (1, l.weight.cols) {
                return Err(Error::Shape(format!(
                    "layer {i}: bias does not match weight"
                )));
            }
            if i > 0 && self.layers[i - 1].weight.cols != l.weight.rows {
                return Err(Error::Shape(format!(
                    "layer {i}: input width does not chain"
                )));
            }
        }
        if let Some(n) = &self.output_norm {
            let out = self.out_dim();
            if n.gamma.shape() != (1, out) || n.beta.shape() != (1, out) {
                return Err(Error::Shape(
                    "layer norm width does not match output".into(),
                ));
            }
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("MLP parameters".into()));
        }
        Ok(())
    }

    /// Parameters in fixed order: per layer weight then bias, then gamma, beta.
    pub fn params(&self) -> Vec<&Tensor2D> {
        let mut v = Vec::new();
        for l in &self.layers {
            v.push(&l.weight);
            v.push(&l.bias);
        }
        if let Some(n) = &self.output_norm {
            v.push(&n.gamma);
            v.push(&n.beta);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor2D> {
        let mut v = Vec::new();
        for l in &mut self.layers {
            v.push(&mut l.weight);
            v.push(&mut l.bias);
        }
        if let Some(n) = &mut self.output_norm {
            v.push(&mut n.gamma);
            v.push(&mut n.beta);
        }
        v
    }

    /// Records the parameters on `tape`; `trainable` decides whether their
    /// gradients are tracked.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundMlp {
        let mut leaf = |t: &Tensor2D| {
            if trainable {
                tape.param(t)
            } else {
                tape.constant(t.clone())
            }
        };
        let layers = self
            .layers
            .iter()
            .map(|l| (leaf(&l.weight), leaf(&l.bias)))
            .collect();
        let norm = self
            .output_norm
            .as_ref()
            .map(|n| (leaf(&n.gamma), leaf(&n.beta)));
        BoundMlp {
            layers,
            norm,
            activation: self.activation,
        }
    }

    /// Sets every parameter to zero, including the layer-norm gain.
    pub fn zero(&mut self) {
        for p in self.params_mut() {
            p.data.iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// First-layer input block. A `Gathered` block multiplies `source` by its
/// weight rows and then picks rows by `index`, which equals gathering first
/// but costs one product per source row instead of per output row.
#[derive(Debug, Clone)]
pub enum InputBlock {
    Dense(Var),
    Gathered { source: Var, index: Arc<[usize]> },
}

/// MLP parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    pub layers: Vec<(Var, Var)>,
    pub norm: Option<(Var, Var)>,
    pub activation: Activation,
}

impl BoundMlp {
    pub fn vars(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        if let Some((g, b)) = self.norm {
            v.extend([g, b]);
        }
        v
    }

    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        self.forward_blocks(tape, &[InputBlock::Dense(input)], None)
    }

    /// Forward pass whose first-layer input is the column concatenation of
    /// `blocks`; `residual` is added after the output normalization.
    pub fn forward_blocks(
        &self,
        tape: &mut Tape,
        blocks: &[InputBlock],
        residual: Option<Var>,
    ) -> Result<Var> {
        let relu = self.activation == Activation::Relu;
        let last = self.layers.len() - 1;
        let (w0, b0) = self.layers[0];
        let mut dense = Vec::new();
        let mut gathered = Vec::new();
        let mut offset = 0;
        for block in blocks {
            match block {
                InputBlock::Dense(x) => {
                    dense.push((*x, offset));
                    offset += tape.value(*x).cols;
                }
                InputBlock::Gathered { source, index } => {
                    gathered.push((*source, offset, index.clone()));
                    offset += tape.value(*source).cols;
                }
            }
        }
        if offset != tape.value(w0).rows {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {offset}",
                tape.value(w0).rows
            )));
        }
        let act0 = relu && last > 0 && gathered.is_empty();
        let mut h = if dense.is_empty() {
            // bias-only base with one row per gathered output row
            let rows = gathered[0].2.len();
            let zero = tape.constant(Tensor2D::zeros(rows, 0));
            tape.linear(&[(zero, 0)], w0, Some(b0), false)?
        } else {
            tape.linear(&dense, w0, Some(b0), act0)?
        };
        for (source, offset, index) in &gathered {
            let projected = tape.linear(&[(*source, *offset)], w0, None, false)?;
            h = tape.add_gathered(h, projected, index)?;
        }
        if !gathered.is_empty() && relu && last > 0 {
            h = tape.relu(h);
        }
        for (k, &(w, b)) in self.layers.iter().enumerate().skip(1) {
            h = tape.linear(&[(h, 0)], w, Some(b), relu && k < last)?;
        }
        match (self.norm, residual) {
            (Some((g, b)), r) => tape.layer_norm(h, g, b, r),
            (None, Some(r)) => tape.add(h, r),
            (None, None) => Ok(h),
        }
    }
}

/// Evaluates `params` on `input` without tracking gradients.
pub fn mlp_forward(params: &MlpParams, input: &Tensor2D) -> Result<Tensor2D> {
    params.validate()?;
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let x = tape.constant(input.clone());
    let y = bound.forward(&mut tape, x)?;
    Ok(tape.value(y).clone())
}
