use serde::{Deserialize, Serialize};

use super::Tensor2D;
use crate::error::{Error, Result};

/// Adam with bias correction. Moment buffers follow the parameter order
/// given at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor2D], lr: f64) -> Self {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// Applies one update from the accumulated `grad` of each parameter.
    /// Parameters without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut [&mut Tensor2D]) -> Result<()> {
        if params.len() != self.m.len()
            || params.iter().zip(&self.m).any(|(p, m)| p.len() != m.len())
        {
            return Err(Error::Shape(
                "parameters do not match optimizer state".into(),
            ));
        }
        for (k, p) in params.iter().enumerate() {
            if let Some(g) = &p.grad {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of parameter {k} entry {i} is {} at step {}",
                        g[i],
                        self.step + 1
                    )));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, p) in params.iter_mut().enumerate() {
            let Some(g) = p.grad.as_ref() else { continue };
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.data[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut Tensor2D]) -> Result<()> {
    state.step(params)
}

pub fn global_grad_norm(params: &[&mut Tensor2D]) -> f64 {
    params
        .iter()
        .filter_map(|p| p.grad.as_ref())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(params: &mut [&mut Tensor2D], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::Parameter(format!(
            "max_norm must be positive, got {max_norm}"
        )));
    }
    let norm = global_grad_norm(params);
    if norm > max_norm {
        let f = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = &mut p.grad {
                g.iter_mut().for_each(|v| *v *= f);
            }
        }
    }
    Ok(norm)
}
