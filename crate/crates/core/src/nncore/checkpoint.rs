use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, MinMaxScaler, Tensor2D};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "hybrid-twin-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden_dim: usize,
    pub message_passing_steps: usize,
    pub node_features: usize,
    pub edge_features: usize,
    pub out_dim: usize,
    pub hidden_layers: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl ParamArray {
    pub fn tensor(&self) -> Result<Tensor2D> {
        Tensor2D::new(self.rows, self.cols, self.data.clone())
    }
}

/// Self-describing model snapshot; parameters are listed in the model's
/// fixed enumeration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub scalers: BTreeMap<String, MinMaxScaler>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub params: Vec<ParamArray>,
}

impl Checkpoint {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT:?}",
                c.format
            )));
        }
        for p in &c.params {
            if p.data.len() != p.rows * p.cols {
                return Err(Error::Format(format!(
                    "parameter {} has a bad shape",
                    p.name
                )));
            }
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        Checkpoint::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            architecture: Architecture {
                hidden_dim: 8,
                message_passing_steps: 2,
                node_features: 4,
                edge_features: 3,
                out_dim: 1,
                hidden_layers: 2,
                activation: Activation::Relu,
            },
            scalers: BTreeMap::from([(
                "target".to_string(),
                MinMaxScaler {
                    min: vec![0.0],
                    max: vec![0.1 + 0.2],
                },
            )]),
            metadata: BTreeMap::new(),
            params: vec![ParamArray {
                name: "decoder.0.weight".into(),
                rows: 1,
                cols: 2,
                data: vec![1.0 / 3.0, -2.5e-17],
            }],
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let c = sample();
        let back = Checkpoint::from_json(&c.to_json().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_json().unwrap(), c.to_json().unwrap());
    }

    #[test]
    fn wrong_format_tag_is_rejected() {
        let mut c = sample();
        c.format = "something-else/9".into();
        assert!(matches!(
            Checkpoint::from_json(&c.to_json().unwrap()),
            Err(Error::Format(_))
        ));
    }
}
