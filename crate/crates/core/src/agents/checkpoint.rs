use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Parameterized, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Structured-text dump of named parameter tensors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamCheckpoint {
    pub version: u32,
    pub tensors: Vec<NamedTensor>,
}

impl ParamCheckpoint {
    pub fn capture<P: Parameterized + ?Sized>(net: &P) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            tensors: net
                .named_params()
                .into_iter()
                .map(|(name, t)| NamedTensor { name, shape: t.shape(), values: t.values() })
                .collect(),
        }
    }

    /// Copies the stored values into `net`, checking names and shapes.
    pub fn restore<P: Parameterized + ?Sized>(&self, net: &mut P) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", self.version)));
        }
        let names: Vec<String> = net.named_params().into_iter().map(|(n, _)| n).collect();
        if names.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, network has {}",
                self.tensors.len(),
                names.len()
            )));
        }
        let mut params = net.params_mut();
        for ((stored, name), param) in self.tensors.iter().zip(&names).zip(params.iter_mut()) {
            if &stored.name != name || stored.shape != param.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{}` {:?} does not match `{name}` {:?}",
                    stored.name,
                    stored.shape,
                    param.shape()
                )));
            }
            **param = Tensor::new(&stored.shape, stored.values.clone())?;
        }
        Ok(())
    }
}

pub fn save_params<P: Parameterized + ?Sized>(net: &P, path: &Path) -> Result<()> {
    let text = serde_json::to_string(&ParamCheckpoint::capture(net))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_params<P: Parameterized + ?Sized>(net: &mut P, path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let ckpt: ParamCheckpoint = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    ckpt.restore(net)
}
