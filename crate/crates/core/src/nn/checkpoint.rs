//! Named-tensor checkpoint files.
//!
//! A file is one JSON object: a header describing every network (name, layer widths,
//! activations) and the tensor ordering, followed by the ordered tensor list. Each network
//! `<net>` contributes, for every layer `i` from input to output, `<net>.layer<i>.weight`
//! (`out x in`, row-major) then `<net>.layer<i>.bias` (`out x 1`).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Matrix, Mlp, NnError};

pub const FORMAT: &str = "latplan-tensors/1";
const LAYER_ORDER: &str = "for each network in header order, for each layer i from input to \
output: <net>.layer<i>.weight (out x in, row-major) then <net>.layer<i>.bias (out x 1)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub name: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub format: String,
    pub layer_order: String,
    pub networks: Vec<NetworkArch>,
    /// Free-form metadata (the model manifest lives here).
    pub metadata: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBundle {
    pub header: TensorHeader,
    pub tensors: Vec<NamedTensor>,
}

impl TensorBundle {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            header: TensorHeader {
                format: FORMAT.to_string(),
                layer_order: LAYER_ORDER.to_string(),
                networks: Vec::new(),
                metadata,
            },
            tensors: Vec::new(),
        }
    }

    pub fn push_matrix(&mut self, name: &str, m: &Matrix) {
        self.tensors.push(NamedTensor {
            name: name.to_string(),
            rows: m.rows(),
            cols: m.cols(),
            values: m.as_slice().to_vec(),
        });
    }

    pub fn push_mlp(&mut self, name: &str, mlp: &Mlp) {
        self.header.networks.push(NetworkArch {
            name: name.to_string(),
            dims: mlp.dims(),
            activations: mlp.activations(),
        });
        for (i, layer) in mlp.layers().iter().enumerate() {
            self.push_matrix(&format!("{name}.layer{i}.weight"), &layer.weight);
            self.tensors.push(NamedTensor {
                name: format!("{name}.layer{i}.bias"),
                rows: layer.bias.len(),
                cols: 1,
                values: layer.bias.clone(),
            });
        }
    }

    fn index(&self) -> BTreeMap<&str, &NamedTensor> {
        self.tensors.iter().map(|t| (t.name.as_str(), t)).collect()
    }

    pub fn matrix(&self, name: &str) -> Result<Matrix, NnError> {
        let t = self
            .index()
            .get(name)
            .copied()
            .ok_or_else(|| NnError::Checkpoint(format!("missing tensor `{name}`")))?;
        Matrix::from_vec(t.rows, t.cols, t.values.clone())
    }

    pub fn mlp(&self, name: &str) -> Result<Mlp, NnError> {
        let arch = self
            .header
            .networks
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| NnError::Checkpoint(format!("missing network `{name}`")))?;
        if arch.dims.len() != arch.activations.len() + 1 {
            return Err(NnError::Checkpoint(format!(
                "network `{name}`: {} widths for {} layers",
                arch.dims.len(),
                arch.activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(arch.activations.len());
        for (i, act) in arch.activations.iter().enumerate() {
            let weight = self.matrix(&format!("{name}.layer{i}.weight"))?;
            let bias = self.matrix(&format!("{name}.layer{i}.bias"))?;
            if weight.shape() != (arch.dims[i + 1], arch.dims[i]) {
                return Err(NnError::Checkpoint(format!(
                    "`{name}.layer{i}.weight` has shape {:?}, header says {:?}",
                    weight.shape(),
                    (arch.dims[i + 1], arch.dims[i])
                )));
            }
            layers.push(Layer {
                weight,
                bias: bias.into_vec(),
                activation: *act,
            });
        }
        Mlp::from_layers(layers)
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        let bundle: TensorBundle = serde_json::from_slice(&fs::read(path)?)?;
        if bundle.header.format != FORMAT {
            return Err(NnError::Checkpoint(format!(
                "unsupported format `{}`",
                bundle.header.format
            )));
        }
        Ok(bundle)
    }
}
