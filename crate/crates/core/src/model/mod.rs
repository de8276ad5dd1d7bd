//! Encoders, decoders, the latent trajectory and the energy function.

mod energy;
mod heads;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use energy::{
    energy_evaluations, smoothness, smoothness_grad, EnergyGrad, EnergyModel, EnergyParamGrad,
    EnergyTerms,
};
pub use heads::{loss_and_grad, EncodeTape, HeadLayout, HeadsGrad, Target, TaskHeads, EMBED_DIM};

use crate::nn::{Matrix, NnError, TensorBundle};
use crate::tasks::TaskKind;

/// A `d x T` latent trajectory; column `t` is `z_t`.
pub type LatentTrajectory = Matrix;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {term}")]
    NonFinite { term: &'static str },
    #[error("heads are for task `{expected}` but the instance is `{found}`")]
    TaskMismatch { expected: TaskKind, found: TaskKind },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Network widths shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub latent_dim: usize,
    pub traj_len: usize,
    pub head_hidden: usize,
    pub head_layers: usize,
    pub energy_hidden: usize,
    pub energy_layers: usize,
    pub global_hidden: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            traj_len: 8,
            head_hidden: 128,
            head_layers: 2,
            energy_hidden: 128,
            energy_layers: 3,
            global_hidden: 16,
        }
    }
}

/// Describes what a checkpoint holds and how it was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub task: TaskKind,
    pub latent_dim: usize,
    pub traj_len: usize,
    pub config_hash: String,
    pub target_scale: f64,
    pub layout: HeadLayout,
    /// `false` for the encoder-decoder baseline, which has no energy model.
    pub has_energy: bool,
}

/// Trained heads plus (for the full system) the energy model.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub heads: TaskHeads,
    pub energy: Option<EnergyModel>,
}

impl Checkpoint {
    pub fn to_bundle(&self) -> TensorBundle {
        let mut b = TensorBundle::new(serde_json::to_value(&self.manifest).expect("manifest serializes"));
        if let Some(e) = &self.heads.embedding {
            b.push_matrix("embedding", e);
        }
        if let Some(c) = &self.heads.clause_net {
            b.push_mlp("clause_net", c);
        }
        b.push_mlp("encoder", &self.heads.encoder);
        b.push_mlp("decoder", &self.heads.decoder);
        if let Some(e) = &self.energy {
            b.push_mlp("step_scorer", &e.step_scorer);
            b.push_mlp("transition_scorer", &e.transition_scorer);
            b.push_mlp("global_scorer", &e.global);
        }
        b
    }

    pub fn from_bundle(b: &TensorBundle) -> Result<Self, ModelError> {
        let manifest: Manifest = serde_json::from_value(b.header.metadata.clone())
            .map_err(|e| ModelError::Checkpoint(format!("bad manifest: {e}")))?;
        let heads = TaskHeads {
            task: manifest.task,
            layout: manifest.layout,
            embedding: match manifest.task {
                TaskKind::Arithmetic => Some(b.matrix("embedding")?),
                _ => None,
            },
            clause_net: match manifest.task {
                TaskKind::Logic => Some(b.mlp("clause_net")?),
                _ => None,
            },
            encoder: b.mlp("encoder")?,
            decoder: b.mlp("decoder")?,
        };
        let energy = if manifest.has_energy {
            Some(EnergyModel {
                step_scorer: b.mlp("step_scorer")?,
                transition_scorer: b.mlp("transition_scorer")?,
                global: b.mlp("global_scorer")?,
            })
        } else {
            None
        };
        if heads.latent_dim() != manifest.latent_dim {
            return Err(ModelError::Checkpoint(format!(
                "encoder width {} disagrees with manifest d = {}",
                heads.latent_dim(),
                manifest.latent_dim
            )));
        }
        Ok(Self {
            manifest,
            heads,
            energy,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(self.to_bundle().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bundle(&TensorBundle::load(path)?)
    }

    /// Energy model, or an error for a baseline checkpoint.
    pub fn energy(&self) -> Result<&EnergyModel, ModelError> {
        self.energy
            .as_ref()
            .ok_or_else(|| ModelError::Checkpoint("checkpoint has no energy model (baseline)".into()))
    }
}
