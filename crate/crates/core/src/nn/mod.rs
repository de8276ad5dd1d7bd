//! Dense-network substrate: matrices, fixed-shape MLPs with hand-written reverse mode, Adam,
//! and a named-tensor checkpoint format.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{NamedTensor, NetworkArch, TensorBundle, TensorHeader};
pub use matrix::{axpy, clip_by_norm, dot, l2_norm, Matrix};
pub use mlp::{sigmoid, Activation, Layer, Mlp, MlpGrad, Tape};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Flat view over a parameter (or gradient) set, in a fixed tensor order.
pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }
}
