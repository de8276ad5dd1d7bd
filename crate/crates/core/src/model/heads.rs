//! Task-specific encoders and decoders.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelError};
use crate::nn::{axpy, sigmoid, Activation, Matrix, Mlp, MlpGrad, Parameters, Tape};
use crate::rng::normal;
use crate::tasks::{ArithInstance, CnfInstance, GraphInstance, Instance, TaskKind, VOCAB_SIZE};

/// Width of the arithmetic token embedding.
pub const EMBED_DIM: usize = 32;

/// Fixed geometry of the heads: padded graph width and number of CNF variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadLayout {
    pub graph_max_nodes: usize,
    pub cnf_vars: usize,
}

/// Encoder and decoder for one task.
///
/// * graph: MLP over `[node mask; flattened adjacency; one-hot source; one-hot destination]`,
///   everything padded to `graph_max_nodes`.
/// * arithmetic: embedding table, mean-pooled over tokens, then an MLP.
/// * logic: per-clause MLP over polarity rows, mean-pooled, then an MLP.
///
/// Decoders emit logits for graph and logic; [`TaskHeads::decode`] applies the sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskHeads {
    pub task: TaskKind,
    pub layout: HeadLayout,
    pub embedding: Option<Matrix>,
    pub clause_net: Option<Mlp>,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadsGrad {
    pub embedding: Option<Matrix>,
    pub clause_net: Option<MlpGrad>,
    pub encoder: MlpGrad,
    pub decoder: MlpGrad,
}

/// Activations needed to backpropagate through the encoder.
#[derive(Debug, Clone)]
pub struct EncodeTape {
    encoder: Tape,
    detail: EncodeDetail,
}

#[derive(Debug, Clone)]
enum EncodeDetail {
    Graph,
    Arith { token_rows: Vec<usize> },
    Logic { clause_tapes: Vec<Tape> },
}

/// Supervision target in the decoder's output space.
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Binary labels with a mask of which outputs count (graph padding is masked out).
    Binary { labels: Vec<f64>, mask: Vec<bool> },
    /// Scaled scalar value.
    Scalar(f64),
}

fn widths(input: usize, hidden: usize, output: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
    w.push(output);
    w
}

impl TaskHeads {
    pub fn new<R: Rng + ?Sized>(
        task: TaskKind,
        dims: &ModelDims,
        layout: HeadLayout,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        Self::with_hidden(task, dims, layout, dims.head_hidden, rng)
    }

    /// Same architecture with a custom hidden width (used to size the parameter-matched baseline).
    pub fn with_hidden<R: Rng + ?Sized>(
        task: TaskKind,
        dims: &ModelDims,
        layout: HeadLayout,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, ModelError> {
        let d = dims.latent_dim;
        let layers = dims.head_layers;
        let relu = Activation::Relu;
        let id = Activation::Identity;
        let (embedding, clause_net, enc_in) = match task {
            TaskKind::Graph => {
                let n = layout.graph_max_nodes;
                (None, None, 3 * n + n * n)
            }
            TaskKind::Arithmetic => {
                // small Gaussian init keeps the pooled features O(0.1)
                let data = (0..VOCAB_SIZE * EMBED_DIM).map(|_| 0.1 * normal(rng)).collect();
                (Some(Matrix::from_vec(VOCAB_SIZE, EMBED_DIM, data)?), None, EMBED_DIM)
            }
            TaskKind::Logic => {
                let net = Mlp::new(&widths(layout.cnf_vars, hidden, hidden, layers), relu, id, rng)?;
                (None, Some(net), hidden)
            }
        };
        let encoder = Mlp::new(&widths(enc_in, hidden, d, layers), relu, id, rng)?;
        let (out, dec_layers) = match task {
            TaskKind::Graph => (layout.graph_max_nodes, layers),
            TaskKind::Arithmetic => (1, layers + 1),
            TaskKind::Logic => (layout.cnf_vars, layers),
        };
        let decoder = Mlp::new(&widths(d, hidden, out, dec_layers), relu, id, rng)?;
        Ok(Self {
            task,
            layout,
            embedding,
            clause_net,
            encoder,
            decoder,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn zero_grad(&self) -> HeadsGrad {
        HeadsGrad {
            embedding: self.embedding.as_ref().map(|e| Matrix::zeros(e.rows(), e.cols())),
            clause_net: self.clause_net.as_ref().map(Mlp::zero_grad),
            encoder: self.encoder.zero_grad(),
            decoder: self.decoder.zero_grad(),
        }
    }

    fn check_task(&self, inst: &Instance) -> Result<(), ModelError> {
        if inst.task() != self.task {
            return Err(ModelError::TaskMismatch {
                expected: self.task,
                found: inst.task(),
            });
        }
        Ok(())
    }

    fn graph_features(&self, g: &GraphInstance) -> Result<Vec<f64>, ModelError> {
        let n = self.layout.graph_max_nodes;
        if g.node_count > n {
            return Err(ModelError::Shape(format!(
                "graph has {} nodes, encoder is padded to {n}",
                g.node_count
            )));
        }
        let mut x = vec![0.0; 3 * n + n * n];
        for i in 0..g.node_count {
            x[i] = 1.0;
            for j in 0..g.node_count {
                x[n + i * n + j] = g.adjacency[i][j];
            }
        }
        x[n + n * n + g.source] = 1.0;
        x[2 * n + n * n + g.destination] = 1.0;
        Ok(x)
    }

    fn arith_pool(&self, a: &ArithInstance) -> (Vec<f64>, Vec<usize>) {
        let emb = self.embedding.as_ref().expect("arithmetic heads carry an embedding");
        let rows: Vec<usize> = a.tokens.iter().map(|t| t.vocab_index()).collect();
        let mut pooled = vec![0.0; emb.cols()];
        let inv = 1.0 / rows.len().max(1) as f64;
        for r in &rows {
            axpy(&mut pooled, inv, emb.row(*r));
        }
        (pooled, rows)
    }

    fn logic_pool(&self, c: &CnfInstance) -> Result<(Vec<f64>, Vec<Tape>), ModelError> {
        let net = self.clause_net.as_ref().expect("logic heads carry a clause network");
        if c.n_vars != self.layout.cnf_vars {
            return Err(ModelError::Shape(format!(
                "formula has {} variables, heads expect {}",
                c.n_vars, self.layout.cnf_vars
            )));
        }
        let rows = c.polarity_rows();
        let mut pooled = vec![0.0; net.out_dim()];
        let mut tapes = Vec::with_capacity(rows.len());
        let inv = 1.0 / rows.len().max(1) as f64;
        for row in &rows {
            let (y, tape) = net.forward(row)?;
            axpy(&mut pooled, inv, &y);
            tapes.push(tape);
        }
        Ok((pooled, tapes))
    }

    /// `h = enc(x)`.
    pub fn encode(&self, inst: &Instance) -> Result<Vec<f64>, ModelError> {
        Ok(self.encode_with_tape(inst)?.0)
    }

    pub fn encode_with_tape(&self, inst: &Instance) -> Result<(Vec<f64>, EncodeTape), ModelError> {
        self.check_task(inst)?;
        let (features, detail) = match inst {
            Instance::Graph(g) => (self.graph_features(g)?, EncodeDetail::Graph),
            Instance::Arith(a) => {
                let (pooled, token_rows) = self.arith_pool(a);
                (pooled, EncodeDetail::Arith { token_rows })
            }
            Instance::Logic(c) => {
                let (pooled, clause_tapes) = self.logic_pool(c)?;
                (pooled, EncodeDetail::Logic { clause_tapes })
            }
        };
        let (h, encoder) = self.encoder.forward(&features)?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { term: "encoder output" });
        }
        Ok((h, EncodeTape { encoder, detail }))
    }

    /// Accumulates `scale * ∂(g_h · h)/∂θ_enc` into `grads`.
    pub fn encoder_backward(
        &self,
        tape: &EncodeTape,
        g_h: &[f64],
        grads: &mut HeadsGrad,
        scale: f64,
    ) -> Result<(), ModelError> {
        let g_feat = self
            .encoder
            .backward_into(&tape.encoder, g_h, Some((&mut grads.encoder, scale)))?;
        match &tape.detail {
            EncodeDetail::Graph => {}
            EncodeDetail::Arith { token_rows } => {
                let ge = grads.embedding.as_mut().expect("embedding gradient slot");
                let inv = scale / token_rows.len().max(1) as f64;
                let cols = ge.cols();
                for r in token_rows {
                    axpy(&mut ge.as_mut_slice()[r * cols..(r + 1) * cols], inv, &g_feat);
                }
            }
            EncodeDetail::Logic { clause_tapes } => {
                let net = self.clause_net.as_ref().expect("clause network");
                let gc = grads.clause_net.as_mut().expect("clause network gradient slot");
                let inv = scale / clause_tapes.len().max(1) as f64;
                for t in clause_tapes {
                    net.backward_into(t, &g_feat, Some((gc, inv)))?;
                }
            }
        }
        Ok(())
    }

    /// Raw decoder outputs (logits for graph and logic, scaled value for arithmetic).
    pub fn decode_raw(&self, z_last: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.decoder.predict(z_last)?)
    }

    /// `ŷ = dec(z_T)`: sigmoid probabilities for graph and logic, a scalar for arithmetic.
    pub fn decode(&self, z_last: &[f64]) -> Result<Vec<f64>, ModelError> {
        let raw = self.decode_raw(z_last)?;
        Ok(match self.task {
            TaskKind::Arithmetic => raw,
            _ => raw.into_iter().map(sigmoid).collect(),
        })
    }

    pub fn target(&self, inst: &Instance, target_scale: f64) -> Result<Target, ModelError> {
        self.check_task(inst)?;
        Ok(match inst {
            Instance::Graph(g) => {
                let n = self.layout.graph_max_nodes;
                let mut labels = vec![0.0; n];
                let mut mask = vec![false; n];
                for i in 0..g.node_count {
                    labels[i] = g.labels[i] as f64;
                    mask[i] = true;
                }
                Target::Binary { labels, mask }
            }
            Instance::Logic(c) => Target::Binary {
                labels: c.hidden_assignment.iter().map(|b| *b as u8 as f64).collect(),
                mask: vec![true; c.n_vars],
            },
            Instance::Arith(a) => Target::Scalar(a.target / target_scale),
        })
    }

    /// Supervised loss on `dec(z)` and its gradient with respect to `z`; decoder parameter
    /// gradients are accumulated into `grads` scaled by `scale`.
    ///
    /// Binary targets use mean cross-entropy over unmasked outputs, scalar targets squared error.
    pub fn decoder_loss(
        &self,
        z_last: &[f64],
        target: &Target,
        grads: Option<(&mut HeadsGrad, f64)>,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let (raw, tape) = self.decoder.forward(z_last)?;
        let (loss, g_raw) = loss_and_grad(&raw, target)?;
        let g_z = self.decoder.backward_into(
            &tape,
            &g_raw,
            grads.map(|(g, s)| (&mut g.decoder, s)),
        )?;
        Ok((loss, g_z))
    }
}

/// Loss of raw decoder outputs against a target, with the gradient in raw-output space.
pub fn loss_and_grad(raw: &[f64], target: &Target) -> Result<(f64, Vec<f64>), ModelError> {
    match target {
        Target::Binary { labels, mask } => {
            if labels.len() != raw.len() || mask.len() != raw.len() {
                return Err(ModelError::Shape(format!(
                    "{} decoder outputs for {} labels",
                    raw.len(),
                    labels.len()
                )));
            }
            let count = mask.iter().filter(|m| **m).count().max(1) as f64;
            let mut loss = 0.0;
            let mut g = vec![0.0; raw.len()];
            for i in 0..raw.len() {
                if !mask[i] {
                    continue;
                }
                let (x, y) = (raw[i], labels[i]);
                // log(1 + e^x) - y x, stable form
                loss += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
                g[i] = (sigmoid(x) - y) / count;
            }
            Ok((loss / count, g))
        }
        Target::Scalar(y) => {
            if raw.len() != 1 {
                return Err(ModelError::Shape(format!("{} outputs for a scalar target", raw.len())));
            }
            let diff = raw[0] - y;
            Ok((diff * diff, vec![2.0 * diff]))
        }
    }
}

impl Parameters for TaskHeads {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(e.as_slice());
        }
        if let Some(c) = &self.clause_net {
            out.extend(c.tensors());
        }
        out.extend(self.encoder.tensors());
        out.extend(self.decoder.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(e.as_mut_slice());
        }
        if let Some(c) = &mut self.clause_net {
            out.extend(c.tensors_mut());
        }
        out.extend(self.encoder.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out
    }
}

impl Parameters for HeadsGrad {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        if let Some(e) = &self.embedding {
            out.push(e.as_slice());
        }
        if let Some(c) = &self.clause_net {
            out.extend(c.tensors());
        }
        out.extend(self.encoder.tensors());
        out.extend(self.decoder.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        if let Some(e) = &mut self.embedding {
            out.push(e.as_mut_slice());
        }
        if let Some(c) = &mut self.clause_net {
            out.extend(c.tensors_mut());
        }
        out.extend(self.encoder.tensors_mut());
        out.extend(self.decoder.tensors_mut());
        out
    }
}

impl HeadsGrad {
    pub fn add_scaled(&mut self, s: f64, other: &HeadsGrad) {
        let mine = self.tensors_mut();
        for (a, b) in mine.into_iter().zip(other.tensors()) {
            axpy(a, s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}
