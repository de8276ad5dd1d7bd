//! The decomposed trajectory energy and its gradients.
//!
//! `E(h, z) = f_global(s_step, s_trans, smooth)` where
//!
//! * `s_step  = mean_t s_step_net([h; z_t])`
//! * `s_trans = mean_t s_trans_net([z_t; z_{t+1}])`
//! * `smooth  = mean_t ‖z_{t+1} - z_t‖²`
//!
//! For a single-column trajectory the two pairwise averages are empty and defined as zero.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModelDims, ModelError};
use crate::nn::{axpy, Activation, Matrix, Mlp, MlpGrad, Parameters, Tape};

static EVALUATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of energy evaluations performed by this process.
pub fn energy_evaluations() -> u64 {
    EVALUATIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    pub step_mean: f64,
    pub trans_mean: f64,
    pub smooth: f64,
    pub total: f64,
}

/// `∇_z E` and its split into the step, transition and smoothness chain-rule paths.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrad {
    pub total: Matrix,
    pub step: Matrix,
    pub trans: Matrix,
    pub smooth: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub step_scorer: Mlp,
    pub transition_scorer: Mlp,
    pub global: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyParamGrad {
    pub step_scorer: MlpGrad,
    pub transition_scorer: MlpGrad,
    pub global: MlpGrad,
}

struct Forward {
    terms: EnergyTerms,
    step_tapes: Vec<Tape>,
    trans_tapes: Vec<Tape>,
    global_tape: Tape,
}

fn scorer_widths(input: usize, hidden: usize, layers: usize) -> Vec<usize> {
    let mut w = vec![input];
    w.extend(std::iter::repeat_n(hidden, layers.saturating_sub(1)));
    w.push(1);
    w
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

fn check(v: f64, term: &'static str) -> Result<f64, ModelError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ModelError::NonFinite { term })
    }
}

/// Column `t` of a row-major `d x T` matrix, copied into `buf`.
#[inline]
fn column_into(z: &Matrix, t: usize, buf: &mut [f64]) {
    let cols = z.cols();
    let data = z.as_slice();
    for (r, b) in buf.iter_mut().enumerate() {
        *b = data[r * cols + t];
    }
}

#[inline]
fn add_to_column(m: &mut Matrix, t: usize, s: f64, v: &[f64]) {
    let cols = m.cols();
    let data = m.as_mut_slice();
    for (r, x) in v.iter().enumerate() {
        data[r * cols + t] += s * x;
    }
}

impl EnergyModel {
    /// Step and transition scorers take `2d` inputs through `energy_layers` layers of width
    /// `energy_hidden`; the aggregator is a two-layer `3 -> global_hidden -> 1` network.
    pub fn new<R: Rng + ?Sized>(dims: &ModelDims, rng: &mut R) -> Result<Self, ModelError> {
        let d = dims.latent_dim;
        let relu = Activation::Relu;
        let id = Activation::Identity;
        Ok(Self {
            step_scorer: Mlp::new(&scorer_widths(2 * d, dims.energy_hidden, dims.energy_layers), relu, id, rng)?,
            transition_scorer: Mlp::new(
                &scorer_widths(2 * d, dims.energy_hidden, dims.energy_layers),
                relu,
                id,
                rng,
            )?,
            global: Mlp::new(&[3, dims.global_hidden, 1], relu, id, rng)?,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.transition_scorer.in_dim() / 2
    }

    pub fn zero_grad(&self) -> EnergyParamGrad {
        EnergyParamGrad {
            step_scorer: self.step_scorer.zero_grad(),
            transition_scorer: self.transition_scorer.zero_grad(),
            global: self.global.zero_grad(),
        }
    }

    fn check_dims(&self, h: &[f64], z: &Matrix) -> Result<(), ModelError> {
        let d = self.latent_dim();
        if h.len() != d || z.rows() != d || z.cols() == 0 {
            return Err(ModelError::Shape(format!(
                "energy expects h in R^{d} and a {d} x T trajectory (T >= 1), got |h| = {} and {} x {}",
                h.len(),
                z.rows(),
                z.cols()
            )));
        }
        Ok(())
    }

    fn forward(&self, h: &[f64], z: &Matrix) -> Result<Forward, ModelError> {
        self.check_dims(h, z)?;
        EVALUATIONS.fetch_add(1, Ordering::Relaxed);
        let d = z.rows();
        let t_len = z.cols();
        let cols: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                let mut c = vec![0.0; d];
                column_into(z, t, &mut c);
                c
            })
            .collect();

        let mut step_sum = 0.0;
        let mut step_tapes = Vec::with_capacity(t_len);
        for c in &cols {
            let (s, tape) = self.step_scorer.forward(&concat(h, c))?;
            step_sum += s[0];
            step_tapes.push(tape);
        }
        let step_mean = check(step_sum / t_len as f64, "step score")?;

        let pairs = t_len - 1;
        let mut trans_sum = 0.0;
        let mut smooth_sum = 0.0;
        let mut trans_tapes = Vec::with_capacity(pairs);
        for t in 0..pairs {
            let (s, tape) = self.transition_scorer.forward(&concat(&cols[t], &cols[t + 1]))?;
            trans_sum += s[0];
            trans_tapes.push(tape);
            smooth_sum += cols[t + 1]
                .iter()
                .zip(&cols[t])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        let (trans_mean, smooth) = if pairs == 0 {
            (0.0, 0.0)
        } else {
            (trans_sum / pairs as f64, smooth_sum / pairs as f64)
        };
        let trans_mean = check(trans_mean, "transition score")?;
        let smooth = check(smooth, "smoothness")?;

        let (e, global_tape) = self.global.forward(&[step_mean, trans_mean, smooth])?;
        let total = check(e[0], "global energy")?;
        Ok(Forward {
            terms: EnergyTerms {
                step_mean,
                trans_mean,
                smooth,
                total,
            },
            step_tapes,
            trans_tapes,
            global_tape,
        })
    }

    /// Backward from `upstream * E`. Accumulates parameter gradients when asked and returns the
    /// per-path gradients with respect to `z` when `want_z` is set.
    fn backward(
        &self,
        fwd: &Forward,
        z: &Matrix,
        upstream: f64,
        mut params: Option<(&mut EnergyParamGrad, f64)>,
        want_z: bool,
    ) -> Result<Option<EnergyGrad>, ModelError> {
        let d = z.rows();
        let t_len = z.cols();
        let pairs = t_len - 1;
        let g_in = self.global.backward_into(
            &fwd.global_tape,
            &[upstream],
            params.as_mut().map(|(g, s)| (&mut g.global, *s)),
        )?;
        let (g_step, g_trans, g_smooth) = (g_in[0], g_in[1], g_in[2]);

        let mut step = Matrix::zeros(d, t_len);
        let mut trans = Matrix::zeros(d, t_len);
        let mut smooth = Matrix::zeros(d, t_len);

        let up_step = g_step / t_len as f64;
        for (t, tape) in fwd.step_tapes.iter().enumerate() {
            let gx = self.step_scorer.backward_into(
                tape,
                &[up_step],
                params.as_mut().map(|(g, s)| (&mut g.step_scorer, *s)),
            )?;
            if want_z {
                add_to_column(&mut step, t, 1.0, &gx[d..]);
            }
        }
        if pairs > 0 {
            let up_trans = g_trans / pairs as f64;
            for (t, tape) in fwd.trans_tapes.iter().enumerate() {
                let gx = self.transition_scorer.backward_into(
                    tape,
                    &[up_trans],
                    params.as_mut().map(|(g, s)| (&mut g.transition_scorer, *s)),
                )?;
                if want_z {
                    add_to_column(&mut trans, t, 1.0, &gx[..d]);
                    add_to_column(&mut trans, t + 1, 1.0, &gx[d..]);
                }
            }
            if want_z {
                let coef = 2.0 * g_smooth / pairs as f64;
                let mut a = vec![0.0; d];
                let mut b = vec![0.0; d];
                for t in 0..pairs {
                    column_into(z, t, &mut a);
                    column_into(z, t + 1, &mut b);
                    let diff: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
                    add_to_column(&mut smooth, t + 1, coef, &diff);
                    add_to_column(&mut smooth, t, -coef, &diff);
                }
            }
        }
        if !want_z {
            return Ok(None);
        }
        let mut total = step.clone();
        total.axpy(1.0, &trans);
        total.axpy(1.0, &smooth);
        Ok(Some(EnergyGrad {
            total,
            step,
            trans,
            smooth,
        }))
    }

    pub fn energy(&self, h: &[f64], z: &Matrix) -> Result<EnergyTerms, ModelError> {
        Ok(self.forward(h, z)?.terms)
    }

    /// `∇_z E` with parameters held fixed, split into its three chain-rule components.
    pub fn energy_grad_z(&self, h: &[f64], z: &Matrix) -> Result<(EnergyTerms, EnergyGrad), ModelError> {
        let fwd = self.forward(h, z)?;
        let g = self.backward(&fwd, z, 1.0, None, true)?.expect("requested z gradient");
        Ok((fwd.terms, g))
    }

    /// Evaluates `E(h, z)` and accumulates `scale * ∂E/∂θ` into `grads`.
    pub fn energy_param_grad(
        &self,
        h: &[f64],
        z: &Matrix,
        grads: &mut EnergyParamGrad,
        scale: f64,
    ) -> Result<EnergyTerms, ModelError> {
        let fwd = self.forward(h, z)?;
        self.backward(&fwd, z, 1.0, Some((grads, scale)), false)?;
        Ok(fwd.terms)
    }
}

/// `mean_t ‖z_{t+1} - z_t‖²`, zero for a single column.
pub fn smoothness(z: &Matrix) -> f64 {
    let pairs = z.cols().saturating_sub(1);
    if pairs == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for r in 0..z.rows() {
        let row = z.row(r);
        for t in 0..pairs {
            let dlt = row[t + 1] - row[t];
            s += dlt * dlt;
        }
    }
    s / pairs as f64
}

/// Gradient of [`smoothness`] with respect to `z`.
pub fn smoothness_grad(z: &Matrix) -> Matrix {
    let pairs = z.cols().saturating_sub(1);
    let mut g = Matrix::zeros(z.rows(), z.cols());
    if pairs == 0 {
        return g;
    }
    let coef = 2.0 / pairs as f64;
    let cols = z.cols();
    for r in 0..z.rows() {
        let row = z.row(r).to_vec();
        let out = &mut g.as_mut_slice()[r * cols..(r + 1) * cols];
        for t in 0..pairs {
            let dlt = coef * (row[t + 1] - row[t]);
            out[t + 1] += dlt;
            out[t] -= dlt;
        }
    }
    g
}

impl Parameters for EnergyModel {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.step_scorer.tensors();
        v.extend(self.transition_scorer.tensors());
        v.extend(self.global.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.step_scorer.tensors_mut();
        v.extend(self.transition_scorer.tensors_mut());
        v.extend(self.global.tensors_mut());
        v
    }
}

impl Parameters for EnergyParamGrad {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.step_scorer.tensors();
        v.extend(self.transition_scorer.tensors());
        v.extend(self.global.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.step_scorer.tensors_mut();
        v.extend(self.transition_scorer.tensors_mut());
        v.extend(self.global.tensors_mut());
        v
    }
}

impl EnergyParamGrad {
    pub fn add_scaled(&mut self, s: f64, other: &EnergyParamGrad) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            axpy(a, s, b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}
