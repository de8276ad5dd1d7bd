//! Inference-time minimization of the energy over the latent trajectory.
//!
//! Each update is
//!
//! ```text
//! z <- z - η · clip(∇_z E(h, z) + 2 λ_anchor (z - H)) + sqrt(2η) · σ_noise · ε
//! ```
//!
//! where `H` repeats `h` in every column. With `σ_noise = 0` this is plain gradient descent.

mod trace;

use std::sync::atomic::{AtomicU64, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use trace::{read_traces, write_traces, GradNorms, PlannerTrace, TraceRecord};

use crate::model::{EnergyGrad, EnergyModel, EnergyTerms, LatentTrajectory, ModelError};
use crate::nn::{clip_by_norm, Matrix};
use crate::rng::{self, normal};

static PLAN_CALLS: AtomicU64 = AtomicU64::new(0);

/// Number of planner runs started by this process.
pub fn planner_invocations() -> u64 {
    PLAN_CALLS.load(Ordering::Relaxed)
}

#[derive(Debug, thiserror::Error)]
pub enum PlannerError {
    #[error("invalid planner configuration: {0}")]
    Config(String),
    #[error("planner diverged: non-finite trajectory after step {step}")]
    Diverged { step: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitStrategy {
    /// `z_1 = h`, remaining columns `N(0, σ²I)`.
    EncoderSeeded,
    /// Every column `h + N(0, σ²I)`.
    AllEncoder,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    pub steps: usize,
    pub step_size: f64,
    pub noise: f64,
    pub clip_norm: f64,
    pub anchor_weight: f64,
    pub init: InitStrategy,
    pub init_sigma: f64,
    /// Snapshot stride used when `steps > 200`; shorter runs snapshot every step.
    pub snapshot_stride: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.01,
            noise: 0.005,
            clip_norm: 1.0,
            anchor_weight: 0.0,
            init: InitStrategy::EncoderSeeded,
            init_sigma: 0.1,
            snapshot_stride: 10,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<(), PlannerError> {
        let bad = |m: String| Err(PlannerError::Config(m));
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return bad(format!("step size {} must be finite and >= 0", self.step_size));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be finite and >= 0", self.noise));
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {} must be > 0", self.clip_norm));
        }
        if !(self.anchor_weight >= 0.0 && self.anchor_weight.is_finite()) {
            return bad(format!("anchor weight {} must be >= 0", self.anchor_weight));
        }
        if !(self.init_sigma >= 0.0 && self.init_sigma.is_finite()) {
            return bad(format!("init sigma {} must be >= 0", self.init_sigma));
        }
        Ok(())
    }

    fn snapshot_at(&self, step: usize) -> bool {
        self.steps <= 200 || step == self.steps || step % self.snapshot_stride.max(1) == 0
    }
}

/// Initial `d x T` trajectory for the given strategy.
pub fn init_trajectory<R: rand::Rng + ?Sized>(
    h: &[f64],
    traj_len: usize,
    strategy: InitStrategy,
    sigma: f64,
    rng: &mut R,
) -> LatentTrajectory {
    let d = h.len();
    let mut z = Matrix::zeros(d, traj_len);
    match strategy {
        InitStrategy::Zero => {}
        InitStrategy::EncoderSeeded => {
            z.set_column(0, h);
            for t in 1..traj_len {
                let col: Vec<f64> = (0..d).map(|_| sigma * normal(rng)).collect();
                z.set_column(t, &col);
            }
        }
        InitStrategy::AllEncoder => {
            for t in 0..traj_len {
                let col: Vec<f64> = h.iter().map(|v| v + sigma * normal(rng)).collect();
                z.set_column(t, &col);
            }
        }
    }
    z
}

/// `‖z_T - h‖₂` for the last column.
pub fn drift(z: &Matrix, h: &[f64]) -> f64 {
    let last = z.cols() - 1;
    h.iter()
        .enumerate()
        .map(|(r, hv)| {
            let dlt = z.get(r, last) - hv;
            dlt * dlt
        })
        .sum::<f64>()
        .sqrt()
}

/// Initializes from `h` and runs the planner.
pub fn plan<R: rand::Rng + ?Sized>(
    energy: &EnergyModel,
    h: &[f64],
    traj_len: usize,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<(LatentTrajectory, PlannerTrace), PlannerError> {
    if traj_len == 0 {
        return Err(PlannerError::Config("trajectory length must be >= 1".into()));
    }
    let z0 = init_trajectory(h, traj_len, cfg.init, cfg.init_sigma, rng);
    plan_from(energy, h, z0, cfg, rng)
}

/// Planner objective `E(h, z) + λ_anchor Σ_t ‖z_t - h‖²` and its gradient pieces.
#[derive(Debug, Clone)]
pub struct Objective {
    pub terms: EnergyTerms,
    pub anchor_penalty: f64,
    pub value: f64,
    pub energy_grad: EnergyGrad,
    pub anchor_grad: Matrix,
    /// `∇_z E + 2 λ_anchor (z - H)`, before clipping.
    pub grad: Matrix,
}

pub fn objective(energy: &EnergyModel, h: &[f64], z: &Matrix, anchor_weight: f64) -> Result<Objective, ModelError> {
    let (terms, energy_grad) = energy.energy_grad_z(h, z)?;
    let (d, t_len) = z.shape();
    let mut anchor_grad = Matrix::zeros(d, t_len);
    let mut anchor_penalty = 0.0;
    if anchor_weight > 0.0 {
        for r in 0..d {
            for t in 0..t_len {
                let diff = z.get(r, t) - h[r];
                anchor_penalty += diff * diff;
                anchor_grad.set(r, t, 2.0 * anchor_weight * diff);
            }
        }
        anchor_penalty *= anchor_weight;
    }
    let mut grad = energy_grad.total.clone();
    grad.axpy(1.0, &anchor_grad);
    Ok(Objective {
        value: terms.total + anchor_penalty,
        terms,
        anchor_penalty,
        energy_grad,
        anchor_grad,
        grad,
    })
}

/// Runs `cfg.steps` updates from a given initial trajectory. Model parameters are read-only.
pub fn plan_from<R: rand::Rng + ?Sized>(
    energy: &EnergyModel,
    h: &[f64],
    init: LatentTrajectory,
    cfg: &PlannerConfig,
    rng: &mut R,
) -> Result<(LatentTrajectory, PlannerTrace), PlannerError> {
    cfg.validate()?;
    if h.len() != init.rows() {
        return Err(PlannerError::Config(format!(
            "context has {} entries but the trajectory has {} rows",
            h.len(),
            init.rows()
        )));
    }
    PLAN_CALLS.fetch_add(1, Ordering::Relaxed);
    let (d, t_len) = init.shape();
    let noise_scale = (2.0 * cfg.step_size).sqrt() * cfg.noise;

    let mut z = init;
    let mut records = Vec::with_capacity(cfg.steps + 1);
    for k in 0..=cfg.steps {
        let obj = objective(energy, h, &z, cfg.anchor_weight)?;
        let g = &obj.energy_grad;
        records.push(TraceRecord {
            step: k,
            energy: obj.terms,
            drift: drift(&z, h),
            grad_norms: GradNorms {
                step: g.step.frobenius_norm(),
                trans: g.trans.frobenius_norm(),
                smooth: g.smooth.frobenius_norm(),
                anchor: obj.anchor_grad.frobenius_norm(),
                energy: g.total.frobenius_norm(),
                objective: obj.grad.frobenius_norm(),
            },
            snapshot: cfg.snapshot_at(k).then(|| z.as_slice().to_vec()),
        });
        if k == cfg.steps {
            break;
        }
        let clipped = clip_by_norm(&obj.grad, cfg.clip_norm);
        z.axpy(-cfg.step_size, &clipped);
        if noise_scale > 0.0 {
            for v in z.as_mut_slice() {
                *v += noise_scale * normal(rng);
            }
        }
        if !z.is_finite() {
            return Err(PlannerError::Diverged { step: k + 1 });
        }
    }
    let argmin_step = records
        .iter()
        .min_by(|a, b| a.energy.total.total_cmp(&b.energy.total))
        .map(|r| r.step)
        .unwrap_or(0);
    let trace = PlannerTrace {
        h_x: h.to_vec(),
        latent_dim: d,
        traj_len: t_len,
        records,
        argmin_step,
        final_trajectory: z.as_slice().to_vec(),
    };
    Ok((z, trace))
}

/// One batch member: a stable key (seeds the member's random stream) and its context vector.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanItem {
    pub key: u64,
    pub h: Vec<f64>,
}

/// Plans every item independently. Item `i` uses a stream derived from `(seed, key_i)`, so results
/// do not depend on batch composition or order. Failures are reported per item.
pub fn plan_batch(
    energy: &EnergyModel,
    items: &[PlanItem],
    traj_len: usize,
    cfg: &PlannerConfig,
    seed: u64,
) -> Vec<Result<(LatentTrajectory, PlannerTrace), PlannerError>> {
    items
        .par_iter()
        .map(|item| {
            let mut r = rng::derived(seed, &[item.key]);
            plan(energy, &item.h, traj_len, cfg, &mut r)
        })
        .collect()
}
