//! Split training: supervised encoder/decoder learning plus contrastive energy shaping.
//!
//! Encoder and decoder parameters only see `α_dec · L_dec + α_smooth · L_smooth`; energy
//! parameters only see `α_contr · L_contr`. Each group has its own Adam state, and a group whose
//! loss weights are all zero is not stepped at all (so weight decay cannot move it either).

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::metrics::{score_latent, summarize, Summary};
use crate::model::{
    smoothness, smoothness_grad, Checkpoint, EnergyModel, EnergyParamGrad, HeadsGrad, LatentTrajectory, Manifest,
    ModelError, TaskHeads,
};
use crate::nn::{adam_step, AdamState, Matrix, NnError};
use crate::planner::{plan, PlannerConfig, PlannerError};
use crate::rng::{self, normal};
use crate::tasks::{Dataset, Instance, TaskKind};

const TAG_INIT: u64 = 0x1;
const TAG_SHUFFLE: u64 = 0x2;
const TAG_BATCH: u64 = 0x3;
const TAG_EVAL: u64 = 0x4;

/// Instances whose per-instance gradients are summed sequentially before the ordered reduction.
/// Fixed so results do not depend on the number of worker threads.
const CHUNK: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is for `{found}` but the config trains `{expected}`")]
    TaskMismatch { expected: TaskKind, found: TaskKind },
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: String,
        epoch: usize,
        batch: usize,
    },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Model {
        epoch: usize,
        batch: usize,
        source: ModelError,
    },
    #[error("epoch {epoch}, batch {batch}: {source}")]
    Planner {
        epoch: usize,
        batch: usize,
        source: PlannerError,
    },
    #[error(transparent)]
    Setup(#[from] ModelError),
    #[error("config: {0}")]
    Config(String),
    #[error("writing history: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing history: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub dec: f64,
    pub contr: f64,
    pub smooth: f64,
    pub margin: f64,
    pub dual_path: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            dec: 1.0,
            contr: 0.1,
            smooth: 0.01,
            margin: 1.0,
            dual_path: false,
        }
    }
}

impl LossWeights {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self {
            dec: cfg.alpha_dec,
            contr: cfg.alpha_contr,
            smooth: cfg.alpha_smooth,
            margin: cfg.margin,
            dual_path: cfg.dual_path,
        }
    }
}

/// `z⁺_t = h + ε_t`, `ε_t ~ N(0, σ² I)`. Each column depends on `h` with identity Jacobian.
pub fn teacher_trajectory<R: Rng + ?Sized>(h: &[f64], traj_len: usize, sigma: f64, rng: &mut R) -> LatentTrajectory {
    let d = h.len();
    let mut z = Matrix::zeros(d, traj_len);
    for r in 0..d {
        for t in 0..traj_len {
            z.set(r, t, h[r] + sigma * normal(rng));
        }
    }
    z
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeMode {
    Perturb,
    Planner,
}

/// Hard negative for the contrastive hinge. `Perturb` adds `scale · N(0, I)` to `z⁺`; `Planner`
/// returns a copy of the planner output, which is a constant for every later gradient.
pub fn hard_negative<R: Rng + ?Sized>(
    z_pos: &LatentTrajectory,
    mode: NegativeMode,
    planner_output: Option<&LatentTrajectory>,
    scale: f64,
    rng: &mut R,
) -> Result<LatentTrajectory, TrainError> {
    match mode {
        NegativeMode::Perturb => {
            let mut z = z_pos.clone();
            for v in z.as_mut_slice() {
                *v += scale * normal(rng);
            }
            Ok(z)
        }
        NegativeMode::Planner => planner_output
            .cloned()
            .ok_or_else(|| TrainError::Config("planner negative requested without a planner output".into())),
    }
}

/// `max(0, E(h, z⁺) - E(h, z⁻) + m)`; when the hinge is active, `scale · ∂/∂θ` is accumulated.
pub fn contrastive_loss(
    energy: &EnergyModel,
    h: &[f64],
    z_pos: &LatentTrajectory,
    z_neg: &LatentTrajectory,
    margin: f64,
    grads: Option<(&mut EnergyParamGrad, f64)>,
) -> Result<f64, ModelError> {
    let e_pos = energy.energy(h, z_pos)?.total;
    let e_neg = energy.energy(h, z_neg)?.total;
    let loss = (e_pos - e_neg + margin).max(0.0);
    if loss > 0.0 {
        if let Some((g, s)) = grads {
            energy.energy_param_grad(h, z_pos, g, s)?;
            energy.energy_param_grad(h, z_neg, g, -s)?;
        }
    }
    Ok(loss)
}

/// Supervised decoder loss for one instance. With `planned = Some(z*_T)` this is the dual-path
/// loss `½ ℓ(dec(h)) + ½ ℓ(dec(z*_T))`, where `z*_T` is a constant. Returns the loss and its
/// gradient with respect to `h`; decoder gradients are accumulated into `grads`.
pub fn decoder_loss(
    heads: &TaskHeads,
    inst: &Instance,
    h: &[f64],
    planned: Option<&[f64]>,
    target_scale: f64,
    grads: Option<(&mut HeadsGrad, f64)>,
) -> Result<(f64, Vec<f64>), ModelError> {
    let target = heads.target(inst, target_scale)?;
    match planned {
        None => heads.decoder_loss(h, &target, grads),
        Some(z) => match grads {
            Some((g, s)) => {
                let (lh, mut gh) = heads.decoder_loss(h, &target, Some((&mut *g, 0.5 * s)))?;
                let (lz, _) = heads.decoder_loss(z, &target, Some((g, 0.5 * s)))?;
                gh.iter_mut().for_each(|v| *v *= 0.5);
                Ok((0.5 * lh + 0.5 * lz, gh))
            }
            None => {
                let (lh, mut gh) = heads.decoder_loss(h, &target, None)?;
                let (lz, _) = heads.decoder_loss(z, &target, None)?;
                gh.iter_mut().for_each(|v| *v *= 0.5);
                Ok((0.5 * lh + 0.5 * lz, gh))
            }
        },
    }
}

/// One row of the training history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub decoder_loss: f64,
    pub contrastive_loss: f64,
    pub smoothness_loss: f64,
    pub val_metric: f64,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.epochs {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrainError> {
        let mut r = csv::Reader::from_path(path)?;
        let epochs = r.deserialize().collect::<Result<Vec<EpochRecord>, _>>()?;
        Ok(Self { epochs })
    }

    pub fn last_val_metric(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.val_metric)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct BatchLosses {
    dec: f64,
    contr: f64,
    smooth: f64,
}

struct Accum {
    heads: HeadsGrad,
    energy: Option<EnergyParamGrad>,
    losses: BatchLosses,
}

impl Accum {
    fn add(&mut self, other: &Accum) {
        self.heads.add_scaled(1.0, &other.heads);
        if let (Some(a), Some(b)) = (self.energy.as_mut(), other.energy.as_ref()) {
            a.add_scaled(1.0, b);
        }
        self.losses.dec += other.losses.dec;
        self.losses.contr += other.losses.contr;
        self.losses.smooth += other.losses.smooth;
    }
}

enum Failure {
    Model(ModelError),
    Planner(PlannerError),
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure::Model(e)
    }
}

impl From<PlannerError> for Failure {
    fn from(e: PlannerError) -> Self {
        Failure::Planner(e)
    }
}

/// Stateful trainer; [`train`] drives it for the configured number of epochs.
pub struct Trainer<'a> {
    cfg: ExperimentConfig,
    dataset: &'a Dataset,
    weights: LossWeights,
    heads: TaskHeads,
    energy: Option<EnergyModel>,
    heads_opt: AdamState,
    energy_opt: Option<AdamState>,
    planner: PlannerConfig,
    epoch: usize,
    batch_in_epoch: usize,
    global_batch: usize,
    order: Vec<usize>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &ExperimentConfig, dataset: &'a Dataset) -> Result<Self, TrainError> {
        let mut init = rng::derived(cfg.seed, &[TAG_INIT]);
        let heads = TaskHeads::new(cfg.task, &cfg.dims(), cfg.layout(), &mut init)?;
        let energy = EnergyModel::new(&cfg.dims(), &mut init)?;
        Self::with_models(cfg, dataset, heads, Some(energy))
    }

    /// Trainer for heads only: decoder loss, no energy model, no planner.
    pub fn baseline(cfg: &ExperimentConfig, dataset: &'a Dataset, heads: TaskHeads) -> Result<Self, TrainError> {
        Self::with_models(cfg, dataset, heads, None)
    }

    pub fn with_models(
        cfg: &ExperimentConfig,
        dataset: &'a Dataset,
        heads: TaskHeads,
        energy: Option<EnergyModel>,
    ) -> Result<Self, TrainError> {
        cfg.validate().map_err(|e| TrainError::Config(e.to_string()))?;
        if dataset.task != cfg.task {
            return Err(TrainError::TaskMismatch {
                expected: cfg.task,
                found: dataset.task,
            });
        }
        if dataset.train.is_empty() {
            return Err(TrainError::Config("empty training split".into()));
        }
        let mut weights = LossWeights::from_config(cfg);
        if energy.is_none() {
            weights = LossWeights {
                dec: weights.dec,
                contr: 0.0,
                smooth: 0.0,
                margin: weights.margin,
                dual_path: false,
            };
        }
        let heads_opt = AdamState::for_params(&heads);
        let energy_opt = energy.as_ref().map(AdamState::for_params);
        let mut t = Self {
            cfg: cfg.clone(),
            dataset,
            weights,
            heads,
            energy,
            heads_opt,
            energy_opt,
            planner: cfg.training_planner(),
            epoch: 0,
            batch_in_epoch: 0,
            global_batch: 0,
            order: Vec::new(),
        };
        t.shuffle();
        Ok(t)
    }

    pub fn heads(&self) -> &TaskHeads {
        &self.heads
    }

    pub fn energy(&self) -> Option<&EnergyModel> {
        self.energy.as_ref()
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    fn shuffle(&mut self) {
        use rand::seq::SliceRandom;
        let mut r = rng::derived(self.cfg.seed, &[TAG_SHUFFLE, self.epoch as u64]);
        self.order = (0..self.dataset.train.len()).collect();
        self.order.shuffle(&mut r);
    }

    fn batches_per_epoch(&self) -> usize {
        self.dataset.train.len().div_ceil(self.cfg.batch_size)
    }

    /// Runs one minibatch update and returns its mean losses `(dec, contr, smooth)`.
    pub fn train_batch(&mut self) -> Result<(f64, f64, f64), TrainError> {
        let (epoch, batch) = (self.epoch, self.batch_in_epoch);
        let bs = self.cfg.batch_size;
        let start = batch * bs;
        let idx: Vec<usize> = self.order[start..(start + bs).min(self.order.len())].to_vec();
        let scale = 1.0 / idx.len() as f64;
        let planner_negatives =
            self.energy.is_some() && self.weights.contr > 0.0 && (self.global_batch + 1) % self.cfg.planner_negative_every == 0;

        let chunks: Vec<Result<Accum, Failure>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut acc = self.empty_accum();
                for &i in chunk {
                    let part = self.instance_pass(i, epoch, batch, planner_negatives, scale)?;
                    acc.add(&part);
                }
                Ok(acc)
            })
            .collect();
        let mut total = self.empty_accum();
        for c in chunks {
            match c {
                Ok(a) => total.add(&a),
                Err(Failure::Model(source)) => {
                    return Err(match source {
                        ModelError::NonFinite { term } => TrainError::NonFinite {
                            what: term.to_string(),
                            epoch,
                            batch,
                        },
                        source => TrainError::Model { epoch, batch, source },
                    })
                }
                Err(Failure::Planner(source)) => return Err(TrainError::Planner { epoch, batch, source }),
            }
        }
        let losses = total.losses;
        for (name, v) in [("decoder loss", losses.dec), ("contrastive loss", losses.contr), ("smoothness loss", losses.smooth)] {
            if !v.is_finite() {
                return Err(TrainError::NonFinite {
                    what: name.into(),
                    epoch,
                    batch,
                });
            }
        }

        let nonfinite = |e: NnError| match e {
            NnError::NonFiniteGradient { group } => TrainError::NonFinite {
                what: format!("{group} gradient"),
                epoch,
                batch,
            },
            other => TrainError::Model {
                epoch,
                batch,
                source: other.into(),
            },
        };
        if self.weights.dec > 0.0 || self.weights.smooth > 0.0 {
            adam_step(
                &mut self.heads,
                &total.heads,
                &mut self.heads_opt,
                self.cfg.learning_rate,
                self.cfg.weight_decay,
                "encoder-decoder",
            )
            .map_err(nonfinite)?;
        }
        if self.weights.contr > 0.0 {
            if let (Some(e), Some(g), Some(opt)) = (self.energy.as_mut(), total.energy.as_ref(), self.energy_opt.as_mut()) {
                adam_step(e, g, opt, self.cfg.learning_rate, self.cfg.weight_decay, "energy").map_err(nonfinite)?;
            }
        }

        self.global_batch += 1;
        self.batch_in_epoch += 1;
        if self.batch_in_epoch == self.batches_per_epoch() {
            self.batch_in_epoch = 0;
            self.epoch += 1;
            self.shuffle();
        }
        Ok((losses.dec, losses.contr, losses.smooth))
    }

    fn empty_accum(&self) -> Accum {
        Accum {
            heads: self.heads.zero_grad(),
            energy: self.energy.as_ref().map(EnergyModel::zero_grad),
            losses: BatchLosses::default(),
        }
    }

    /// Forward and backward for one training instance, gradients pre-scaled by `scale`.
    fn instance_pass(
        &self,
        i: usize,
        epoch: usize,
        batch: usize,
        planner_negatives: bool,
        scale: f64,
    ) -> Result<Accum, Failure> {
        let inst = &self.dataset.train[i];
        let w = &self.weights;
        let mut r = rng::derived(self.cfg.seed, &[TAG_BATCH, epoch as u64, batch as u64, i as u64]);
        let mut acc = self.empty_accum();
        let (h, tape) = self.heads.encode_with_tape(inst)?;
        let t_len = self.cfg.trajectory_length;

        // a planner run from the current parameters, shared by the dual-path branch and the
        // planner negative; its output is a constant for every gradient below
        let planned = match (&self.energy, w.dual_path || planner_negatives) {
            (Some(e), true) => Some(plan(e, &h, t_len, &self.planner, &mut r)?.0),
            _ => None,
        };

        let z_last = planned.as_ref().filter(|_| w.dual_path).map(|z| z.column(t_len - 1));
        let (l_dec, g_dec) = decoder_loss(
            &self.heads,
            inst,
            &h,
            z_last.as_deref(),
            self.cfg.target_scale,
            Some((&mut acc.heads, w.dec * scale)),
        )?;
        let mut g_h: Vec<f64> = g_dec.iter().map(|v| w.dec * v).collect();
        acc.losses.dec = l_dec * scale;

        if self.energy.is_some() || w.smooth > 0.0 {
            let z_pos = teacher_trajectory(&h, t_len, self.cfg.sigma_teacher, &mut r);
            acc.losses.smooth = smoothness(&z_pos) * scale;
            // dz⁺_t/dh = I for every column
            let gs = smoothness_grad(&z_pos);
            for (row, gh) in g_h.iter_mut().enumerate() {
                *gh += w.smooth * gs.row(row).iter().sum::<f64>();
            }
            if let Some(energy) = &self.energy {
                let mut negatives =
                    vec![hard_negative(&z_pos, NegativeMode::Perturb, None, self.cfg.negative_perturb_scale, &mut r)
                        .expect("perturb negatives need no planner output")];
                if planner_negatives {
                    negatives.push(
                        hard_negative(&z_pos, NegativeMode::Planner, planned.as_ref(), 0.0, &mut r)
                            .expect("planner output computed above"),
                    );
                }
                let per_neg = 1.0 / negatives.len() as f64;
                let g = acc.energy.as_mut().expect("energy gradient slot");
                for z_neg in &negatives {
                    let l = contrastive_loss(energy, &h, &z_pos, z_neg, w.margin, Some((g, w.contr * scale * per_neg)))?;
                    acc.losses.contr += l * scale * per_neg;
                }
            }
        }
        if w.dec > 0.0 || w.smooth > 0.0 {
            self.heads.encoder_backward(&tape, &g_h, &mut acc.heads, scale)?;
        }
        Ok(acc)
    }

    /// Runs every remaining batch of the current epoch.
    pub fn train_epoch(&mut self) -> Result<EpochRecord, TrainError> {
        let started = Instant::now();
        let epoch = self.epoch;
        let n = self.batches_per_epoch() - self.batch_in_epoch;
        let (mut dec, mut contr, mut smooth) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b, c) = self.train_batch()?;
            dec += a;
            contr += b;
            smooth += c;
        }
        let val = self.validate()?;
        let k = n.max(1) as f64;
        Ok(EpochRecord {
            epoch,
            decoder_loss: dec / k,
            contrastive_loss: contr / k,
            smoothness_loss: smooth / k,
            val_metric: val.value,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    /// Direct-decode metric on the validation split.
    pub fn validate(&self) -> Result<Summary, TrainError> {
        Ok(direct_metric(&self.heads, &self.dataset.val, self.cfg.target_scale)?)
    }

    pub fn into_checkpoint(self) -> Checkpoint {
        Checkpoint {
            manifest: Manifest {
                task: self.cfg.task,
                latent_dim: self.cfg.latent_dim,
                traj_len: self.cfg.trajectory_length,
                config_hash: self.cfg.hash(),
                target_scale: self.cfg.target_scale,
                layout: self.cfg.layout(),
                has_energy: self.energy.is_some(),
            },
            heads: self.heads,
            energy: self.energy,
        }
    }
}

/// Mean direct-decode metric of `dec(enc(x))` over `instances`.
pub fn direct_metric(heads: &TaskHeads, instances: &[Instance], target_scale: f64) -> Result<Summary, ModelError> {
    let scores = instances
        .par_iter()
        .map(|inst| {
            let h = heads.encode(inst)?;
            score_latent(heads, inst, &h, target_scale)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(summarize(heads.task, &scores))
}

/// Trains the full model for `cfg.epochs` epochs.
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<(Checkpoint, TrainHistory), TrainError> {
    train_with(cfg, dataset, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    let mut t = Trainer::new(cfg, dataset)?;
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        let rec = t.train_epoch()?;
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    Ok((t.into_checkpoint(), history))
}

/// Trains encoder/decoder heads alone on the decoder loss.
pub fn train_baseline(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    heads: TaskHeads,
) -> Result<(Checkpoint, TrainHistory), TrainError> {
    let mut t = Trainer::baseline(cfg, dataset, heads)?;
    let mut history = TrainHistory::default();
    for _ in 0..cfg.epochs {
        history.epochs.push(t.train_epoch()?);
    }
    Ok((t.into_checkpoint(), history))
}

/// Fraction of instances with `E(h, z⁺) < E(h, z⁻)` for fresh teacher and perturbed trajectories.
pub fn contrastive_success(
    checkpoint: &Checkpoint,
    instances: &[Instance],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64, ModelError> {
    let energy = checkpoint.energy()?;
    let wins = instances
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let mut r = rng::derived(seed, &[TAG_EVAL, i as u64]);
            let h = checkpoint.heads.encode(inst)?;
            let z_pos = teacher_trajectory(&h, cfg.trajectory_length, cfg.sigma_teacher, &mut r);
            let z_neg = hard_negative(&z_pos, NegativeMode::Perturb, None, cfg.negative_perturb_scale, &mut r)
                .expect("perturb negatives need no planner output");
            Ok((energy.energy(&h, &z_pos)?.total < energy.energy(&h, &z_neg)?.total) as usize)
        })
        .collect::<Result<Vec<usize>, ModelError>>()?;
    Ok(wins.iter().sum::<usize>() as f64 / instances.len().max(1) as f64)
}
