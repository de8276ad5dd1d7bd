//! Analyses of planner traces and trained checkpoints: per-step decoding, drift, gradient
//! decomposition, correlations, PCA projection and 2D energy slices.
//!
//! Everything here is a pure function of its inputs; writers emit CSV or JSON only.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::score_latent;
use crate::model::{EnergyModel, ModelError, TaskHeads};
use crate::nn::{dot, Matrix};
use crate::planner::PlannerTrace;
use crate::rng::normal;
use crate::tasks::Instance;

#[derive(Debug, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("trace {instance} has no trajectory snapshot at step {step}; rerun the planner with snapshot_stride = 1 (or at most 200 steps)")]
    MissingSnapshots { instance: usize, step: usize },
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// `{task}_{hash}_{name}.{ext}` inside `dir`, with the hash shortened to 12 characters.
pub fn output_path(dir: &Path, task: &str, checkpoint_hash: &str, name: &str, ext: &str) -> PathBuf {
    let short = &checkpoint_hash[..checkpoint_hash.len().min(12)];
    dir.join(format!("{task}_{short}_{name}.{ext}"))
}

/// Task metric of the decoded final latent state, per instance (rows) and planning step (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetricGrid {
    pub values: Vec<Vec<f64>>,
}

impl StepMetricGrid {
    pub fn n_instances(&self) -> usize {
        self.values.len()
    }

    pub fn n_steps(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    pub fn column_mean(&self, k: usize) -> f64 {
        let c = self.column(k);
        c.iter().sum::<f64>() / c.len().max(1) as f64
    }

    pub fn column_means(&self) -> Vec<f64> {
        (0..self.n_steps()).map(|k| self.column_mean(k)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), DiagnosticsError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["instance".to_string()];
        header.extend((0..self.n_steps()).map(|k| format!("step_{k}")));
        w.write_record(&header)?;
        for (i, row) in self.values.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Decodes `z_T` at every recorded planning step. Column 0 is the pre-planning readout
/// `dec(h_x)`, matching the direct endpoint; column `k >= 1` decodes the trajectory after `k`
/// updates.
pub fn per_step_decode(
    traces: &[PlannerTrace],
    heads: &TaskHeads,
    instances: &[Instance],
    target_scale: f64,
) -> Result<StepMetricGrid, DiagnosticsError> {
    if traces.len() != instances.len() {
        return Err(DiagnosticsError::Input(format!(
            "{} traces for {} instances",
            traces.len(),
            instances.len()
        )));
    }
    let values = traces
        .par_iter()
        .zip(instances)
        .enumerate()
        .map(|(i, (trace, inst))| {
            let mut row = Vec::with_capacity(trace.records.len());
            row.push(score_latent(heads, inst, &trace.h_x, target_scale)?.primary);
            for k in 1..trace.records.len() {
                let z = trace
                    .snapshot(k)
                    .ok_or(DiagnosticsError::MissingSnapshots { instance: i, step: k })?;
                let last = z.column(z.cols() - 1);
                row.push(score_latent(heads, inst, &last, target_scale)?.primary);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>, DiagnosticsError>>()?;
    Ok(StepMetricGrid { values })
}

fn check_pair(a: &[f64], b: &[f64]) -> Result<(), DiagnosticsError> {
    if a.len() != b.len() {
        return Err(DiagnosticsError::Input(format!("series lengths {} and {} differ", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(DiagnosticsError::Input(format!("need at least 3 pairs, got {}", a.len())));
    }
    Ok(())
}

/// Pearson product-moment correlation. Zero variance in either series is reported as
/// [`DiagnosticsError::UndefinedCorrelation`] rather than NaN.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64, DiagnosticsError> {
    check_pair(a, b)?;
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        let which = if saa == 0.0 { "first" } else { "second" };
        return Err(DiagnosticsError::UndefinedCorrelation(format!("{which} series has zero variance")));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties share their average rank.
pub fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64, DiagnosticsError> {
    check_pair(a, b)?;
    pearson(&ranks(a), &ranks(b))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// One row per input point, one column per valid component.
    pub coords: Vec<Vec<f64>>,
    pub directions: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Eigenvalue over total variance, per valid component.
    pub explained: Vec<f64>,
    /// Set when fewer than the requested number of components carry variance.
    pub degenerate: bool,
}

const POWER_MAX_ITERS: usize = 20_000;
const POWER_TOL: f64 = 1e-13;

/// Top principal components by power iteration on the centered data, with each later component
/// iterated in the orthogonal complement of the earlier ones.
pub fn pca_project(points: &[Vec<f64>], components: usize) -> Result<PcaResult, DiagnosticsError> {
    let n = points.len();
    if n < 3 {
        return Err(DiagnosticsError::Input(format!("PCA needs at least 3 points, got {n}")));
    }
    let dim = points[0].len();
    if dim < 2 || points.iter().any(|p| p.len() != dim) {
        return Err(DiagnosticsError::Input("PCA needs points of one common dimension >= 2".into()));
    }
    let mut mean = vec![0.0; dim];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let centered: Vec<Vec<f64>> = points
        .iter()
        .map(|p| p.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let denom = (n - 1) as f64;
    let total: f64 = centered.iter().map(|c| dot(c, c)).sum::<f64>() / denom;
    let cov_apply = |v: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for c in &centered {
            let s = dot(c, v) / denom;
            for (o, x) in out.iter_mut().zip(c) {
                *o += s * x;
            }
        }
        out
    };
    let project_out = |v: &mut Vec<f64>, basis: &[Vec<f64>]| {
        for b in basis {
            let s = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= s * y;
            }
        }
    };

    let mut directions: Vec<Vec<f64>> = Vec::new();
    let mut eigenvalues = Vec::new();
    let floor = 1e-12 * total.max(f64::MIN_POSITIVE);
    for c in 0..components.min(dim) {
        // deterministic start that is not orthogonal to any axis
        let mut v: Vec<f64> = (0..dim).map(|i| 1.0 + 0.1 * ((i + 7 * c) % 13) as f64).collect();
        project_out(&mut v, &directions);
        let norm = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        let mut lambda = 0.0;
        for _ in 0..POWER_MAX_ITERS {
            let mut w = cov_apply(&v);
            project_out(&mut w, &directions);
            let wn = dot(&w, &w).sqrt();
            if wn <= floor {
                lambda = 0.0;
                break;
            }
            w.iter_mut().for_each(|x| *x /= wn);
            let change = w.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            v = w;
            lambda = dot(&v, &cov_apply(&v));
            if change < POWER_TOL {
                break;
            }
        }
        if lambda <= floor {
            break;
        }
        // sign convention: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        directions.push(v);
        eigenvalues.push(lambda);
    }
    let coords = centered
        .iter()
        .map(|c| directions.iter().map(|d| dot(c, d)).collect())
        .collect();
    let explained = eigenvalues.iter().map(|l| if total > 0.0 { l / total } else { 0.0 }).collect();
    Ok(PcaResult {
        coords,
        degenerate: directions.len() < components,
        directions,
        eigenvalues,
        explained,
    })
}

/// Writes PCA coordinates with an optional per-point metric column for coloring.
pub fn write_pca_csv(path: &Path, pca: &PcaResult, metric: Option<&[f64]>) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_path(path)?;
    let k = pca.directions.len();
    let mut header: Vec<String> = (1..=k).map(|c| format!("pc{c}")).collect();
    if metric.is_some() {
        header.push("metric".into());
    }
    w.write_record(&header)?;
    for (i, row) in pca.coords.iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(m) = metric {
            rec.push(m[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Energies on the plane `z_center + a u + b v` for `a, b` on an evenly spaced grid over
/// `[-extent, extent]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeSlice {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub extent: f64,
    pub resolution: usize,
    pub offsets: Vec<f64>,
    /// `energies[i][j]` is at `a = offsets[i]`, `b = offsets[j]`.
    pub energies: Vec<Vec<f64>>,
}

impl LandscapeSlice {
    pub fn min_max(&self) -> (f64, f64) {
        self.energies
            .iter()
            .flatten()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| (lo.min(*e), hi.max(*e)))
    }

    pub fn range(&self) -> f64 {
        let (lo, hi) = self.min_max();
        hi - lo
    }

    pub fn write_json(&self, path: &Path) -> Result<(), DiagnosticsError> {
        let mut w = BufWriter::new(File::create(path)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.flush()?;
        Ok(())
    }
}

fn unit_gaussian<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| normal(rng)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn landscape_slice<R: Rng + ?Sized>(
    energy: &EnergyModel,
    h: &[f64],
    z_center: &Matrix,
    extent: f64,
    resolution: usize,
    rng: &mut R,
) -> Result<LandscapeSlice, DiagnosticsError> {
    if resolution < 3 {
        return Err(DiagnosticsError::Input(format!("resolution {resolution} < 3")));
    }
    let len = z_center.rows() * z_center.cols();
    if len < 2 {
        return Err(DiagnosticsError::Input("slice needs at least two latent coordinates".into()));
    }
    let u = unit_gaussian(len, rng);
    let v = loop {
        let mut v = unit_gaussian(len, rng);
        let s = dot(&v, &u);
        v.iter_mut().zip(&u).for_each(|(x, y)| *x -= s * y);
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            break v.into_iter().map(|x| x / n).collect::<Vec<f64>>();
        }
    };
    let offsets: Vec<f64> = (0..resolution)
        .map(|i| -extent + 2.0 * extent * i as f64 / (resolution - 1) as f64)
        .collect();
    let energies = offsets
        .par_iter()
        .map(|&a| {
            offsets
                .iter()
                .map(|&b| {
                    let mut z = z_center.clone();
                    for (k, x) in z.as_mut_slice().iter_mut().enumerate() {
                        *x += a * u[k] + b * v[k];
                    }
                    Ok(energy.energy(h, &z)?.total)
                })
                .collect::<Result<Vec<f64>, ModelError>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LandscapeSlice {
        u,
        v,
        extent,
        resolution,
        offsets,
        energies,
    })
}

/// `‖z_T - h_x‖₂` at every recorded step.
pub fn drift_curve(trace: &PlannerTrace) -> Vec<f64> {
    trace.records.iter().map(|r| r.drift).collect()
}

/// Per-step median of the drift curves (all traces must have the same length).
pub fn median_drift_series(traces: &[PlannerTrace]) -> Vec<f64> {
    let steps = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    (0..steps)
        .map(|k| crate::experiments::median(&traces.iter().map(|t| t.records[k].drift).collect::<Vec<_>>()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradTriple {
    pub step: usize,
    pub step_norm: f64,
    pub trans_norm: f64,
    pub smooth_norm: f64,
    /// `‖∇_z E‖`, bounded by the sum of the three parts.
    pub total_norm: f64,
}

pub fn grad_decomposition_summary(trace: &PlannerTrace) -> Vec<GradTriple> {
    trace
        .records
        .iter()
        .map(|r| GradTriple {
            step: r.step,
            step_norm: r.grad_norms.step,
            trans_norm: r.grad_norms.trans,
            smooth_norm: r.grad_norms.smooth,
            total_norm: r.grad_norms.energy,
        })
        .collect()
}

/// Writes `(energy, metric)` pairs and returns their Pearson correlation. The file is written
/// even when the correlation is undefined.
pub fn correlate_energy_quality(
    final_energies: &[f64],
    final_metrics: &[f64],
    path: &Path,
) -> Result<f64, DiagnosticsError> {
    if final_energies.len() != final_metrics.len() {
        return Err(DiagnosticsError::Input("energy and metric series differ in length".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["energy", "metric"])?;
    for (e, m) in final_energies.iter().zip(final_metrics) {
        w.write_record([e.to_string(), m.to_string()])?;
    }
    w.flush()?;
    pearson(final_energies, final_metrics)
}

/// Per-step median drift with mean and spread.
pub fn write_drift_csv(path: &Path, traces: &[PlannerTrace]) -> Result<(), DiagnosticsError> {
    let med = median_drift_series(traces);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "median_drift", "mean_drift", "min_drift", "max_drift"])?;
    for (k, m) in med.iter().enumerate() {
        let vals: Vec<f64> = traces.iter().map(|t| t.records[k].drift).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        w.write_record([k.to_string(), m.to_string(), mean.to_string(), lo.to_string(), hi.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per instance and step: energy terms, drift and gradient norms.
pub fn write_energy_trace_csv(path: &Path, traces: &[PlannerTrace]) -> Result<(), DiagnosticsError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "instance",
        "step",
        "step_mean",
        "trans_mean",
        "smooth",
        "energy",
        "drift",
        "grad_step",
        "grad_trans",
        "grad_smooth",
        "grad_anchor",
        "grad_energy",
        "grad_objective",
    ])?;
    for (i, t) in traces.iter().enumerate() {
        for r in &t.records {
            let g = &r.grad_norms;
            let row = [
                r.energy.step_mean,
                r.energy.trans_mean,
                r.energy.smooth,
                r.energy.total,
                r.drift,
                g.step,
                g.trans,
                g.smooth,
                g.anchor,
                g.energy,
                g.objective,
            ];
            let mut rec = vec![i.to_string(), r.step.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Mean gradient-norm triple per step across traces.
pub fn write_grad_csv(path: &Path, traces: &[PlannerTrace]) -> Result<(), DiagnosticsError> {
    let steps = traces.iter().map(|t| t.records.len()).min().unwrap_or(0);
    let n = traces.len().max(1) as f64;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["step", "step_norm", "trans_norm", "smooth_norm", "total_norm"])?;
    for k in 0..steps {
        let mut acc = [0.0; 4];
        for t in traces {
            let g = &t.records[k].grad_norms;
            acc[0] += g.step / n;
            acc[1] += g.trans / n;
            acc[2] += g.smooth / n;
            acc[3] += g.energy / n;
        }
        let mut rec = vec![k.to_string()];
        rec.extend(acc.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Pearson correlation between energy and metric across instances at every step; `None` where
/// it is undefined.
pub fn per_step_energy_correlation(traces: &[PlannerTrace], grid: &StepMetricGrid) -> Vec<Option<f64>> {
    (0..grid.n_steps())
        .map(|k| {
            let e: Vec<f64> = traces.iter().map(|t| t.records[k].energy.total).collect();
            pearson(&e, &grid.column(k)).ok()
        })
        .collect()
}
