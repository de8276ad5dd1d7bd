use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::EnergyTerms;
use crate::nn::Matrix;

/// Frobenius norms of the gradient pieces at one planner step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradNorms {
    pub step: f64,
    pub trans: f64,
    pub smooth: f64,
    pub anchor: f64,
    /// `‖∇_z E‖`
    pub energy: f64,
    /// `‖∇_z E + anchor gradient‖`, before clipping.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub energy: EnergyTerms,
    pub drift: f64,
    pub grad_norms: GradNorms,
    /// Row-major `d x T` trajectory at this step, when recorded.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub snapshot: Option<Vec<f64>>,
}

/// Everything the planner did for one instance: one record per step including step 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannerTrace {
    pub h_x: Vec<f64>,
    pub latent_dim: usize,
    pub traj_len: usize,
    pub records: Vec<TraceRecord>,
    /// Step with the lowest recorded total energy.
    pub argmin_step: usize,
    pub final_trajectory: Vec<f64>,
}

impl PlannerTrace {
    pub fn steps(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn snapshot(&self, step: usize) -> Option<Matrix> {
        let rec = self.records.get(step)?;
        let data = rec.snapshot.as_ref()?;
        Matrix::from_vec(self.latent_dim, self.traj_len, data.clone()).ok()
    }

    pub fn final_matrix(&self) -> Matrix {
        Matrix::from_vec(self.latent_dim, self.traj_len, self.final_trajectory.clone())
            .expect("trace dimensions are consistent")
    }

    pub fn energies(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.energy.total).collect()
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Line {
    Trace {
        instance: usize,
        h_x: Vec<f64>,
        latent_dim: usize,
        traj_len: usize,
        argmin_step: usize,
        final_trajectory: Vec<f64>,
    },
    Step {
        instance: usize,
        #[serde(flatten)]
        record: TraceRecord,
    },
}

/// Writes traces as line-delimited JSON: per instance one `trace` line then one `step` line per
/// planner step.
pub fn write_traces(path: &Path, traces: &[PlannerTrace]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, t) in traces.iter().enumerate() {
        let head = Line::Trace {
            instance: i,
            h_x: t.h_x.clone(),
            latent_dim: t.latent_dim,
            traj_len: t.traj_len,
            argmin_step: t.argmin_step,
            final_trajectory: t.final_trajectory.clone(),
        };
        writeln!(w, "{}", serde_json::to_string(&head)?)?;
        for r in &t.records {
            let line = Line::Step {
                instance: i,
                record: r.clone(),
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
    }
    w.flush()
}

pub fn read_traces(path: &Path) -> std::io::Result<Vec<PlannerTrace>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<PlannerTrace> = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        match parsed {
            Line::Trace {
                h_x,
                latent_dim,
                traj_len,
                argmin_step,
                final_trajectory,
                ..
            } => out.push(PlannerTrace {
                h_x,
                latent_dim,
                traj_len,
                records: Vec::new(),
                argmin_step,
                final_trajectory,
            }),
            Line::Step { record, .. } => match out.last_mut() {
                Some(t) => t.records.push(record),
                None => {
                    return Err(std::io::Error::new(
                        std::io::ErrorKind::InvalidData,
                        format!("line {}: step record before any trace header", n + 1),
                    ))
                }
            },
        }
    }
    Ok(out)
}
