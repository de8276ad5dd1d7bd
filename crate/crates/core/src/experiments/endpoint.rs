use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metrics::{score_latent, summarize, InstanceScore, Summary};
use crate::model::{Checkpoint, ModelError};
use crate::planner::{plan_batch, PlanItem, PlannerConfig, PlannerTrace};
use crate::tasks::Instance;

/// Direct and planner endpoints on one test set, with the per-instance data behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EndpointEval {
    pub direct: Summary,
    pub planner: Summary,
    pub direct_scores: Vec<InstanceScore>,
    pub planner_scores: Vec<InstanceScore>,
    /// Final total energy per instance (energy at `z*`).
    pub final_energies: Vec<f64>,
    pub drift_median: f64,
    /// Instances whose planner run failed, with the error text. They are left out of the planner
    /// metric.
    pub failures: Vec<(usize, String)>,
    #[serde(skip)]
    pub traces: Vec<PlannerTrace>,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scores `dec(h_x)` and `dec(z*_T)` for every test instance.
///
/// With `planner.steps == 0` no update is taken and the planner endpoint reads out `h_x`, so the
/// two metrics coincide exactly. Energies and drift still refer to the initial trajectory.
pub fn evaluate_endpoint(
    checkpoint: &Checkpoint,
    test: &[Instance],
    planner: &PlannerConfig,
    seed: u64,
) -> Result<EndpointEval, ModelError> {
    let heads = &checkpoint.heads;
    let scale = checkpoint.manifest.target_scale;
    let t_len = checkpoint.manifest.traj_len;
    if let Some(inst) = test.iter().find(|i| i.task() != heads.task) {
        return Err(ModelError::TaskMismatch {
            expected: heads.task,
            found: inst.task(),
        });
    }
    let hs: Vec<Vec<f64>> = test.par_iter().map(|i| heads.encode(i)).collect::<Result<_, _>>()?;
    let direct_scores: Vec<InstanceScore> = test
        .par_iter()
        .zip(&hs)
        .map(|(inst, h)| score_latent(heads, inst, h, scale))
        .collect::<Result<_, _>>()?;
    let direct = summarize(heads.task, &direct_scores);

    let energy = checkpoint.energy()?;
    let items: Vec<PlanItem> = hs
        .iter()
        .enumerate()
        .map(|(i, h)| PlanItem {
            key: i as u64,
            h: h.clone(),
        })
        .collect();
    let results = plan_batch(energy, &items, t_len, planner, seed);
    let mut planner_scores = Vec::with_capacity(test.len());
    let mut final_energies = Vec::with_capacity(test.len());
    let mut drifts = Vec::with_capacity(test.len());
    let mut failures = Vec::new();
    let mut traces = Vec::with_capacity(test.len());
    for (i, res) in results.into_iter().enumerate() {
        match res {
            Ok((z, trace)) => {
                let readout = if planner.steps == 0 { hs[i].clone() } else { z.column(t_len - 1) };
                planner_scores.push(score_latent(heads, &test[i], &readout, scale)?);
                let rec = trace.records.last().expect("trace has a final record");
                final_energies.push(rec.energy.total);
                drifts.push(rec.drift);
                traces.push(trace);
            }
            Err(e) => failures.push((i, e.to_string())),
        }
    }
    Ok(EndpointEval {
        direct,
        planner: summarize(heads.task, &planner_scores),
        direct_scores,
        planner_scores,
        final_energies,
        drift_median: median(&drifts),
        failures,
        traces,
    })
}
