//! Task metrics on decoded outputs.
//!
//! All primary metrics are on a 0..100 scale: per-node accuracy for graphs, `100 - |error|` for
//! arithmetic (error in unscaled target units) and clause-level SAT% for logic.

use serde::{Deserialize, Serialize};

use crate::model::{ModelError, TaskHeads};
use crate::tasks::{sat_fraction, Instance, TaskKind};

/// Metric for one decoded instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub primary: f64,
    /// Graph only: 100 when every real node is labeled correctly, else 0.
    pub exact: Option<f64>,
    /// Arithmetic only.
    pub abs_error: Option<f64>,
}

/// Scores a decoder output (`TaskHeads::decode` of the final latent state).
pub fn score_decoded(inst: &Instance, decoded: &[f64], target_scale: f64) -> InstanceScore {
    match inst {
        Instance::Graph(g) => {
            let n = g.node_count;
            let correct = (0..n)
                .filter(|&i| (decoded[i] > 0.5) == (g.labels[i] == 1))
                .count();
            InstanceScore {
                primary: 100.0 * correct as f64 / n as f64,
                exact: Some(if correct == n { 100.0 } else { 0.0 }),
                abs_error: None,
            }
        }
        Instance::Arith(a) => {
            let err = (decoded[0] * target_scale - a.target).abs();
            InstanceScore {
                primary: 100.0 - err,
                exact: None,
                abs_error: Some(err),
            }
        }
        Instance::Logic(c) => {
            let assignment: Vec<bool> = decoded[..c.n_vars].iter().map(|p| *p > 0.5).collect();
            InstanceScore {
                primary: 100.0 * sat_fraction(&c.clauses, &assignment),
                exact: None,
                abs_error: None,
            }
        }
    }
}

pub fn score_latent(
    heads: &TaskHeads,
    inst: &Instance,
    z_last: &[f64],
    target_scale: f64,
) -> Result<InstanceScore, ModelError> {
    Ok(score_decoded(inst, &heads.decode(z_last)?, target_scale))
}

/// Mean metric over a set of instances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub task: TaskKind,
    pub count: usize,
    /// Mean per-node accuracy, `100 - MAE`, or mean SAT%.
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exact_match: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
}

pub fn summarize(task: TaskKind, scores: &[InstanceScore]) -> Summary {
    let n = scores.len().max(1) as f64;
    let mean = |f: &dyn Fn(&InstanceScore) -> Option<f64>| -> Option<f64> {
        let vals: Vec<f64> = scores.iter().filter_map(f).collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    };
    match task {
        // 100 - MAE is computed from the same errors so the two add to exactly 100
        TaskKind::Arithmetic => {
            let mae = mean(&|s| s.abs_error).unwrap_or(0.0);
            Summary {
                task,
                count: scores.len(),
                value: 100.0 - mae,
                exact_match: None,
                mae: Some(mae),
            }
        }
        _ => Summary {
            task,
            count: scores.len(),
            value: scores.iter().map(|s| s.primary).sum::<f64>() / n,
            exact_match: mean(&|s| s.exact),
            mae: None,
        },
    }
}
