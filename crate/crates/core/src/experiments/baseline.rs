use crate::config::ExperimentConfig;
use crate::model::{EnergyModel, ModelError, TaskHeads};
use crate::nn::Parameters;
use crate::rng;
use crate::tasks::TaskKind;

const TAG_BASELINE: u64 = 0xba5e;

/// Relative tolerance on the parameter budget match.
pub const BUDGET_TOLERANCE: f64 = 0.05;

/// Parameters of the full system (heads plus energy model) for a config.
pub fn full_parameter_count(task: TaskKind, cfg: &ExperimentConfig) -> Result<usize, ModelError> {
    let mut r = rng::derived(cfg.seed, &[TAG_BASELINE]);
    let heads = TaskHeads::new(task, &cfg.dims(), cfg.layout(), &mut r)?;
    let energy = EnergyModel::new(&cfg.dims(), &mut r)?;
    Ok(heads.param_count() + energy.param_count())
}

fn heads_count(task: TaskKind, cfg: &ExperimentConfig, hidden: usize) -> Result<usize, ModelError> {
    // counting needs shapes only, so a throwaway stream is fine
    let mut r = rng::seeded(0);
    Ok(TaskHeads::with_hidden(task, &cfg.dims(), cfg.layout(), hidden, &mut r)?.param_count())
}

/// Encoder/decoder whose hidden width is chosen so its parameter count is as close as possible to
/// the full system's. Returns the heads and the chosen width.
pub fn build_baseline(task: TaskKind, cfg: &ExperimentConfig) -> Result<(TaskHeads, usize), ModelError> {
    let target = full_parameter_count(task, cfg)?;
    // the count grows monotonically with the width; bracket then bisect
    let mut lo = 1usize;
    let mut hi = cfg.head_hidden.max(2);
    while heads_count(task, cfg, hi)? < target {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if heads_count(task, cfg, mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let gap = |w: usize| -> Result<usize, ModelError> { Ok(heads_count(task, cfg, w)?.abs_diff(target)) };
    let width = if gap(lo)? <= gap(hi)? { lo } else { hi };
    let mut r = rng::derived(cfg.seed, &[TAG_BASELINE, 1]);
    let heads = TaskHeads::with_hidden(task, &cfg.dims(), cfg.layout(), width, &mut r)?;
    let count = heads.param_count() as f64;
    if (count - target as f64).abs() > BUDGET_TOLERANCE * target as f64 {
        return Err(ModelError::Shape(format!(
            "no hidden width brings the baseline ({count}) within 5% of the full system ({target})"
        )));
    }
    Ok((heads, width))
}
