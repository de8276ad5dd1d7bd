//! Runs alone in its own process so the global call counters see nothing else.

mod common;

use common::*;
use latplan::experiments::build_baseline;
use latplan::model::energy_evaluations;
use latplan::planner::planner_invocations;
use latplan::tasks::TaskKind;
use latplan::training::{direct_metric, train_baseline};

#[test]
fn baseline_never_touches_energy_or_planner() {
    let cfg = tiny_config(TaskKind::Logic);
    let ds = dataset_for(&cfg);
    let (e0, p0) = (energy_evaluations(), planner_invocations());
    let (heads, _) = build_baseline(cfg.task, &cfg).unwrap();
    let (ck, history) = train_baseline(&cfg, &ds, heads).unwrap();
    direct_metric(&ck.heads, &ds.test, cfg.target_scale).unwrap();
    assert_eq!(history.epochs.len(), cfg.epochs);
    assert!(ck.energy.is_none());
    assert!(history.epochs.iter().all(|e| e.contrastive_loss == 0.0));
    assert_eq!(energy_evaluations(), e0);
    assert_eq!(planner_invocations(), p0);
}
