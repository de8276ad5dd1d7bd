mod common;

use common::*;
use latplan::nn::Matrix;
use latplan::planner::{
    drift, init_trajectory, plan, plan_batch, plan_from, read_traces, write_traces, InitStrategy, PlanItem,
    PlannerConfig, PlannerError,
};
use latplan::rng::seeded;

fn gd(steps: usize) -> PlannerConfig {
    PlannerConfig {
        steps,
        noise: 0.0,
        ..PlannerConfig::default()
    }
}

#[test]
fn init_examples() {
    let h = [1.0, -2.0, 3.0];
    let mut rng = seeded(0);
    let z = init_trajectory(&h, 4, InitStrategy::EncoderSeeded, 0.1, &mut rng);
    assert_eq!(z.column(0), h.to_vec());
    assert!(z.column(1).iter().all(|v| v.abs() < 1.0));
    let z = init_trajectory(&h, 4, InitStrategy::Zero, 0.1, &mut rng);
    assert!(z.as_slice().iter().all(|v| *v == 0.0));
    let z = init_trajectory(&h, 4, InitStrategy::AllEncoder, 0.0, &mut rng);
    for t in 0..4 {
        assert_eq!(z.column(t), h.to_vec());
    }
}

#[test]
fn init_noise_statistics() {
    let h = vec![0.5; 64];
    let sigma = 0.1;
    let mut rng = seeded(11);
    let mut seeded_cols = Vec::new();
    let mut all_enc = Vec::new();
    for _ in 0..50 {
        let z = init_trajectory(&h, 8, InitStrategy::EncoderSeeded, sigma, &mut rng);
        for t in 1..8 {
            seeded_cols.extend(z.column(t));
        }
        let z = init_trajectory(&h, 8, InitStrategy::AllEncoder, sigma, &mut rng);
        all_enc.extend(z.as_slice().iter().map(|v| v - 0.5));
    }
    for sample in [&seeded_cols, &all_enc] {
        let n = sample.len() as f64;
        let mean = sample.iter().sum::<f64>() / n;
        let var = sample.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var / (sigma * sigma) - 1.0).abs() < 0.05, "var {var}");
    }
}

#[test]
fn zero_steps_returns_the_initial_trajectory() {
    let dims = tiny_dims(4, 3);
    let e = random_energy(0, &dims);
    let h = gaussian_vec(&mut seeded(1), 4, 1.0);
    let init = init_trajectory(&h, 3, InitStrategy::EncoderSeeded, 0.1, &mut seeded(2));
    let cfg = PlannerConfig {
        steps: 0,
        ..PlannerConfig::default()
    };
    let (z, trace) = plan_from(&e, &h, init.clone(), &cfg, &mut seeded(3)).unwrap();
    assert_eq!(z, init);
    assert_eq!(trace.records.len(), 1);
    assert_eq!(trace.argmin_step, 0);
    assert_eq!(trace.records[0].energy, e.energy(&h, &init).unwrap());
    assert_eq!(trace.records[0].drift, drift(&init, &h));
}

#[test]
fn noiseless_runs_are_bit_identical() {
    let dims = tiny_dims(5, 4);
    let e = random_energy(4, &dims);
    let h = gaussian_vec(&mut seeded(4), 5, 1.0);
    let cfg = gd(30);
    // different RNG streams: with zero noise only the init draw may use them
    let init = init_trajectory(&h, 4, InitStrategy::EncoderSeeded, 0.1, &mut seeded(9));
    let (a, ta) = plan_from(&e, &h, init.clone(), &cfg, &mut seeded(1)).unwrap();
    let (b, tb) = plan_from(&e, &h, init, &cfg, &mut seeded(2)).unwrap();
    assert_eq!(a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(ta, tb);
}

#[test]
fn seeded_langevin_is_reproducible() {
    let dims = tiny_dims(5, 4);
    let e = random_energy(4, &dims);
    let h = gaussian_vec(&mut seeded(4), 5, 1.0);
    let cfg = PlannerConfig::default();
    let (a, _) = plan(&e, &h, 4, &cfg, &mut seeded(8)).unwrap();
    let (b, _) = plan(&e, &h, 4, &cfg, &mut seeded(8)).unwrap();
    let (c, _) = plan(&e, &h, 4, &cfg, &mut seeded(9)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn step_movement_is_bounded_by_clipped_step() {
    let dims = tiny_dims(4, 3);
    let e = random_energy(6, &dims);
    let h = gaussian_vec(&mut seeded(6), 4, 2.0);
    let cfg = PlannerConfig {
        steps: 40,
        step_size: 0.05,
        noise: 0.0,
        clip_norm: 0.5,
        ..PlannerConfig::default()
    };
    let (_, trace) = plan(&e, &h, 3, &cfg, &mut seeded(6)).unwrap();
    let bound = cfg.step_size * cfg.clip_norm * (1.0 + 1e-12);
    for k in 1..trace.records.len() {
        let prev = trace.snapshot(k - 1).unwrap();
        let cur = trace.snapshot(k).unwrap();
        assert!(cur.sub(&prev).frobenius_norm() <= bound);
        // drift can change by at most the movement of z_T
        assert!((trace.records[k].drift - trace.records[k - 1].drift).abs() <= bound);
    }
}

#[test]
fn argmin_and_final_iterate_are_reported() {
    let dims = tiny_dims(4, 3);
    let e = random_energy(2, &dims);
    let h = gaussian_vec(&mut seeded(2), 4, 1.0);
    let (z, trace) = plan(&e, &h, 3, &PlannerConfig::default(), &mut seeded(2)).unwrap();
    assert_eq!(trace.final_matrix(), z);
    assert_eq!(trace.snapshot(trace.steps()).unwrap(), z);
    let energies = trace.energies();
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(energies[trace.argmin_step], min);
}

#[test]
fn long_runs_snapshot_on_stride() {
    let dims = tiny_dims(3, 2);
    let e = random_energy(1, &dims);
    let h = [0.1, 0.2, 0.3];
    let cfg = PlannerConfig {
        steps: 205,
        snapshot_stride: 50,
        ..gd(0)
    };
    let (_, trace) = plan(&e, &h, 2, &cfg, &mut seeded(0)).unwrap();
    let have: Vec<usize> = trace.records.iter().filter(|r| r.snapshot.is_some()).map(|r| r.step).collect();
    assert_eq!(have, vec![0, 50, 100, 150, 200, 205]);
}

#[test]
fn strong_anchor_pulls_toward_context() {
    let dims = tiny_dims(4, 3);
    let e = random_energy(3, &dims);
    let h = gaussian_vec(&mut seeded(3), 4, 1.0);
    let cfg = PlannerConfig {
        steps: 200,
        step_size: 0.05,
        anchor_weight: 10.0,
        init: InitStrategy::Zero,
        ..gd(0)
    };
    let (_, trace) = plan(&e, &h, 3, &cfg, &mut seeded(3)).unwrap();
    let d = trace.records.iter().map(|r| r.drift).collect::<Vec<_>>();
    assert!(d.last().unwrap() < &(0.2 * d[0]));
    assert!(trace.records.iter().skip(1).all(|r| r.grad_norms.anchor > 0.0));
}

#[test]
fn divergence_is_an_error() {
    let dims = tiny_dims(3, 2);
    let e = random_energy(1, &dims);
    let cfg = PlannerConfig {
        steps: 3,
        step_size: 1e300,
        noise: 1e200,
        ..PlannerConfig::default()
    };
    let err = plan(&e, &[0.0; 3], 2, &cfg, &mut seeded(0)).unwrap_err();
    assert!(matches!(err, PlannerError::Diverged { step: 1 }), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let e = random_energy(1, &tiny_dims(3, 2));
    for cfg in [
        PlannerConfig { step_size: -1.0, ..PlannerConfig::default() },
        PlannerConfig { noise: f64::NAN, ..PlannerConfig::default() },
        PlannerConfig { clip_norm: 0.0, ..PlannerConfig::default() },
        PlannerConfig { anchor_weight: -0.1, ..PlannerConfig::default() },
    ] {
        assert!(matches!(plan(&e, &[0.0; 3], 2, &cfg, &mut seeded(0)), Err(PlannerError::Config(_))));
    }
    assert!(plan(&e, &[0.0; 3], 0, &PlannerConfig::default(), &mut seeded(0)).is_err());
    assert!(plan(&e, &[0.0; 4], 2, &PlannerConfig::default(), &mut seeded(0)).is_err());
}

#[test]
fn batch_results_do_not_depend_on_order_or_size() {
    let dims = tiny_dims(4, 3);
    let e = random_energy(7, &dims);
    let mut rng = seeded(7);
    let items: Vec<PlanItem> = (0..6)
        .map(|k| PlanItem {
            key: k,
            h: gaussian_vec(&mut rng, 4, 1.0),
        })
        .collect();
    let cfg = PlannerConfig::default();
    let forward = plan_batch(&e, &items, 3, &cfg, 99);
    let mut rev = items.clone();
    rev.reverse();
    let backward = plan_batch(&e, &rev, 3, &cfg, 99);
    for (i, item) in items.iter().enumerate() {
        let a = forward[i].as_ref().unwrap();
        let b = backward[items.len() - 1 - i].as_ref().unwrap();
        assert_eq!(a.0, b.0);
        let single = plan_batch(&e, std::slice::from_ref(item), 3, &cfg, 99);
        assert_eq!(single[0].as_ref().unwrap().0, a.0);
    }
}

#[test]
fn traces_round_trip_through_jsonl() {
    let dims = tiny_dims(3, 2);
    let e = random_energy(5, &dims);
    let items: Vec<PlanItem> = (0..3).map(|k| PlanItem { key: k, h: vec![k as f64, 0.5, -0.25] }).collect();
    let traces: Vec<_> = plan_batch(&e, &items, 2, &PlannerConfig { steps: 7, ..PlannerConfig::default() }, 1)
        .into_iter()
        .map(|r| r.unwrap().1)
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traces.jsonl");
    write_traces(&path, &traces).unwrap();
    assert_eq!(read_traces(&path).unwrap(), traces);
    let lines = std::fs::read_to_string(&path).unwrap().lines().count();
    assert_eq!(lines, 3 * (1 + 8));

    std::fs::write(&path, "{\"kind\":\"step\",\"instance\":0}\n").unwrap();
    assert!(read_traces(&path).is_err());
}

#[test]
fn drift_examples() {
    let z = Matrix::from_vec(2, 2, vec![9.0, 3.0, 9.0, 4.0]).unwrap();
    assert_eq!(drift(&z, &[0.0, 0.0]), 5.0);
    assert_eq!(drift(&z, &[3.0, 4.0]), 0.0);
}
