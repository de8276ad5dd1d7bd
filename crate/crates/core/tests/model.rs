mod common;

use common::*;
use latplan::model::{
    energy_evaluations, loss_and_grad, Checkpoint, EnergyModel, HeadLayout, Manifest, Target, TaskHeads,
};
use latplan::nn::{Activation, Layer, Matrix, Mlp};
use latplan::rng::seeded;
use latplan::tasks::{Instance, TaskKind};

fn linear(weights: &[f64], out: usize) -> Mlp {
    let inp = weights.len() / out;
    Mlp::from_layers(vec![Layer {
        weight: Matrix::from_vec(out, inp, weights.to_vec()).unwrap(),
        bias: vec![0.0; out],
        activation: Activation::Identity,
    }])
    .unwrap()
}

/// step score `h + z_t`, transition score `z_t - z_{t+1}`, aggregator the plain sum.
fn hand_energy() -> EnergyModel {
    EnergyModel {
        step_scorer: linear(&[1.0, 1.0], 1),
        transition_scorer: linear(&[1.0, -1.0], 1),
        global: linear(&[1.0, 1.0, 1.0], 1),
    }
}

#[test]
fn hand_built_energy_example() {
    let e = hand_energy();
    let z = Matrix::from_vec(1, 2, vec![2.0, 4.0]).unwrap();
    let terms = e.energy(&[1.0], &z).unwrap();
    // step mean ((1+2) + (1+4)) / 2, transition 2 - 4, smoothness (4-2)^2
    assert_eq!(terms.step_mean, 4.0);
    assert_eq!(terms.trans_mean, -2.0);
    assert_eq!(terms.smooth, 4.0);
    assert_eq!(terms.total, 6.0);

    let (_, g) = e.energy_grad_z(&[1.0], &z).unwrap();
    // dE/dz1 = 1/2 + 1 - 4, dE/dz2 = 1/2 - 1 + 4
    assert_eq!(g.total.as_slice(), &[-2.5, 3.5]);
}

#[test]
fn single_column_has_no_pairwise_terms() {
    let e = hand_energy();
    let z = Matrix::from_vec(1, 1, vec![3.0]).unwrap();
    let terms = e.energy(&[1.0], &z).unwrap();
    assert_eq!((terms.step_mean, terms.trans_mean, terms.smooth, terms.total), (4.0, 0.0, 0.0, 4.0));
}

#[test]
fn energy_rejects_bad_shapes() {
    let e = hand_energy();
    assert!(e.energy(&[1.0, 2.0], &Matrix::zeros(1, 2)).is_err());
    assert!(e.energy(&[1.0], &Matrix::zeros(2, 2)).is_err());
    assert!(e.energy(&[1.0], &Matrix::zeros(1, 0)).is_err());
}

#[test]
fn repeated_evaluation_is_bitwise_stable_and_counted() {
    let dims = tiny_dims(6, 4);
    let e = random_energy(1, &dims);
    let mut rng = seeded(1);
    let h = gaussian_vec(&mut rng, 6, 1.0);
    let z = gaussian_matrix(&mut rng, 6, 4, 1.0);
    let before = energy_evaluations();
    let a = e.energy(&h, &z).unwrap();
    let b = e.energy(&h, &z).unwrap();
    assert_eq!(a.total.to_bits(), b.total.to_bits());
    assert!(energy_evaluations() >= before + 2);
}

#[test]
fn binary_loss_is_stable_at_large_logits() {
    let t = Target::Binary {
        labels: vec![1.0, 0.0],
        mask: vec![true, true],
    };
    let (loss, g) = loss_and_grad(&[30.0, -30.0], &t).unwrap();
    assert!(loss <= 1e-9 && loss >= 0.0);
    assert!(g.iter().all(|v| v.abs() < 1e-9));
    let (wrong, _) = loss_and_grad(&[-30.0, 30.0], &t).unwrap();
    assert!((wrong - 30.0).abs() < 1e-9);
    let (huge, _) = loss_and_grad(&[1e4, -1e4], &t).unwrap();
    assert!(huge.is_finite());
}

#[test]
fn masked_outputs_do_not_count() {
    let t = Target::Binary {
        labels: vec![1.0, 1.0, 0.0],
        mask: vec![true, false, false],
    };
    let (loss, g) = loss_and_grad(&[0.0, -50.0, 50.0], &t).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert_eq!(&g[1..], &[0.0, 0.0]);
}

#[test]
fn scalar_loss_examples() {
    assert_eq!(loss_and_grad(&[0.25], &Target::Scalar(0.25)).unwrap(), (0.0, vec![0.0]));
    assert_eq!(loss_and_grad(&[1.0], &Target::Scalar(-1.0)).unwrap(), (4.0, vec![4.0]));
    assert!(loss_and_grad(&[1.0, 2.0], &Target::Scalar(0.0)).is_err());
}

#[test]
fn decode_ranges_and_targets() {
    for task in TaskKind::ALL {
        let cfg = tiny_config(task);
        let ds = dataset_for(&cfg);
        let heads = TaskHeads::new(task, &cfg.dims(), cfg.layout(), &mut seeded(2)).unwrap();
        for inst in &ds.test {
            let h = heads.encode(inst).unwrap();
            assert_eq!(h.len(), cfg.latent_dim);
            let y = heads.decode(&h).unwrap();
            match inst {
                Instance::Graph(g) => {
                    assert_eq!(y.len(), cfg.graph_max_nodes);
                    assert!(y.iter().all(|p| (0.0..=1.0).contains(p)));
                    let Target::Binary { mask, .. } = heads.target(inst, 1.0).unwrap() else {
                        panic!("graph target is binary")
                    };
                    assert_eq!(mask.iter().filter(|m| **m).count(), g.node_count);
                }
                Instance::Logic(_) => assert_eq!(y.len(), cfg.cnf_vars),
                Instance::Arith(a) => {
                    assert_eq!(y.len(), 1);
                    assert_eq!(heads.target(inst, 1000.0).unwrap(), Target::Scalar(a.target / 1000.0));
                }
            }
        }
    }
}

#[test]
fn heads_reject_other_tasks() {
    let cfg = tiny_config(TaskKind::Logic);
    let heads = TaskHeads::new(TaskKind::Logic, &cfg.dims(), cfg.layout(), &mut seeded(0)).unwrap();
    let graph = dataset_for(&tiny_config(TaskKind::Graph));
    assert!(heads.encode(&graph.test[0]).is_err());
}

#[test]
fn checkpoint_round_trip_every_task() {
    let dir = tempfile::tempdir().unwrap();
    for task in TaskKind::ALL {
        let cfg = tiny_config(task);
        let mut rng = seeded(4);
        let heads = TaskHeads::new(task, &cfg.dims(), cfg.layout(), &mut rng).unwrap();
        let energy = EnergyModel::new(&cfg.dims(), &mut rng).unwrap();
        for with_energy in [true, false] {
            let ck = Checkpoint {
                manifest: Manifest {
                    task,
                    latent_dim: cfg.latent_dim,
                    traj_len: cfg.trajectory_length,
                    config_hash: cfg.hash(),
                    target_scale: cfg.target_scale,
                    layout: HeadLayout {
                        graph_max_nodes: cfg.graph_max_nodes,
                        cnf_vars: cfg.cnf_vars,
                    },
                    has_energy: with_energy,
                },
                heads: heads.clone(),
                energy: with_energy.then(|| energy.clone()),
            };
            let path = dir.path().join(format!("{task}_{with_energy}.json"));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.energy().is_ok(), with_energy);
        }
    }
}

#[test]
fn corrupt_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{\"format\": \"something-else\"}").unwrap();
    assert!(Checkpoint::load(&path).is_err());
    assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
}
