//! Helpers shared by the integration suites: finite-difference checks, independent oracles and
//! small configurations that train in seconds.
#![allow(dead_code)]

use latplan::config::ExperimentConfig;
use latplan::model::{EnergyModel, ModelDims, TaskHeads};
use latplan::nn::{Activation, Matrix, Mlp, Parameters};
use latplan::planner::objective;
use latplan::rng::{derived, normal, seeded};
use latplan::tasks::{generate_dataset, Clause, Dataset, Expr, Instance, Op, TaskKind};
use latplan::training::contrastive_loss;
use rand::Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, or the absolute difference when both are tiny.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-8 {
        diff
    } else {
        diff / denom
    }
}

/// Central difference of `f` along every coordinate of a parameter set, one tensor at a time.
pub fn fd_params<P: Parameters + Clone>(params: &P, mut f: impl FnMut(&P) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut work = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (ti, n) in shapes.iter().enumerate() {
        for i in 0..*n {
            let orig = work.tensors()[ti][i];
            work.tensors_mut()[ti][i] = orig + FD_STEP;
            let up = f(&work);
            work.tensors_mut()[ti][i] = orig - FD_STEP;
            let down = f(&work);
            work.tensors_mut()[ti][i] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

pub fn fd_vec(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut work = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = work[i];
            work[i] = orig + FD_STEP;
            let up = f(&work);
            work[i] = orig - FD_STEP;
            let down = f(&work);
            work[i] = orig;
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

pub fn flatten<P: Parameters>(p: &P) -> Vec<f64> {
    p.tensors().concat()
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * normal(rng)).collect()
}

pub fn gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_vec(rows, cols, gaussian_vec(rng, rows * cols, scale)).unwrap()
}

/// Relative errors of the parameter and input gradients of `upstream · mlp(x)` for one random net.
pub fn mlp_gradient_case(seed: u64) -> (f64, f64) {
    let mut rng = seeded(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(2..=6)];
    for _ in 0..depth {
        dims.push(rng.random_range(2..=7));
    }
    let hidden = [Activation::Relu, Activation::Sigmoid, Activation::Identity][(seed % 3) as usize];
    let output = [Activation::Identity, Activation::Sigmoid][(seed % 2) as usize];
    let mut mlp = Mlp::new(&dims, hidden, output, &mut rng).unwrap();
    // nonzero biases so every layer's bias path is exercised
    for layer in mlp.layers_mut() {
        for b in &mut layer.bias {
            *b = 0.3 * normal(&mut rng);
        }
    }
    let x = gaussian_vec(&mut rng, dims[0], 1.0);
    let upstream = gaussian_vec(&mut rng, *dims.last().unwrap(), 1.0);
    let loss = |m: &Mlp, x: &[f64]| -> f64 {
        m.predict(x).unwrap().iter().zip(&upstream).map(|(a, b)| a * b).sum()
    };
    let (_, tape) = mlp.forward(&x).unwrap();
    let (g_params, g_input) = mlp.backward(&tape, &upstream).unwrap();
    let fd_p = fd_params(&mlp, |m| loss(m, &x));
    let fd_x = fd_vec(&x, |xx| loss(&mlp, xx));
    (rel_err(&flatten(&g_params), &fd_p), rel_err(&g_input, &fd_x))
}

pub fn tiny_dims(latent_dim: usize, traj_len: usize) -> ModelDims {
    ModelDims {
        latent_dim,
        traj_len,
        head_hidden: 8,
        head_layers: 2,
        energy_hidden: 8,
        energy_layers: 3,
        global_hidden: 6,
    }
}

/// Energy model with randomized biases so no unit sits exactly at a ReLU kink.
pub fn random_energy(seed: u64, dims: &ModelDims) -> EnergyModel {
    let mut rng = seeded(seed);
    let mut e = EnergyModel::new(dims, &mut rng).unwrap();
    for net in [&mut e.step_scorer, &mut e.transition_scorer, &mut e.global] {
        for layer in net.layers_mut() {
            for b in &mut layer.bias {
                *b = 0.2 * normal(&mut rng);
            }
        }
    }
    e
}

/// Relative error of `∇_z (E + λ Σ‖z_t - h‖²)` for one random model and trajectory.
pub fn energy_z_gradient_case(seed: u64) -> f64 {
    let mut rng = derived(seed, &[1]);
    let d = rng.random_range(2..=5);
    let t_len = rng.random_range(1..=4);
    let dims = tiny_dims(d, t_len);
    let energy = random_energy(seed, &dims);
    let anchor = [0.0, 0.01, 0.1, 1.0][(seed % 4) as usize];
    let h = gaussian_vec(&mut rng, d, 1.0);
    let z = gaussian_matrix(&mut rng, d, t_len, 1.0);
    let obj = objective(&energy, &h, &z, anchor).unwrap();
    let fd = fd_vec(z.as_slice(), |v| {
        let zz = Matrix::from_vec(d, t_len, v.to_vec()).unwrap();
        objective(&energy, &h, &zz, anchor).unwrap().value
    });
    rel_err(obj.grad.as_slice(), &fd)
}

/// Relative error of the contrastive parameter gradient with the hinge forced active.
pub fn contrastive_gradient_case(seed: u64) -> f64 {
    let mut rng = derived(seed, &[2]);
    let d = rng.random_range(2..=4);
    let t_len = rng.random_range(2..=4);
    let dims = tiny_dims(d, t_len);
    let energy = random_energy(seed + 10_000, &dims);
    let h = gaussian_vec(&mut rng, d, 1.0);
    let zp = gaussian_matrix(&mut rng, d, t_len, 1.0);
    let zn = gaussian_matrix(&mut rng, d, t_len, 1.0);
    // a margin this large keeps the hinge active under every perturbation
    let margin = 100.0;
    let mut g = energy.zero_grad();
    let loss = contrastive_loss(&energy, &h, &zp, &zn, margin, Some((&mut g, 1.0))).unwrap();
    assert!(loss > 0.0);
    let fd = fd_params(&energy, |e| contrastive_loss(e, &h, &zp, &zn, margin, None).unwrap());
    rel_err(&flatten(&g), &fd)
}

/// Relative error of the full head gradient of `decoder_loss(enc(x))` for one instance.
pub fn heads_gradient_case(seed: u64, task: TaskKind) -> f64 {
    let mut cfg = tiny_config(task);
    cfg.head_hidden = 6;
    cfg.graph_min_nodes = 4;
    cfg.graph_max_nodes = 6;
    cfg.arith_max_depth = 2;
    cfg.target_scale = 100.0;
    let mut rng = seeded(seed);
    let mut heads = TaskHeads::new(task, &cfg.dims(), cfg.layout(), &mut rng).unwrap();
    for t in heads.tensors_mut() {
        for v in t.iter_mut() {
            if *v == 0.0 {
                *v = 0.1 * normal(&mut rng);
            }
        }
    }
    let inst = cfg.task_params().generate(task, &mut rng).unwrap();
    let target = heads.target(&inst, cfg.target_scale).unwrap();
    let loss = |hd: &TaskHeads| -> f64 {
        let h = hd.encode(&inst).unwrap();
        hd.decoder_loss(&h, &target, None).unwrap().0
    };
    let mut g = heads.zero_grad();
    let (h, tape) = heads.encode_with_tape(&inst).unwrap();
    let (_, g_h) = heads.decoder_loss(&h, &target, Some((&mut g, 1.0))).unwrap();
    heads.encoder_backward(&tape, &g_h, &mut g, 1.0).unwrap();
    let fd = fd_params(&heads, loss);
    rel_err(&flatten(&g), &fd)
}

/// Config small enough that a few epochs take well under a second.
pub fn tiny_config(task: TaskKind) -> ExperimentConfig {
    ExperimentConfig {
        task,
        latent_dim: 8,
        trajectory_length: 4,
        epochs: 2,
        batch_size: 8,
        planner_steps: 5,
        energy_hidden: 16,
        global_hidden: 8,
        head_hidden: 16,
        train_size: 32,
        val_size: 8,
        test_size: 16,
        graph_min_nodes: 5,
        graph_max_nodes: 8,
        ..ExperimentConfig::default()
    }
}

pub fn dataset_for(cfg: &ExperimentConfig) -> Dataset {
    generate_dataset(cfg.task, &cfg.task_params(), cfg.split_sizes(), cfg.seed).unwrap()
}

// ---- independent oracles ----

/// Shortest `source -> destination` distance by enumerating every simple path.
pub fn brute_force_distance(adj: &[Vec<f64>], source: usize, destination: usize) -> Option<f64> {
    fn walk(adj: &[Vec<f64>], at: usize, dst: usize, seen: &mut Vec<bool>, acc: f64, best: &mut Option<f64>) {
        if at == dst {
            if best.is_none_or(|b| acc < b) {
                *best = Some(acc);
            }
            return;
        }
        for next in 0..adj.len() {
            let w = adj[at][next];
            if w > 0.0 && !seen[next] {
                seen[next] = true;
                walk(adj, next, dst, seen, acc + w, best);
                seen[next] = false;
            }
        }
    }
    let mut seen = vec![false; adj.len()];
    seen[source] = true;
    let mut best = None;
    walk(adj, source, destination, &mut seen, 0.0, &mut best);
    best
}

/// Direct recursive evaluation of an expression tree.
pub fn tree_value(e: &Expr) -> f64 {
    match e {
        Expr::Num(n) => *n as f64,
        Expr::Bin { op, lhs, rhs } => {
            let (a, b) = (tree_value(lhs), tree_value(rhs));
            match op {
                Op::Add => a + b,
                Op::Sub => a - b,
                Op::Mul => a * b,
            }
        }
    }
}

/// Every assignment of `n` variables that satisfies all clauses.
pub fn satisfying_assignments(clauses: &[Clause], n: usize) -> Vec<Vec<bool>> {
    (0..1u32 << n)
        .map(|mask| (0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<bool>>())
        .filter(|a| clauses.iter().all(|c| c.iter().any(|l| a[l.var] == l.positive)))
        .collect()
}

pub fn logic_instances(ds: &[Instance]) -> impl Iterator<Item = &latplan::tasks::CnfInstance> {
    ds.iter().map(|i| match i {
        Instance::Logic(c) => c,
        _ => panic!("expected a logic instance"),
    })
}

/// Spearman correlation recomputed from scratch (average ranks, then Pearson).
pub fn spearman_oracle(a: &[f64], b: &[f64]) -> f64 {
    fn avg_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let equal = v.iter().filter(|y| *y == x).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (ra, rb) = (avg_ranks(a), avg_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
