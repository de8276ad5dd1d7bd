mod common;

use common::*;
use latplan::model::{smoothness, smoothness_grad, EnergyModel};
use latplan::nn::{clip_by_norm, Matrix, Parameters};
use latplan::rng::seeded;
use latplan::tasks::TaskKind;
use proptest::prelude::*;

#[test]
fn mlp_parameter_and_input_gradients() {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..100 {
        let (p, x) = mlp_gradient_case(seed);
        assert!(p <= FD_TOL && x <= FD_TOL, "seed {seed}: params {p:.2e}, input {x:.2e}");
        worst = (worst.0.max(p), worst.1.max(x));
    }
    eprintln!("mlp worst relative error: params {:.2e}, input {:.2e}", worst.0, worst.1);
}

#[test]
fn energy_gradient_in_z_with_anchor() {
    for seed in 0..100 {
        let e = energy_z_gradient_case(seed);
        assert!(e <= FD_TOL, "seed {seed}: {e:.2e}");
    }
}

#[test]
fn contrastive_parameter_gradient_at_active_hinge() {
    for seed in 0..100 {
        let e = contrastive_gradient_case(seed);
        assert!(e <= FD_TOL, "seed {seed}: {e:.2e}");
    }
}

#[test]
fn head_gradients_every_task() {
    for task in TaskKind::ALL {
        for seed in 0..10 {
            let e = heads_gradient_case(seed, task);
            assert!(e <= FD_TOL, "{task} seed {seed}: {e:.2e}");
        }
    }
}

#[test]
fn energy_gradient_components_sum_to_total() {
    let dims = tiny_dims(4, 5);
    let energy = random_energy(3, &dims);
    let mut rng = seeded(3);
    let h = gaussian_vec(&mut rng, 4, 1.0);
    let z = gaussian_matrix(&mut rng, 4, 5, 1.0);
    let (_, g) = energy.energy_grad_z(&h, &z).unwrap();
    let mut sum = g.step.clone();
    sum.axpy(1.0, &g.trans);
    sum.axpy(1.0, &g.smooth);
    assert!(rel_err(sum.as_slice(), g.total.as_slice()) < 1e-14);
}

#[test]
fn smoothness_gradient_matches_differences() {
    let mut rng = seeded(5);
    let z = gaussian_matrix(&mut rng, 3, 6, 1.0);
    let fd = fd_vec(z.as_slice(), |v| smoothness(&Matrix::from_vec(3, 6, v.to_vec()).unwrap()));
    assert!(rel_err(smoothness_grad(&z).as_slice(), &fd) < 1e-8);
}

#[test]
fn energy_parameter_gradient_single_column() {
    // T = 1: no transition pairs, so the transition scorer receives no gradient
    let dims = tiny_dims(3, 1);
    let energy = random_energy(8, &dims);
    let mut rng = seeded(8);
    let h = gaussian_vec(&mut rng, 3, 1.0);
    let z = gaussian_matrix(&mut rng, 3, 1, 1.0);
    let mut g = energy.zero_grad();
    energy.energy_param_grad(&h, &z, &mut g, 1.0).unwrap();
    assert!(g.transition_scorer.is_zero());
    let fd = fd_params(&energy, |e: &EnergyModel| e.energy(&h, &z).unwrap().total);
    assert!(rel_err(&flatten(&g), &fd) < FD_TOL);
    assert_eq!(flatten(&g).len(), energy.param_count());
}

proptest! {
    #[test]
    fn clipped_norm_never_exceeds_bound(v in prop::collection::vec(-1e3f64..1e3, 1..40), c in 1e-3f64..10.0) {
        let m = Matrix::from_vec(1, v.len(), v.clone()).unwrap();
        let out = clip_by_norm(&m, c);
        prop_assert!(out.frobenius_norm() <= c * (1.0 + 1e-12));
        if m.frobenius_norm() <= c {
            prop_assert_eq!(out.as_slice(), m.as_slice());
        }
    }

    #[test]
    fn smoothness_nonnegative_and_shift_invariant(
        v in prop::collection::vec(-10f64..10.0, 12),
        shift in prop::collection::vec(-5f64..5.0, 3),
    ) {
        let z = Matrix::from_vec(3, 4, v.clone()).unwrap();
        let mut moved = z.clone();
        for r in 0..3 {
            for t in 0..4 {
                moved.set(r, t, z.get(r, t) + shift[r]);
            }
        }
        let s = smoothness(&z);
        prop_assert!(s >= 0.0);
        prop_assert!((s - smoothness(&moved)).abs() <= 1e-9 * (1.0 + s));
    }
}
