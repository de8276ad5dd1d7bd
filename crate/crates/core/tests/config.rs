use latplan::config::{ConfigError, ExperimentConfig};
use latplan::planner::InitStrategy;
use latplan::tasks::TaskKind;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        prop::sample::select(TaskKind::ALL.to_vec()),
        any::<u32>(),
        1usize..128,
        1usize..16,
        0.0f64..1.0,
        any::<bool>(),
        0usize..300,
        prop::sample::select(vec![InitStrategy::EncoderSeeded, InitStrategy::AllEncoder, InitStrategy::Zero]),
        1e-6f64..1.0,
        (1usize..=4, 3usize..8),
    )
        .prop_map(|(task, seed, d, t, contr, dual, k, init, lr, (depth, vars))| ExperimentConfig {
            task,
            seed: seed as u64,
            latent_dim: d,
            trajectory_length: t,
            alpha_contr: contr,
            dual_path: dual,
            planner_steps: k,
            init_strategy: init,
            planner_lr: lr,
            arith_max_depth: depth,
            cnf_vars: vars,
            ..ExperimentConfig::default()
        })
}

proptest! {
    #[test]
    fn toml_round_trip(cfg in arb_config()) {
        let text = cfg.to_toml_string();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn inference_keys_do_not_change_training_hash(cfg in arb_config(), k in 0usize..500) {
        let other = ExperimentConfig { planner_steps: k, output_dir: "elsewhere".into(), ..cfg.clone() };
        prop_assert_eq!(other.training_hash(), cfg.training_hash());
    }
}

#[test]
fn errors_name_the_key() {
    match ExperimentConfig::from_toml_str("latent_dimm = 3") {
        Err(ConfigError::UnknownKey(k)) => assert_eq!(k, "latent_dimm"),
        other => panic!("{other:?}"),
    }
    match ExperimentConfig::from_toml_str("epochs = \"ten\"") {
        Err(ConfigError::Type { key, .. }) => assert_eq!(key, "epochs"),
        other => panic!("{other:?}"),
    }
    match ExperimentConfig::from_toml_str("edge_prob = 0.0") {
        Err(ConfigError::Invalid { key, .. }) => assert_eq!(key, "edge_prob"),
        other => panic!("{other:?}"),
    }
    assert!(matches!(ExperimentConfig::from_toml_str("epochs = "), Err(ConfigError::Syntax(_))));
}

#[test]
fn defaults() {
    let c = ExperimentConfig::default();
    assert_eq!((c.latent_dim, c.trajectory_length, c.epochs, c.batch_size), (64, 8, 100, 32));
    assert_eq!((c.planner_steps, c.planner_lr, c.langevin_noise, c.grad_clip_norm), (50, 0.01, 0.005, 1.0));
    assert_eq!((c.alpha_contr, c.alpha_dec, c.alpha_smooth), (0.1, 1.0, 0.01));
    assert_eq!((c.train_size, c.val_size, c.test_size), (5000, 500, 1000));
    let a = c.ablation_scale();
    assert_eq!((a.train_size, a.val_size, a.test_size, a.epochs), (500, 50, 100, 30));
}
