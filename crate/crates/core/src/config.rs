//! Flat TOML experiment configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{HeadLayout, ModelDims};
use crate::planner::{InitStrategy, PlannerConfig};
use crate::tasks::{SplitSizes, TaskKind, TaskParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}` expects {expected}, found {found}")]
    Type {
        key: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("config key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

/// Every tunable of a run. Unspecified keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    pub seed: u64,
    pub output_dir: String,

    pub latent_dim: usize,
    pub trajectory_length: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub alpha_contr: f64,
    pub alpha_dec: f64,
    pub alpha_smooth: f64,
    pub dual_path: bool,

    pub planner_steps: usize,
    pub planner_lr: f64,
    pub langevin_noise: f64,
    pub grad_clip_norm: f64,
    pub anchor_weight: f64,

    pub energy_hidden: usize,
    pub energy_layers: usize,
    pub global_hidden: usize,
    pub head_hidden: usize,
    pub head_layers: usize,

    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,

    pub sigma_teacher: f64,
    pub margin: f64,
    pub init_sigma: f64,
    pub init_strategy: InitStrategy,
    pub negative_perturb_scale: f64,
    pub planner_negative_every: usize,
    pub train_planner_steps: usize,
    pub snapshot_stride: usize,
    pub contrastive_success_threshold: f64,

    pub graph_min_nodes: usize,
    pub graph_max_nodes: usize,
    pub edge_prob: f64,
    pub arith_max_depth: usize,
    pub cnf_vars: usize,
    pub cnf_min_clauses: usize,
    pub cnf_max_clauses: usize,
    pub target_scale: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: TaskKind::Logic,
            seed: 0,
            output_dir: "runs".into(),
            latent_dim: 64,
            trajectory_length: 8,
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            alpha_contr: 0.1,
            alpha_dec: 1.0,
            alpha_smooth: 0.01,
            dual_path: false,
            planner_steps: 50,
            planner_lr: 0.01,
            langevin_noise: 0.005,
            grad_clip_norm: 1.0,
            anchor_weight: 0.0,
            energy_hidden: 128,
            energy_layers: 3,
            global_hidden: 16,
            head_hidden: 128,
            head_layers: 2,
            train_size: 5000,
            val_size: 500,
            test_size: 1000,
            sigma_teacher: 0.01,
            margin: 1.0,
            init_sigma: 0.1,
            init_strategy: InitStrategy::EncoderSeeded,
            negative_perturb_scale: 0.5,
            planner_negative_every: 10,
            train_planner_steps: 10,
            snapshot_stride: 10,
            contrastive_success_threshold: 0.8,
            graph_min_nodes: 8,
            graph_max_nodes: 20,
            edge_prob: 0.3,
            arith_max_depth: 4,
            cnf_vars: 5,
            cnf_min_clauses: 3,
            cnf_max_clauses: 10,
            target_scale: 1000.0,
        }
    }
}

fn value_kind(v: &toml::Value) -> &'static str {
    match v {
        toml::Value::String(_) => "a string",
        toml::Value::Integer(_) => "an integer",
        toml::Value::Float(_) => "a float",
        toml::Value::Boolean(_) => "a boolean",
        toml::Value::Datetime(_) => "a datetime",
        toml::Value::Array(_) => "an array",
        toml::Value::Table(_) => "a table",
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Keys are checked by name and type before deserializing so errors can
    /// point at the offending key.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let reference = toml::Table::try_from(Self::default()).expect("default config serializes");
        for (key, value) in &table {
            let Some(expected) = reference.get(key) else {
                return Err(ConfigError::UnknownKey(key.clone()));
            };
            let ok = matches!(
                (expected, value),
                (toml::Value::String(_), toml::Value::String(_))
                    | (toml::Value::Integer(_), toml::Value::Integer(_))
                    | (toml::Value::Float(_), toml::Value::Float(_) | toml::Value::Integer(_))
                    | (toml::Value::Boolean(_), toml::Value::Boolean(_))
            );
            let negative_int = matches!(value, toml::Value::Integer(i) if *i < 0)
                && matches!(expected, toml::Value::Integer(_));
            if !ok || negative_int {
                return Err(ConfigError::Type {
                    key: key.clone(),
                    expected: if negative_int { "a non-negative integer" } else { value_kind(expected) },
                    found: value_kind(value),
                });
            }
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn fail(key: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
            Err(ConfigError::Invalid {
                key,
                message: message.into(),
            })
        }
        let positive = [
            ("latent_dim", self.latent_dim),
            ("trajectory_length", self.trajectory_length),
            ("batch_size", self.batch_size),
            ("energy_hidden", self.energy_hidden),
            ("global_hidden", self.global_hidden),
            ("head_hidden", self.head_hidden),
            ("train_size", self.train_size),
            ("val_size", self.val_size),
            ("test_size", self.test_size),
            ("planner_negative_every", self.planner_negative_every),
            ("snapshot_stride", self.snapshot_stride),
        ];
        for (key, v) in positive {
            if v == 0 {
                return fail(key, "must be at least 1");
            }
        }
        if self.energy_layers < 2 {
            return fail("energy_layers", "must be at least 2");
        }
        if self.head_layers < 1 {
            return fail("head_layers", "must be at least 1");
        }
        let non_negative = [
            ("learning_rate", self.learning_rate),
            ("weight_decay", self.weight_decay),
            ("alpha_contr", self.alpha_contr),
            ("alpha_dec", self.alpha_dec),
            ("alpha_smooth", self.alpha_smooth),
            ("planner_lr", self.planner_lr),
            ("langevin_noise", self.langevin_noise),
            ("anchor_weight", self.anchor_weight),
            ("sigma_teacher", self.sigma_teacher),
            ("margin", self.margin),
            ("init_sigma", self.init_sigma),
            ("negative_perturb_scale", self.negative_perturb_scale),
        ];
        for (key, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return fail(key, format!("must be finite and >= 0, got {v}"));
            }
        }
        for (key, v) in [("grad_clip_norm", self.grad_clip_norm), ("target_scale", self.target_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return fail(key, format!("must be finite and > 0, got {v}"));
            }
        }
        if !(self.edge_prob > 0.0 && self.edge_prob <= 1.0) {
            return fail("edge_prob", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.contrastive_success_threshold) {
            return fail("contrastive_success_threshold", "must lie in [0, 1]");
        }
        if self.graph_min_nodes < 2 || self.graph_min_nodes > self.graph_max_nodes {
            return fail("graph_min_nodes", "need 2 <= graph_min_nodes <= graph_max_nodes");
        }
        if !(1..=4).contains(&self.arith_max_depth) {
            return fail("arith_max_depth", "must lie in 1..=4");
        }
        if self.cnf_vars < 3 {
            return fail("cnf_vars", "must be at least 3");
        }
        if self.cnf_min_clauses == 0 || self.cnf_min_clauses > self.cnf_max_clauses {
            return fail("cnf_min_clauses", "need 1 <= cnf_min_clauses <= cnf_max_clauses");
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            latent_dim: self.latent_dim,
            traj_len: self.trajectory_length,
            head_hidden: self.head_hidden,
            head_layers: self.head_layers,
            energy_hidden: self.energy_hidden,
            energy_layers: self.energy_layers,
            global_hidden: self.global_hidden,
        }
    }

    pub fn layout(&self) -> HeadLayout {
        HeadLayout {
            graph_max_nodes: self.graph_max_nodes,
            cnf_vars: self.cnf_vars,
        }
    }

    pub fn task_params(&self) -> TaskParams {
        TaskParams {
            graph_nodes: (self.graph_min_nodes, self.graph_max_nodes),
            edge_prob: self.edge_prob,
            arith_max_depth: self.arith_max_depth,
            cnf_vars: self.cnf_vars,
            cnf_clauses: (self.cnf_min_clauses, self.cnf_max_clauses),
        }
    }

    pub fn split_sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train_size,
            val: self.val_size,
            test: self.test_size,
        }
    }

    /// Inference planner settings.
    pub fn planner(&self) -> PlannerConfig {
        PlannerConfig {
            steps: self.planner_steps,
            step_size: self.planner_lr,
            noise: self.langevin_noise,
            clip_norm: self.grad_clip_norm,
            anchor_weight: self.anchor_weight,
            init: self.init_strategy,
            init_sigma: self.init_sigma,
            snapshot_stride: self.snapshot_stride,
        }
    }

    /// Planner used inside training (negatives and the dual-path branch): the inference settings
    /// with the shorter step budget.
    pub fn training_planner(&self) -> PlannerConfig {
        PlannerConfig {
            steps: self.train_planner_steps,
            ..self.planner()
        }
    }

    /// Hex SHA-256 of the canonical TOML form, ignoring `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = String::new();
        hex::encode(Sha256::digest(c.to_toml_string().as_bytes()))
    }

    /// Hash of the keys that influence training and data. Configs that differ only in
    /// inference-time settings share trained models.
    pub fn training_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = String::new();
        c.planner_steps = 0;
        c.snapshot_stride = 1;
        c.contrastive_success_threshold = 0.0;
        hex::encode(Sha256::digest(c.to_toml_string().as_bytes()))
    }

    /// Names of the keys whose values differ between two configs.
    pub fn diff_keys(&self, other: &Self) -> Vec<String> {
        let a = toml::Table::try_from(self).expect("config serializes");
        let b = toml::Table::try_from(other).expect("config serializes");
        let mut keys: Vec<String> = a
            .iter()
            .filter(|(k, v)| b.get(*k) != Some(*v))
            .map(|(k, _)| k.clone())
            .collect();
        keys.sort();
        keys
    }

    /// Applies `key = value` overrides given as a TOML table.
    pub fn with_overrides(&self, overrides: &toml::Table) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for (k, v) in overrides {
            table.insert(k.clone(), v.clone());
        }
        Self::from_toml_str(&toml::to_string(&table).expect("table serializes"))
    }

    /// Reduced-scale settings shared by every ablation arm.
    pub fn ablation_scale(&self) -> Self {
        Self {
            train_size: 500,
            val_size: 50,
            test_size: 100,
            epochs: 30,
            ..self.clone()
        }
    }
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ExperimentConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!((c.latent_dim, c.trajectory_length, c.planner_steps), (64, 8, 50));
        assert_eq!(c.planner_lr, 0.01);
        assert_eq!(c.langevin_noise, 0.005);
        assert_eq!((c.train_size, c.val_size, c.test_size), (5000, 500, 1000));
    }

    #[test]
    fn single_override() {
        let c = ExperimentConfig::from_toml_str("trajectory_length = 4").unwrap();
        assert_eq!(c.trajectory_length, 4);
        assert_eq!(c.diff_keys(&ExperimentConfig::default()), vec!["trajectory_length"]);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = ExperimentConfig::from_toml_str("planer_steps = 10").unwrap_err();
        assert!(matches!(&err, ConfigError::UnknownKey(k) if k == "planer_steps"));
        assert!(err.to_string().contains("planer_steps"));
    }

    #[test]
    fn type_mismatch_names_key_and_type() {
        let err = ExperimentConfig::from_toml_str("epochs = \"ten\"").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("epochs") && msg.contains("integer"), "{msg}");
        let err = ExperimentConfig::from_toml_str("planner_steps = -1").unwrap_err();
        assert!(matches!(err, ConfigError::Type { .. }));
    }

    #[test]
    fn integer_accepted_for_float_key() {
        let c = ExperimentConfig::from_toml_str("margin = 2").unwrap();
        assert_eq!(c.margin, 2.0);
    }

    #[test]
    fn toml_round_trip_and_hash_ignores_output_dir() {
        let mut c = ExperimentConfig::default();
        c.task = TaskKind::Graph;
        c.anchor_weight = 0.1;
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let mut moved = c.clone();
        moved.output_dir = "elsewhere".into();
        assert_eq!(moved.hash(), c.hash());
        let mut k = c.clone();
        k.planner_steps = 5;
        assert_ne!(k.hash(), c.hash());
        assert_eq!(k.training_hash(), c.training_hash());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("batch_size = 0").is_err());
        assert!(ExperimentConfig::from_toml_str("grad_clip_norm = 0.0").is_err());
        assert!(ExperimentConfig::from_toml_str("edge_prob = 1.5").is_err());
    }
}
