use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::endpoint::evaluate_endpoint;
use crate::config::{ConfigError, ExperimentConfig};
use crate::model::Checkpoint;
use crate::rng;
use crate::tasks::{generate_dataset, Dataset, TaskKind};
use crate::training::{train, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AblationSet {
    A,
    B,
    C1,
    C2,
    C3,
    D,
    E,
    F,
}

impl AblationSet {
    pub const ALL: [AblationSet; 8] = [
        AblationSet::A,
        AblationSet::B,
        AblationSet::C1,
        AblationSet::C2,
        AblationSet::C3,
        AblationSet::D,
        AblationSet::E,
        AblationSet::F,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationSet::A => "A",
            AblationSet::B => "B",
            AblationSet::C1 => "C1",
            AblationSet::C2 => "C2",
            AblationSet::C3 => "C3",
            AblationSet::D => "D",
            AblationSet::E => "E",
            AblationSet::F => "F",
        }
    }

    /// Config keys the set is allowed to change.
    pub fn varied_keys(self) -> &'static [&'static str] {
        match self {
            AblationSet::A => &["alpha_contr", "alpha_smooth", "planner_steps"],
            AblationSet::B => &["trajectory_length"],
            AblationSet::C1 => &["planner_steps"],
            AblationSet::C2 => &["langevin_noise"],
            AblationSet::C3 => &["planner_lr"],
            AblationSet::D => &["init_strategy"],
            AblationSet::E => &["dual_path"],
            AblationSet::F => &["anchor_weight"],
        }
    }
}

impl fmt::Display for AblationSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationSet {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AblationSet::ALL
            .into_iter()
            .find(|set| set.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConfigError::Invalid {
                key: "set",
                message: format!("unknown ablation set `{s}` (expected one of A, B, C1, C2, C3, D, E, F)"),
            })
    }
}

/// One configuration of an ablation set, as overrides on the base config.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub name: String,
    pub overrides: toml::Table,
}

impl Arm {
    fn new(name: impl Into<String>, pairs: &[(&str, toml::Value)]) -> Self {
        Self {
            name: name.into(),
            overrides: pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationSpec {
    pub set: AblationSet,
    pub arms: Vec<Arm>,
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub epochs: usize,
}

pub fn build_ablation(set: AblationSet) -> AblationSpec {
    use toml::Value::{Boolean, Float, Integer, String as Str};
    let arms = match set {
        AblationSet::A => vec![
            Arm::new("full", &[]),
            Arm::new("no_contrastive", &[("alpha_contr", Float(0.0))]),
            Arm::new("no_smoothness", &[("alpha_smooth", Float(0.0))]),
            Arm::new("no_planning", &[("planner_steps", Integer(0))]),
            Arm::new(
                "no_energy",
                &[("alpha_contr", Float(0.0)), ("alpha_smooth", Float(0.0)), ("planner_steps", Integer(0))],
            ),
        ],
        AblationSet::B => [1, 2, 4, 8, 12]
            .iter()
            .map(|t| Arm::new(format!("T={t}"), &[("trajectory_length", Integer(*t))]))
            .collect(),
        AblationSet::C1 => [5, 10, 25, 50, 100, 200]
            .iter()
            .map(|k| Arm::new(format!("K={k}"), &[("planner_steps", Integer(*k))]))
            .collect(),
        AblationSet::C2 => vec![
            Arm::new("gd", &[("langevin_noise", Float(0.0))]),
            Arm::new("langevin", &[("langevin_noise", Float(0.005))]),
        ],
        AblationSet::C3 => [0.001, 0.005, 0.01, 0.05]
            .iter()
            .map(|lr| Arm::new(format!("lr={lr}"), &[("planner_lr", Float(*lr))]))
            .collect(),
        AblationSet::D => ["encoder_seeded", "all_encoder", "zero"]
            .iter()
            .map(|s| Arm::new(*s, &[("init_strategy", Str(s.to_string()))]))
            .collect(),
        AblationSet::E => vec![
            Arm::new("single_path", &[("dual_path", Boolean(false))]),
            Arm::new("dual_path", &[("dual_path", Boolean(true))]),
        ],
        AblationSet::F => [0.0, 0.01, 0.1, 1.0]
            .iter()
            .map(|w| Arm::new(format!("anchor={w}"), &[("anchor_weight", Float(*w))]))
            .collect(),
    };
    AblationSpec {
        set,
        arms,
        train_size: 500,
        val_size: 50,
        test_size: 100,
        epochs: 30,
    }
}

impl AblationSpec {
    /// Reduced-scale base for this set.
    pub fn base_config(&self, base: &ExperimentConfig, task: TaskKind) -> ExperimentConfig {
        ExperimentConfig {
            task,
            train_size: self.train_size,
            val_size: self.val_size,
            test_size: self.test_size,
            epochs: self.epochs,
            ..base.clone()
        }
    }

    /// Config for one arm. Fails if the arm would change a key outside the set's varied keys.
    pub fn arm_config(&self, base: &ExperimentConfig, arm: &Arm) -> Result<ExperimentConfig, ConfigError> {
        let cfg = base.with_overrides(&arm.overrides)?;
        let allowed = self.set.varied_keys();
        if let Some(k) = cfg.diff_keys(base).into_iter().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ConfigError::Invalid {
                key: "set",
                message: format!("arm `{}` of set {} changes `{k}`", arm.name, self.set),
            });
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: TaskKind,
    pub set: String,
    pub arm: String,
    pub seed: u64,
    pub direct_metric: f64,
    pub planner_metric: f64,
    pub drift_median: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmFailure {
    pub task: TaskKind,
    pub set: String,
    pub arm: String,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<ArmFailure>,
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no seeds requested")]
    NoSeeds,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{0}")]
    Other(String),
}

impl ResultsTable {
    pub fn read_csv(path: &Path) -> Result<Self, ExperimentError> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<Result<Vec<ResultRow>, _>>()?;
        Ok(Self {
            rows,
            failures: Vec::new(),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Appends one row, writing the header first if the file is new or empty.
    pub fn append_row(path: &Path, row: &ResultRow) -> Result<(), ExperimentError> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        w.serialize(row)?;
        w.flush()?;
        Ok(())
    }

    pub fn find(&self, arm: &str, seed: u64) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.arm == arm && r.seed == seed)
    }
}

/// Where `run_ablation` keeps its results and trained models.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub out_dir: PathBuf,
    /// Maximum number of training groups processed at once.
    pub parallelism: usize,
}

impl AblationRun {
    pub fn results_path(&self, set: AblationSet, task: TaskKind) -> PathBuf {
        self.out_dir.join(format!("ablation_{}_{}.csv", set, task))
    }

    fn model_path(&self, cfg: &ExperimentConfig) -> PathBuf {
        self.out_dir.join("models").join(format!("{}.json", &cfg.training_hash()[..16]))
    }
}

const TAG_ABLATION_EVAL: u64 = 0xab1;

/// Trains and evaluates every arm for every seed. Rows already present in the results file are
/// skipped, so an interrupted run can be resumed. Arms that only differ in inference settings
/// share one trained model per seed.
pub fn run_ablation(
    spec: &AblationSpec,
    base: &ExperimentConfig,
    task: TaskKind,
    seeds: &[u64],
    run: &AblationRun,
) -> Result<ResultsTable, ExperimentError> {
    if seeds.is_empty() {
        return Err(ExperimentError::NoSeeds);
    }
    std::fs::create_dir_all(run.out_dir.join("models"))?;
    let results_path = run.results_path(spec.set, task);
    let existing = if results_path.exists() {
        ResultsTable::read_csv(&results_path)?
    } else {
        ResultsTable::default()
    };
    let done: HashSet<(String, u64)> = existing
        .rows
        .iter()
        .filter(|r| r.task == task && r.set == spec.set.as_str())
        .map(|r| (r.arm.clone(), r.seed))
        .collect();

    let reduced = spec.base_config(base, task);
    // group pending jobs by (seed, training hash)
    let mut groups: BTreeMap<(u64, String), Vec<(usize, ExperimentConfig)>> = BTreeMap::new();
    let mut failures = Vec::new();
    for &seed in seeds {
        for (ai, arm) in spec.arms.iter().enumerate() {
            if done.contains(&(arm.name.clone(), seed)) {
                continue;
            }
            let seeded = ExperimentConfig { seed, ..reduced.clone() };
            match spec.arm_config(&seeded, arm) {
                Ok(cfg) => groups.entry((seed, cfg.training_hash())).or_default().push((ai, cfg)),
                Err(e) => failures.push(ArmFailure {
                    task,
                    set: spec.set.to_string(),
                    arm: arm.name.clone(),
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }

    let new_rows = Mutex::new(Vec::new());
    let new_failures = Mutex::new(failures);
    let file_lock = Mutex::new(());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(run.parallelism.max(1))
        .build()
        .map_err(|e| ExperimentError::Other(e.to_string()))?;
    let mut datasets: BTreeMap<u64, Dataset> = BTreeMap::new();
    for ((seed, _), arms) in &groups {
        if !datasets.contains_key(seed) {
            let c = &arms[0].1;
            let d = generate_dataset(task, &c.task_params(), c.split_sizes(), *seed)
                .map_err(|e| ExperimentError::Other(e.to_string()))?;
            datasets.insert(*seed, d);
        }
    }
    let jobs: Vec<_> = groups.into_iter().collect();
    pool.install(|| {
        jobs.par_iter().for_each(|((seed, _), arms)| {
            let fail = |ai: usize, e: String| {
                new_failures.lock().unwrap().push(ArmFailure {
                    task,
                    set: spec.set.to_string(),
                    arm: spec.arms[ai].name.clone(),
                    seed: *seed,
                    error: e,
                })
            };
            let cfg0 = &arms[0].1;
            let dataset = &datasets[seed];
            let started = Instant::now();
            let model_path = run.model_path(cfg0);
            let checkpoint = match Checkpoint::load(&model_path) {
                Ok(c) => Ok(c),
                Err(_) => train(cfg0, dataset).map(|(c, _)| c).map_err(|e| e.to_string()).and_then(|c| {
                    c.save(&model_path).map_err(|e| e.to_string())?;
                    Ok(c)
                }),
            };
            let train_seconds = started.elapsed().as_secs_f64();
            let checkpoint = match checkpoint {
                Ok(c) => c,
                Err(e) => {
                    arms.iter().for_each(|(ai, _)| fail(*ai, e.clone()));
                    return;
                }
            };
            for (ai, cfg) in arms {
                let eval_started = Instant::now();
                let eval_seed = rng::derive_seed(*seed, &[TAG_ABLATION_EVAL]);
                match evaluate_endpoint(&checkpoint, &dataset.test, &cfg.planner(), eval_seed) {
                    Ok(ev) => {
                        let row = ResultRow {
                            task,
                            set: spec.set.to_string(),
                            arm: spec.arms[*ai].name.clone(),
                            seed: *seed,
                            direct_metric: ev.direct.value,
                            planner_metric: ev.planner.value,
                            drift_median: ev.drift_median,
                            epochs: cfg.epochs,
                            wall_seconds: train_seconds + eval_started.elapsed().as_secs_f64(),
                        };
                        let _guard = file_lock.lock().unwrap();
                        if let Err(e) = ResultsTable::append_row(&results_path, &row) {
                            fail(*ai, e.to_string());
                        } else {
                            new_rows.lock().unwrap().push((*ai, row));
                        }
                    }
                    Err(e) => fail(*ai, e.to_string()),
                }
            }
        })
    });

    let mut rows: Vec<(usize, ResultRow)> = existing
        .rows
        .into_iter()
        .filter(|r| r.task == task && r.set == spec.set.as_str())
        .filter_map(|r| spec.arms.iter().position(|a| a.name == r.arm).map(|ai| (ai, r)))
        .collect();
    rows.extend(new_rows.into_inner().unwrap());
    rows.retain(|(_, r)| seeds.contains(&r.seed));
    rows.sort_by(|(a, ra), (b, rb)| a.cmp(b).then(ra.seed.cmp(&rb.seed)));
    Ok(ResultsTable {
        rows: rows.into_iter().map(|(_, r)| r).collect(),
        failures: new_failures.into_inner().unwrap(),
    })
}
