//! Procedural generators, ground-truth oracles and dataset files for the three tasks.

mod arith;
mod cnf;
mod dataset;
mod graph;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use arith::{eval_expr, gen_arith, tokenize, ArithInstance, Expr, Op, Token, MAX_OPERAND, VOCAB_SIZE};
pub use cnf::{gen_cnf, sat_fraction, Clause, CnfInstance, Literal};
pub use dataset::{generate_dataset, load_dataset, save_dataset, Dataset, SplitSizes};
pub use graph::{dijkstra, gen_graph, GraphInstance, MAX_GRAPH_REJECTIONS};

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("invalid task configuration: {0}")]
    Config(String),
    #[error("generation failed: {0}")]
    Generation(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("dataset line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("dataset holds task `{found}` but `{expected}` was requested")]
    TaskMismatch { expected: TaskKind, found: TaskKind },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Graph,
    Arithmetic,
    Logic,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Graph, TaskKind::Arithmetic, TaskKind::Logic];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Graph => "graph",
            TaskKind::Arithmetic => "arithmetic",
            TaskKind::Logic => "logic",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "graph" => Ok(TaskKind::Graph),
            "arithmetic" | "arith" => Ok(TaskKind::Arithmetic),
            "logic" | "cnf" => Ok(TaskKind::Logic),
            other => Err(TaskError::Config(format!(
                "unknown task `{other}` (expected graph, arithmetic or logic)"
            ))),
        }
    }
}

/// One problem of any task.
#[derive(Debug, Clone, PartialEq)]
pub enum Instance {
    Graph(GraphInstance),
    Arith(ArithInstance),
    Logic(CnfInstance),
}

impl Instance {
    pub fn task(&self) -> TaskKind {
        match self {
            Instance::Graph(_) => TaskKind::Graph,
            Instance::Arith(_) => TaskKind::Arithmetic,
            Instance::Logic(_) => TaskKind::Logic,
        }
    }
}

/// Size and shape knobs for the generators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    pub graph_nodes: (usize, usize),
    pub edge_prob: f64,
    pub arith_max_depth: usize,
    pub cnf_vars: usize,
    pub cnf_clauses: (usize, usize),
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            graph_nodes: (8, 20),
            edge_prob: 0.3,
            arith_max_depth: 4,
            cnf_vars: 5,
            cnf_clauses: (3, 10),
        }
    }
}

impl TaskParams {
    /// Width every graph instance is padded to.
    pub fn graph_max_nodes(&self) -> usize {
        self.graph_nodes.1
    }

    pub fn generate<R: rand::Rng + ?Sized>(&self, task: TaskKind, rng: &mut R) -> Result<Instance, TaskError> {
        Ok(match task {
            TaskKind::Graph => Instance::Graph(gen_graph(rng, self.graph_nodes, self.edge_prob)?),
            TaskKind::Arithmetic => Instance::Arith(gen_arith(rng, self.arith_max_depth)?),
            TaskKind::Logic => Instance::Logic(gen_cnf(rng, self.cnf_vars, self.cnf_clauses)?),
        })
    }
}
