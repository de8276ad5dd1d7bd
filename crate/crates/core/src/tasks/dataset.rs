use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ArithInstance, CnfInstance, GraphInstance, Instance, TaskError, TaskKind, TaskParams};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl SplitSizes {
    pub const FULL: SplitSizes = SplitSizes {
        train: 5000,
        val: 500,
        test: 1000,
    };
    pub const ABLATION: SplitSizes = SplitSizes {
        train: 500,
        val: 50,
        test: 100,
    };

    fn as_array(self) -> [usize; 3] {
        [self.train, self.val, self.test]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskKind,
    pub seed: u64,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
}

impl Dataset {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes {
            train: self.train.len(),
            val: self.val.len(),
            test: self.test.len(),
        }
    }
}

/// Each instance draws from its own stream derived from `(seed, split, index)`, so output does
/// not depend on generation order.
pub fn generate_dataset(
    task: TaskKind,
    params: &TaskParams,
    sizes: SplitSizes,
    seed: u64,
) -> Result<Dataset, TaskError> {
    let split = |id: u64, n: usize| -> Result<Vec<Instance>, TaskError> {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut r = rng::derived(seed, &[id, i as u64]);
                params.generate(task, &mut r)
            })
            .collect()
    };
    Ok(Dataset {
        task,
        seed,
        train: split(0, sizes.train)?,
        val: split(1, sizes.val)?,
        test: split(2, sizes.test)?,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    task: TaskKind,
    seed: u64,
    split_sizes: [usize; 3],
}

fn instance_json(inst: &Instance) -> serde_json::Result<String> {
    match inst {
        Instance::Graph(g) => serde_json::to_string(g),
        Instance::Arith(a) => serde_json::to_string(a),
        Instance::Logic(c) => serde_json::to_string(c),
    }
}

fn parse_instance(task: TaskKind, line: &str) -> serde_json::Result<Instance> {
    Ok(match task {
        TaskKind::Graph => Instance::Graph(serde_json::from_str::<GraphInstance>(line)?),
        TaskKind::Arithmetic => Instance::Arith(serde_json::from_str::<ArithInstance>(line)?),
        TaskKind::Logic => Instance::Logic(serde_json::from_str::<CnfInstance>(line)?),
    })
}

/// Line-delimited JSON: a header line, then train, val and test instances in order.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<(), TaskError> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        task: dataset.task,
        seed: dataset.seed,
        split_sizes: dataset.sizes().as_array(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header serializes"))?;
    for inst in dataset.train.iter().chain(&dataset.val).chain(&dataset.test) {
        let line = instance_json(inst).map_err(|e| TaskError::Generation(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dataset file, optionally requiring a specific task tag.
pub fn load_dataset(path: &Path, expected: Option<TaskKind>) -> Result<Dataset, TaskError> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| TaskError::Malformed {
            line: 1,
            message: format!("bad header: {e}"),
        })?,
        None => {
            return Err(TaskError::Malformed {
                line: 1,
                message: "empty file".into(),
            })
        }
    };
    if let Some(want) = expected {
        if want != header.task {
            return Err(TaskError::TaskMismatch {
                expected: want,
                found: header.task,
            });
        }
    }
    let mut all = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let inst = parse_instance(header.task, &line).map_err(|e| TaskError::Malformed {
            line: idx + 1,
            message: e.to_string(),
        })?;
        all.push(inst);
    }
    let [ntr, nva, nte] = header.split_sizes;
    if all.len() != ntr + nva + nte {
        return Err(TaskError::Malformed {
            line: all.len() + 1,
            message: format!(
                "header announces {} instances, file holds {}",
                ntr + nva + nte,
                all.len()
            ),
        });
    }
    let test = all.split_off(ntr + nva);
    let val = all.split_off(ntr);
    Ok(Dataset {
        task: header.task,
        seed: header.seed,
        train: all,
        val,
        test,
    })
}
