use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TaskError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Literal {
    pub var: usize,
    pub positive: bool,
}

impl Literal {
    #[inline]
    pub fn holds(&self, assignment: &[bool]) -> bool {
        assignment[self.var] == self.positive
    }
}

pub type Clause = [Literal; 3];

/// Satisfiable 3-CNF formula together with the assignment it was planted around.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnfInstance {
    pub n_vars: usize,
    pub clauses: Vec<Clause>,
    pub hidden_assignment: Vec<bool>,
}

impl CnfInstance {
    /// One row per clause: `+1`/`-1` at each literal's variable, `0` elsewhere.
    pub fn polarity_rows(&self) -> Vec<Vec<f64>> {
        self.clauses
            .iter()
            .map(|c| {
                let mut row = vec![0.0; self.n_vars];
                for lit in c {
                    row[lit.var] = if lit.positive { 1.0 } else { -1.0 };
                }
                row
            })
            .collect()
    }
}

/// Random formula built around a uniformly drawn hidden assignment.
///
/// Each clause takes three distinct variables; one literal (chosen uniformly) is forced to agree
/// with the hidden assignment and the other two get uniform polarities.
pub fn gen_cnf<R: Rng + ?Sized>(
    rng: &mut R,
    n_vars: usize,
    clause_range: (usize, usize),
) -> Result<CnfInstance, TaskError> {
    if n_vars < 3 {
        return Err(TaskError::Config(format!("need at least 3 variables, got {n_vars}")));
    }
    let (lo, hi) = clause_range;
    if lo == 0 || hi < lo {
        return Err(TaskError::Config(format!("invalid clause range [{lo}, {hi}]")));
    }
    let hidden: Vec<bool> = (0..n_vars).map(|_| rng.random()).collect();
    let m = rng.random_range(lo..=hi);
    let clauses = (0..m)
        .map(|_| {
            let vars = sample(rng, n_vars, 3);
            let anchor = rng.random_range(0..3);
            let mut clause = [Literal { var: 0, positive: true }; 3];
            for (k, var) in vars.iter().enumerate() {
                let positive = if k == anchor { hidden[var] } else { rng.random() };
                clause[k] = Literal { var, positive };
            }
            clause
        })
        .collect();
    Ok(CnfInstance {
        n_vars,
        clauses,
        hidden_assignment: hidden,
    })
}

/// Fraction of clauses with at least one true literal.
pub fn sat_fraction(clauses: &[Clause], assignment: &[bool]) -> f64 {
    if clauses.is_empty() {
        return 1.0;
    }
    let sat = clauses
        .iter()
        .filter(|c| c.iter().any(|l| l.holds(assignment)))
        .count();
    sat as f64 / clauses.len() as f64
}
