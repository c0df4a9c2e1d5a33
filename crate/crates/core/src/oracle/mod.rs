//! Incremental satisfiability oracles.
//!
//! [`SubprocessOracle`] drives an external SMT-LIB2 solver over a pipe;
//! [`MemoryOracle`] answers the same queries against an explicit, finite set
//! of projected assignments and is what the statistical tests run on.

mod memory;
mod subprocess;

use std::time::Duration;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::smtlib::{Assertion, ProjectionSet};

pub use memory::MemoryOracle;
pub use subprocess::{SolverConfig, SubprocessOracle, DEFAULT_SOLVER_CMD, SOLVER_ENV};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("solver process exited or stopped responding; stderr: {stderr}")]
    SolverCrashed { stderr: String },
    #[error("solver protocol error: {0}")]
    Protocol(String),
    #[error("pop at assertion-stack depth 0")]
    StackUnderflow,
    #[error("no model available: the last check-sat did not return sat")]
    NoModel,
    #[error("could not start solver `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error("solver I/O failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("in-memory oracle supports at most 128 projected bits, got {0}")]
    TooWide(u64),
    #[error("assignment {0} does not fit the projection set")]
    OutOfRange(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SatResult {
    Sat,
    Unsat,
    Unknown,
    Timeout,
}

/// Running totals for one oracle handle. Never decrease.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryStats {
    pub check_sat_calls: u64,
    pub assertions_sent: u64,
    pub solver_time_secs: f64,
}

/// Values of the projection variables in one solution, in projection order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProjectedModel {
    values: Vec<BigUint>,
}

impl ProjectedModel {
    pub fn new(values: Vec<BigUint>) -> Self {
        ProjectedModel { values }
    }

    pub fn values(&self) -> &[BigUint] {
        &self.values
    }

    pub fn get<'a>(&'a self, projection: &ProjectionSet, name: &str) -> Option<&'a BigUint> {
        projection.index_of(name).and_then(|k| self.values.get(k))
    }

    /// True if there is one value per variable and each fits its width.
    pub fn fits(&self, projection: &ProjectionSet) -> bool {
        self.values.len() == projection.len()
            && self
                .values
                .iter()
                .zip(projection.vars())
                .all(|(v, var)| v.bits() <= u64::from(var.width))
    }
}

/// `¬(x₁ = v₁ ∧ … ∧ xₙ = vₙ)` for a projected model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockingClause {
    pub model: ProjectedModel,
}

impl BlockingClause {
    pub fn new(model: ProjectedModel) -> Self {
        BlockingClause { model }
    }
}

/// Incremental solving interface shared by every backend.
///
/// The base formula is fixed when the oracle is created. A handle is
/// single-owner; run independent handles to parallelize.
pub trait Oracle {
    fn projection(&self) -> &ProjectionSet;

    fn check_sat(&mut self) -> Result<SatResult, OracleError>;

    /// Projection of the model found by the last successful `check_sat`.
    fn projected_model(&mut self) -> Result<ProjectedModel, OracleError>;

    fn assert_constraint(&mut self, assertion: Assertion<'_>) -> Result<(), OracleError>;

    fn push(&mut self) -> Result<(), OracleError>;

    fn pop(&mut self) -> Result<(), OracleError>;

    /// Number of open push frames.
    fn depth(&self) -> usize;

    fn stats(&self) -> &QueryStats;

    /// Wall-clock limit for each subsequent `check_sat`.
    fn set_query_timeout(&mut self, _timeout: Option<Duration>) {}
}
