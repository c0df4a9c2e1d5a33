//! Exact projected counting by enumeration: ask for a model, block its
//! projection, repeat until unsat.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::counter::CounterError;
use crate::oracle::{BlockingClause, Oracle, SatResult};
use crate::smtlib::Assertion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "n", rename_all = "snake_case")]
pub enum BaselineCount {
    /// The solver answered unsat after `n` blocking clauses.
    Exact(u64),
    /// Budget ran out after `n` distinct models; a lower bound.
    TimedOut(u64),
    /// The cap was hit after `n` distinct models; a lower bound.
    AtLeast(u64),
}

impl BaselineCount {
    pub fn exact(self) -> Option<u64> {
        match self {
            BaselineCount::Exact(n) => Some(n),
            _ => None,
        }
    }

    pub fn lower_bound(self) -> u64 {
        match self {
            BaselineCount::Exact(n) | BaselineCount::TimedOut(n) | BaselineCount::AtLeast(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub count: BaselineCount,
    pub models_enumerated: u64,
    pub wall_time: Duration,
}

/// Enumerates projected models inside one push frame, which is popped
/// before returning.
pub fn enumerate_count<O: Oracle + ?Sized>(
    oracle: &mut O,
    timeout: Option<Duration>,
    cap: Option<u64>,
) -> Result<BaselineResult, CounterError> {
    let start = Instant::now();
    let deadline = timeout.map(|t| start + t);
    oracle.push()?;
    let outcome = enumerate(oracle, deadline, cap);
    oracle.pop()?;
    let count = outcome?;
    Ok(BaselineResult {
        count,
        models_enumerated: count.lower_bound(),
        wall_time: start.elapsed(),
    })
}

fn enumerate<O: Oracle + ?Sized>(oracle: &mut O, deadline: Option<Instant>, cap: Option<u64>) -> Result<BaselineCount, CounterError> {
    let mut n = 0u64;
    loop {
        if cap.is_some_and(|c| n >= c) {
            return Ok(BaselineCount::AtLeast(n));
        }
        if let Some(deadline) = deadline {
            let now = Instant::now();
            if now >= deadline {
                return Ok(BaselineCount::TimedOut(n));
            }
            oracle.set_query_timeout(Some(deadline - now));
        }
        match oracle.check_sat()? {
            SatResult::Unsat => return Ok(BaselineCount::Exact(n)),
            SatResult::Sat => {
                n += 1;
                let model = oracle.projected_model()?;
                oracle.assert_constraint(Assertion::Block(&BlockingClause::new(model)))?;
            }
            SatResult::Timeout => return Ok(BaselineCount::TimedOut(n)),
            SatResult::Unknown => return Err(CounterError::SolverUnknown),
        }
    }
}
