use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::search::{CellLedger, SaturatingCount};
use super::CounterError;
use crate::hashgen::{generate_hash, HashConstraint, HashFamily, HashStack};
use crate::oracle::{BlockingClause, Oracle, SatResult};
use crate::smtlib::Assertion;

/// Enumerates projected models of the live formula until `thresh` are found
/// or the solver reports unsat. Blocking clauses live in their own push
/// frame and are gone on return.
pub fn saturating_counter<O: Oracle + ?Sized>(oracle: &mut O, thresh: u64) -> Result<SaturatingCount, CounterError> {
    oracle.push()?;
    let outcome = enumerate_until(oracle, thresh);
    oracle.pop()?;
    outcome
}

fn enumerate_until<O: Oracle + ?Sized>(oracle: &mut O, thresh: u64) -> Result<SaturatingCount, CounterError> {
    let mut found = 0u64;
    loop {
        match oracle.check_sat()? {
            SatResult::Unsat => return Ok(SaturatingCount::Exact(found)),
            SatResult::Sat => {
                found += 1;
                if found >= thresh {
                    return Ok(SaturatingCount::Saturated);
                }
                let model = oracle.projected_model()?;
                oracle.assert_constraint(Assertion::Block(&BlockingClause::new(model)))?;
            }
            SatResult::Unknown => return Err(CounterError::SolverUnknown),
            SatResult::Timeout => return Err(CounterError::Timeout),
        }
    }
}

/// Counts cells `F ∧ H_[i]` for varying stacks, keeping the longest
/// already-asserted prefix of hash constraints in the solver (one push
/// frame per constraint) so consecutive probes share work.
pub struct CellProbe<'o, O: Oracle + ?Sized> {
    oracle: &'o mut O,
    asserted: Vec<HashConstraint>,
    thresh: u64,
    deadline: Option<Instant>,
    calls: u64,
}

impl<'o, O: Oracle + ?Sized> CellProbe<'o, O> {
    pub fn new(oracle: &'o mut O, thresh: u64, deadline: Option<Instant>) -> Self {
        CellProbe {
            oracle,
            asserted: Vec::new(),
            thresh,
            deadline,
            calls: 0,
        }
    }

    /// Saturating-counter invocations so far.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn thresh(&self) -> u64 {
        self.thresh
    }

    pub fn oracle(&self) -> &O {
        self.oracle
    }

    /// Size of the cell selected by the first `depth` constraints of `stack`.
    pub fn count(&mut self, stack: &HashStack, depth: usize) -> Result<SaturatingCount, CounterError> {
        assert!(depth <= stack.len());
        if let Some(deadline) = self.deadline {
            let now = Instant::now();
            if now >= deadline {
                return Err(CounterError::Timeout);
            }
            self.oracle.set_query_timeout(Some(deadline - now));
        }
        let wanted = &stack.constraints()[..depth];
        let shared = self
            .asserted
            .iter()
            .zip(wanted)
            .take_while(|(a, b)| a == b)
            .count();
        self.retract_to(shared)?;
        for h in &wanted[shared..] {
            self.oracle.push()?;
            self.oracle.assert_constraint(Assertion::Hash(h))?;
            self.asserted.push(h.clone());
        }
        self.calls += 1;
        saturating_counter(self.oracle, self.thresh)
    }

    /// Pops hash frames until only the first `depth` remain.
    pub fn retract_to(&mut self, depth: usize) -> Result<(), CounterError> {
        while self.asserted.len() > depth {
            self.oracle.pop()?;
            self.asserted.pop();
        }
        Ok(())
    }
}

/// How the refinement loop shrinks the range exponent of the last hash.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Refinement {
    /// `ℓ ← ℓ - 1`: each candidate has about half the range of the last.
    #[default]
    Decrement,
    /// `ℓ ← ⌊ℓ/2⌋`.
    Halve,
}

impl Refinement {
    pub fn next(self, ell: u32) -> u32 {
        match self {
            Refinement::Decrement => ell - 1,
            Refinement::Halve => ell / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixOutcome {
    /// XOR constraints are already as coarse as they get.
    Unchanged,
    /// A coarser candidate saturated; the stack holds the last exact one.
    Refined { replacements: u32 },
    /// Every candidate down to ℓ = 1 stayed exact. The ledger and stack
    /// hold the coarsest of them.
    Failed { replacements: u32 },
}

/// Replaces constraint `i` of the stack (the one whose cell at `ledger[i]`
/// is exact while cell `i - 1` saturates) with coarser constraints while
/// the resulting cell stays below the threshold. The stack is truncated to
/// `i` constraints.
#[allow(clippy::too_many_arguments)]
pub fn fix_last_hash<O: Oracle + ?Sized, R: Rng + ?Sized>(
    probe: &mut CellProbe<'_, O>,
    ledger: &mut CellLedger,
    stack: &mut HashStack,
    i: usize,
    ell: u32,
    family: HashFamily,
    refinement: Refinement,
    rng: &mut R,
) -> Result<FixOutcome, CounterError> {
    debug_assert!(ledger.is_boundary(i));
    stack.truncate(i);
    if family == HashFamily::Xor {
        return Ok(FixOutcome::Unchanged);
    }
    let projection = probe.oracle().projection().clone();
    let mut replacements = 0;
    let mut current = ell;
    while current > 1 {
        current = refinement.next(current);
        let candidate_hash = generate_hash(&projection, current, family, rng);
        let mut candidate = stack.clone();
        candidate.replace_last(candidate_hash).expect("boundary index is at least 1");
        match probe.count(&candidate, i)? {
            SaturatingCount::Saturated => return Ok(FixOutcome::Refined { replacements }),
            exact => {
                ledger.insert(i, exact);
                *stack = candidate;
                replacements += 1;
            }
        }
    }
    Ok(FixOutcome::Failed { replacements })
}
