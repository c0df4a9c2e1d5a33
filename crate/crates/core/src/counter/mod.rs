//! Hashing-based projected model counting.
//!
//! Each iteration samples a fresh list of hash constraints, locates the
//! first prefix whose cell drops below `thresh` with a galloping search,
//! optionally coarsens the last constraint, and records
//! `cell size × number of cells`. The answer is the median over
//! `itercount` iterations. If the unhashed formula already has fewer than
//! `thresh` projected models the exact count is returned right away.

mod cell;
mod search;

use std::time::{Duration, Instant};

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::hashgen::{generate_hash, HashFamily, HashStack};
use crate::oracle::{Oracle, OracleError, QueryStats};

pub use cell::{fix_last_hash, saturating_counter, CellProbe, FixOutcome, Refinement};
pub use search::{next_index, CellLedger, SaturatingCount};

#[derive(Debug, thiserror::Error)]
pub enum CounterError {
    #[error("invalid parameters: {0}")]
    InvalidParameters(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("solver answered unknown")]
    SolverUnknown,
    #[error("time budget exhausted")]
    Timeout,
    #[error("every index up to {max_index} saturated")]
    ExhaustedIndices { max_index: usize },
    #[error("refinement of the last hash failed after {attempts} attempts")]
    CounterFailed { attempts: u32 },
    #[error("median of an empty list")]
    EmptyList,
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

/// Base of the logarithm in the iteration-count formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LogBase {
    #[default]
    Two,
    Natural,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => x.log2(),
            LogBase::Natural => x.ln(),
        }
    }
}

/// What to do when refinement exhausts its attempts with every candidate
/// exact.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineFailure {
    /// Use the coarsest exact candidate of the last attempt.
    #[default]
    Coarsest,
    /// Abort the run with [`CounterError::CounterFailed`].
    Abort,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Constants {
    pub thresh: u64,
    pub itercount: u32,
    /// Range exponent ℓ of generated hashes.
    pub exponent: u32,
}

/// `thresh = ⌈1 + 9.84 (1 + ε/(1+ε)) (1 + 1/ε)²⌉`, `itercount =
/// ⌈k · log(3/δ)⌉` with `k = 17` for XOR and 23 otherwise.
pub fn get_constants(epsilon: f64, delta: f64, family: HashFamily, log_base: LogBase) -> Result<Constants, CounterError> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(CounterError::InvalidParameters(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CounterError::InvalidParameters(format!("delta must lie in (0, 1), got {delta}")));
    }
    let thresh = 1.0 + 9.84 * (1.0 + epsilon / (1.0 + epsilon)) * (1.0 + 1.0 / epsilon).powi(2);
    let (factor, exponent) = match family {
        HashFamily::Xor => (17.0, 1),
        HashFamily::Prime | HashFamily::Shift => (23.0, 4),
    };
    let itercount = (factor * log_base.log(3.0 / delta)).ceil();
    if thresh.ceil() > u64::MAX as f64 || itercount > u32::MAX as f64 {
        return Err(CounterError::InvalidParameters("epsilon/delta too small".into()));
    }
    Ok(Constants {
        thresh: thresh.ceil() as u64,
        itercount: itercount as u32,
        exponent,
    })
}

/// `n × (number of cells of the stack)`.
pub fn get_count(cell: u64, stack: &HashStack) -> BigUint {
    BigUint::from(cell) * stack.total_range()
}

/// Lower median.
pub fn find_median(values: &[BigUint]) -> Result<BigUint, CounterError> {
    if values.is_empty() {
        return Err(CounterError::EmptyList);
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    Ok(sorted.swap_remove((sorted.len() - 1) / 2))
}

/// Deepest stack worth probing: the smallest `m` with `p^m ≥ 2^|S|`, plus one.
pub fn max_index(total_width: u64, range: u64) -> usize {
    let space = BigUint::from(1u32) << total_width;
    let mut cells = BigUint::from(1u32);
    let mut m = 0;
    while cells < space {
        cells *= range;
        m += 1;
    }
    m + 1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountParams {
    pub epsilon: f64,
    pub delta: f64,
    pub family: HashFamily,
    pub log_base: LogBase,
    pub refinement: Refinement,
    pub on_refine_failure: RefineFailure,
    /// Extra attempts per iteration after a failed refinement.
    pub retry_budget: u32,
    /// Budget for the whole run.
    pub timeout: Option<Duration>,
}

impl CountParams {
    pub fn new(epsilon: f64, delta: f64, family: HashFamily) -> Self {
        CountParams {
            epsilon,
            delta,
            family,
            log_base: LogBase::default(),
            refinement: Refinement::default(),
            on_refine_failure: RefineFailure::default(),
            retry_budget: 3,
            timeout: None,
        }
    }
}

impl Default for CountParams {
    fn default() -> Self {
        Self::new(0.8, 0.2, HashFamily::Xor)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterStats {
    /// Saturating-counter invocations, including the unhashed one.
    pub saturating_calls: u64,
    /// Invocations made by the accepted attempt of each iteration.
    pub probes_per_iteration: Vec<u32>,
    /// Attempts discarded after a failed refinement.
    pub retries: u32,
    /// Iterations that fell back to the coarsest exact candidate.
    pub fallbacks: u32,
    pub max_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountResult {
    pub estimate: BigUint,
    /// True when the unhashed count was already below the threshold.
    pub exact: bool,
    pub raw_estimates: Vec<BigUint>,
    pub constants: Constants,
    pub seed: u64,
    pub stats: QueryStats,
    pub counter: CounterStats,
    pub wall_time: Duration,
}

/// Independent random stream for iteration `k` of a run seeded with `seed`.
pub fn iteration_rng(seed: u64, k: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(k);
    rng
}

/// Approximate projected model count of the oracle's formula.
pub fn pact_count<O: Oracle + ?Sized>(oracle: &mut O, params: &CountParams, seed: u64) -> Result<CountResult, CounterError> {
    let start = Instant::now();
    let deadline = params.timeout.map(|t| start + t);
    let constants = get_constants(params.epsilon, params.delta, params.family, params.log_base)?;
    let projection = oracle.projection().clone();
    let initial_range = params.family.range_for(constants.exponent);
    let max_index = max_index(projection.total_width(), initial_range);
    let mut counter = CounterStats {
        max_index,
        ..CounterStats::default()
    };

    let mut probe = CellProbe::new(oracle, constants.thresh, deadline);
    let unhashed = probe.count(&HashStack::new(), 0)?;
    let mut raw_estimates = Vec::with_capacity(constants.itercount as usize);

    let estimate = if let SaturatingCount::Exact(n) = unhashed {
        BigUint::from(n)
    } else {
        for k in 0..constants.itercount {
            let mut rng = iteration_rng(seed, u64::from(k));
            let mut attempt = 0;
            loop {
                let calls_before = probe.calls();
                let mut ledger = CellLedger::new();
                ledger.insert(0, SaturatingCount::Saturated);
                let mut stack = HashStack::new();
                let boundary = loop {
                    let i = match next_index(&ledger, max_index) {
                        Ok(i) => i,
                        // All sampled constraints together still leave a
                        // saturated cell; resample like a failed refinement.
                        Err(CounterError::ExhaustedIndices { .. }) if attempt < params.retry_budget => break None,
                        Err(e) => return Err(e),
                    };
                    // Deeper constraints stay; bisection may revisit them.
                    while stack.len() < i {
                        stack.extend(generate_hash(&projection, constants.exponent, params.family, &mut rng));
                    }
                    let cell = probe.count(&stack, i)?;
                    ledger.insert(i, cell);
                    if let Some(b) = ledger.boundary() {
                        break Some(b);
                    }
                };

                let outcome = match boundary {
                    Some(i) => fix_last_hash(
                        &mut probe,
                        &mut ledger,
                        &mut stack,
                        i,
                        constants.exponent,
                        params.family,
                        params.refinement,
                        &mut rng,
                    )?,
                    None => FixOutcome::Failed { replacements: 0 },
                };
                let accepted = match (outcome, boundary) {
                    (FixOutcome::Failed { .. }, _) if attempt < params.retry_budget => false,
                    (FixOutcome::Failed { .. }, Some(_)) => match params.on_refine_failure {
                        RefineFailure::Coarsest => {
                            counter.fallbacks += 1;
                            true
                        }
                        RefineFailure::Abort => {
                            return Err(CounterError::CounterFailed { attempts: attempt + 1 });
                        }
                    },
                    (_, Some(_)) => true,
                    (_, None) => unreachable!("exhausted indices past the retry budget return early"),
                };
                if !accepted {
                    attempt += 1;
                    counter.retries += 1;
                    continue;
                }

                let i = boundary.expect("accepted attempts have a boundary");
                let cell = ledger
                    .get(i)
                    .and_then(SaturatingCount::exact)
                    .ok_or_else(|| CounterError::Internal("boundary cell is not exact".into()))?;
                raw_estimates.push(get_count(cell, &stack));
                counter.probes_per_iteration.push((probe.calls() - calls_before) as u32);
                break;
            }
            probe.retract_to(0)?;
        }
        find_median(&raw_estimates)?
    };

    counter.saturating_calls = probe.calls();
    Ok(CountResult {
        estimate,
        exact: unhashed.exact().is_some(),
        raw_estimates,
        constants,
        seed,
        stats: oracle.stats().clone(),
        counter,
        wall_time: start.elapsed(),
    })
}
