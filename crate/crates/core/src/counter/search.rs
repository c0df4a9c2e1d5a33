use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::CounterError;

/// Outcome of a bounded enumeration: an exact cell size below the
/// threshold, or the marker that the threshold was reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SaturatingCount {
    Exact(u64),
    Saturated,
}

impl SaturatingCount {
    pub fn is_saturated(self) -> bool {
        matches!(self, SaturatingCount::Saturated)
    }

    pub fn exact(self) -> Option<u64> {
        match self {
            SaturatingCount::Exact(n) => Some(n),
            SaturatingCount::Saturated => None,
        }
    }
}

/// Cell sizes probed so far in one iteration; entry `i` is the size of the
/// cell selected by the first `i` hash constraints.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CellLedger {
    entries: BTreeMap<usize, SaturatingCount>,
}

impl CellLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, index: usize, count: SaturatingCount) {
        self.entries.insert(index, count);
    }

    pub fn get(&self, index: usize) -> Option<SaturatingCount> {
        self.entries.get(&index).copied()
    }

    pub fn highest_computed(&self) -> Option<usize> {
        self.entries.keys().next_back().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `C[i]` is exact while `C[i-1]` is saturated.
    pub fn is_boundary(&self, index: usize) -> bool {
        index > 0
            && matches!(self.get(index), Some(SaturatingCount::Exact(_)))
            && matches!(self.get(index - 1), Some(SaturatingCount::Saturated))
    }

    /// Index `i` with `C[i-1]` saturated and `C[i]` exact, once probed.
    pub fn boundary(&self) -> Option<usize> {
        let (lo, hi) = self.bracket().ok()?;
        hi.filter(|&hi| hi == lo + 1)
    }

    /// Largest saturated index and smallest exact index above it.
    fn bracket(&self) -> Result<(usize, Option<usize>), CounterError> {
        let lo = self
            .entries
            .iter()
            .filter(|(_, c)| c.is_saturated())
            .map(|(&i, _)| i)
            .next_back()
            .ok_or_else(|| CounterError::Internal("galloping search needs a saturated cell at index 0".into()))?;
        if let Some((&i, _)) = self.entries.range(..lo).find(|(_, c)| !c.is_saturated()) {
            return Err(CounterError::Internal(format!(
                "cell {i} is exact but deeper cell {lo} is saturated"
            )));
        }
        Ok((lo, self.entries.range(lo + 1..).map(|(&i, _)| i).next()))
    }
}

/// Next index to probe. Gallops (1, 2, 4, 8, …, capped at `max_index`)
/// while every probe saturates, then bisects between the deepest saturated
/// index and the shallowest exact one.
pub fn next_index(ledger: &CellLedger, max_index: usize) -> Result<usize, CounterError> {
    let (lo, hi) = ledger.bracket()?;
    match hi {
        Some(hi) if hi > lo + 1 => Ok(lo + (hi - lo) / 2),
        Some(hi) => Err(CounterError::Internal(format!(
            "boundary between {lo} and {hi} is already located"
        ))),
        None if lo >= max_index => Err(CounterError::ExhaustedIndices { max_index }),
        None if lo == 0 => Ok(1),
        None => Ok((2 * lo).min(max_index)),
    }
}
