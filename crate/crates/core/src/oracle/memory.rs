use std::time::Instant;

use num_bigint::BigUint;
use num_traits::ToPrimitive;

use super::{Oracle, OracleError, ProjectedModel, QueryStats, SatResult};
use crate::hashgen::{HashConstraint, HashFamily};
use crate::smtlib::{Assertion, ProjectionSet};

/// Oracle over an explicit set of projected assignments.
///
/// Each assignment is packed into a `u128`, variable `k` occupying the bits
/// starting at the sum of the widths before it. The live set is the prefix
/// `items[..live]`; asserting a constraint partitions that prefix in place so
/// survivors come first, and `pop` only has to restore the saved length.
#[derive(Debug, Clone)]
pub struct MemoryOracle {
    projection: ProjectionSet,
    offsets: Vec<u32>,
    items: Vec<u128>,
    live: usize,
    frames: Vec<usize>,
    last_sat: bool,
    stats: QueryStats,
}

impl MemoryOracle {
    pub fn new(
        projection: ProjectionSet,
        solutions: impl IntoIterator<Item = ProjectedModel>,
    ) -> Result<Self, OracleError> {
        let offsets = Self::offsets_for(&projection)?;
        let packed = solutions
            .into_iter()
            .map(|m| {
                if !m.fits(&projection) {
                    return Err(OracleError::OutOfRange(format!("{:?}", m.values())));
                }
                Ok(pack_with(&offsets, &m))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::build(projection, offsets, packed))
    }

    /// Builds the oracle from packed assignments (for a single variable the
    /// packed value is the variable's value).
    pub fn from_packed(
        projection: ProjectionSet,
        values: impl IntoIterator<Item = u128>,
    ) -> Result<Self, OracleError> {
        let offsets = Self::offsets_for(&projection)?;
        let width = projection.total_width() as u32;
        let items: Vec<u128> = values.into_iter().collect();
        if let Some(bad) = items.iter().find(|&&v| width < 128 && v >> width != 0) {
            return Err(OracleError::OutOfRange(bad.to_string()));
        }
        Ok(Self::build(projection, offsets, items))
    }

    fn offsets_for(projection: &ProjectionSet) -> Result<Vec<u32>, OracleError> {
        if projection.total_width() > 128 {
            return Err(OracleError::TooWide(projection.total_width()));
        }
        Ok(projection
            .vars()
            .iter()
            .scan(0u32, |acc, v| {
                let at = *acc;
                *acc += v.width;
                Some(at)
            })
            .collect())
    }

    fn build(projection: ProjectionSet, offsets: Vec<u32>, mut items: Vec<u128>) -> Self {
        items.sort_unstable();
        items.dedup();
        let live = items.len();
        MemoryOracle {
            projection,
            offsets,
            items,
            live,
            frames: Vec::new(),
            last_sat: false,
            stats: QueryStats::default(),
        }
    }

    /// Size of the original solution set.
    pub fn solution_count(&self) -> usize {
        self.items.len()
    }

    /// Assignments satisfying every live constraint.
    pub fn live_count(&self) -> usize {
        self.live
    }

    pub fn live_models(&self) -> impl Iterator<Item = ProjectedModel> + '_ {
        self.items[..self.live].iter().map(|&v| self.unpack(v))
    }

    pub fn pack(&self, model: &ProjectedModel) -> u128 {
        pack_with(&self.offsets, model)
    }

    pub fn unpack(&self, packed: u128) -> ProjectedModel {
        ProjectedModel::new(
            self.projection
                .vars()
                .iter()
                .zip(&self.offsets)
                .map(|(var, &at)| BigUint::from(extract(packed, at, var.width)))
                .collect(),
        )
    }

    fn retain_live(&mut self, keep: impl Fn(u128) -> bool) {
        let mut i = 0;
        let mut end = self.live;
        while i < end {
            if keep(self.items[i]) {
                i += 1;
            } else {
                end -= 1;
                self.items.swap(i, end);
            }
        }
        self.live = end;
    }

    fn apply_hash(&mut self, h: &HashConstraint) {
        let target = h.target;
        match h.family {
            HashFamily::Xor => {
                let mut mask = 0u128;
                for (s, &a) in h.slices.iter().zip(&h.coefficients) {
                    if a == 1 {
                        mask |= 1u128 << (self.offsets[s.var] + s.lo);
                    }
                }
                let target = u32::from(target == 1);
                self.retain_live(|x| (x & mask).count_ones() & 1 == target);
            }
            HashFamily::Prime | HashFamily::Shift => {
                let offsets = std::mem::take(&mut self.offsets);
                self.retain_live(|x| h.eval_by(|s| extract(x, offsets[s.var] + s.lo, s.width()) as u64) == target);
                self.offsets = offsets;
            }
        }
    }

    fn block(&mut self, model: &ProjectedModel) {
        let v = self.pack(model);
        let live = &self.items[..self.live];
        let pos = if live.first() == Some(&v) {
            Some(0)
        } else {
            live.iter().position(|&x| x == v)
        };
        if let Some(pos) = pos {
            self.items.swap(pos, self.live - 1);
            self.live -= 1;
        }
    }
}

fn extract(packed: u128, at: u32, width: u32) -> u128 {
    let shifted = packed >> at;
    if width >= 128 {
        shifted
    } else {
        shifted & ((1u128 << width) - 1)
    }
}

fn pack_with(offsets: &[u32], model: &ProjectedModel) -> u128 {
    model
        .values()
        .iter()
        .zip(offsets)
        .fold(0u128, |acc, (v, &at)| acc | (v.to_u128().expect("value fits 128 bits") << at))
}

impl Oracle for MemoryOracle {
    fn projection(&self) -> &ProjectionSet {
        &self.projection
    }

    fn check_sat(&mut self) -> Result<SatResult, OracleError> {
        let start = Instant::now();
        self.stats.check_sat_calls += 1;
        self.last_sat = self.live > 0;
        self.stats.solver_time_secs += start.elapsed().as_secs_f64();
        Ok(if self.last_sat { SatResult::Sat } else { SatResult::Unsat })
    }

    fn projected_model(&mut self) -> Result<ProjectedModel, OracleError> {
        if !self.last_sat || self.live == 0 {
            return Err(OracleError::NoModel);
        }
        Ok(self.unpack(self.items[0]))
    }

    fn assert_constraint(&mut self, assertion: Assertion<'_>) -> Result<(), OracleError> {
        self.stats.assertions_sent += 1;
        self.last_sat = false;
        match assertion {
            Assertion::Hash(h) => self.apply_hash(h),
            Assertion::Block(b) => self.block(&b.model),
        }
        Ok(())
    }

    fn push(&mut self) -> Result<(), OracleError> {
        self.frames.push(self.live);
        Ok(())
    }

    fn pop(&mut self) -> Result<(), OracleError> {
        self.live = self.frames.pop().ok_or(OracleError::StackUnderflow)?;
        self.last_sat = false;
        Ok(())
    }

    fn depth(&self) -> usize {
        self.frames.len()
    }

    fn stats(&self) -> &QueryStats {
        &self.stats
    }
}
