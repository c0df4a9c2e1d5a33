//! Pairwise-independent hash constraints over a projection set.
//!
//! Three families are supported:
//!
//! * `Prime`: `(Σ a_i·x_i + b) mod p = α` with `p` the smallest prime above
//!   `2^ℓ` and `a_i, b ∈ [p]`.
//! * `Shift`: bits `[w̄-ℓ, w̄)` of `(Σ a_i·x_i + b) mod 2^w̄` equal `α`, with
//!   `a_i, b ∈ [2^w̄]` and range `2^ℓ`.
//! * `Xor`: parity of a random subset of projection bits equals `α`.
//!
//! Word-level families hash slices of the projection variables: every
//! variable of width `w` is cut into `⌈w/ℓ⌉` contiguous slices of at most `ℓ`
//! bits, lowest bits first.

mod prime;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::ProjectedModel;
use crate::smtlib::ProjectionSet;

pub use prime::{is_prime, smallest_prime_above};

/// Largest supported range exponent ℓ. Keeps every coefficient and slice
/// value within a `u64` and every exact sum within a `u128`.
pub const MAX_EXPONENT: u32 = 31;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HashError {
    #[error("no prime above {0} fits in 64 bits")]
    RangeExceeded(u64),
    #[error("cannot replace the last hash of an empty stack")]
    EmptyStack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HashFamily {
    Xor,
    Prime,
    Shift,
}

impl HashFamily {
    pub fn name(self) -> &'static str {
        match self {
            HashFamily::Xor => "xor",
            HashFamily::Prime => "prime",
            HashFamily::Shift => "shift",
        }
    }

    /// Range of a constraint generated with exponent `ell`.
    pub fn range_for(self, ell: u32) -> u64 {
        match self {
            HashFamily::Xor => 2,
            HashFamily::Shift => 1 << ell,
            HashFamily::Prime => smallest_prime_above(1 << ell).expect("ell <= MAX_EXPONENT"),
        }
    }
}

impl std::fmt::Display for HashFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for HashFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "xor" => Ok(HashFamily::Xor),
            "prime" => Ok(HashFamily::Prime),
            "shift" => Ok(HashFamily::Shift),
            other => Err(format!("unknown hash family `{other}` (expected xor, prime or shift)")),
        }
    }
}

/// Bits `[lo, hi)` of projection variable number `var`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Slice {
    pub var: usize,
    pub index: u32,
    pub lo: u32,
    pub hi: u32,
}

impl Slice {
    pub fn width(&self) -> u32 {
        self.hi - self.lo
    }

    /// Value of this slice inside a model.
    pub fn value_in(&self, model: &ProjectedModel) -> u64 {
        let v = &model.values()[self.var];
        let mask = (BigUint::one() << self.width()) - 1u32;
        ((v >> self.lo) & mask).to_u64().expect("slice wider than 64 bits")
    }
}

/// Cuts every projection variable into slices of at most `slice_width` bits.
/// The last slice of a variable keeps whatever width remains.
pub fn slice_projection(projection: &ProjectionSet, slice_width: u32) -> Vec<Slice> {
    assert!(slice_width >= 1);
    projection
        .vars()
        .iter()
        .enumerate()
        .flat_map(|(var, v)| {
            (0..v.width.div_ceil(slice_width)).map(move |index| Slice {
                var,
                index,
                lo: index * slice_width,
                hi: ((index + 1) * slice_width).min(v.width),
            })
        })
        .collect()
}

/// One sampled constraint `h(x) = α`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HashConstraint {
    pub family: HashFamily,
    /// ℓ, the range exponent the constraint was generated with.
    pub exponent: u32,
    pub slices: Vec<Slice>,
    pub coefficients: Vec<u64>,
    pub offset: Option<u64>,
    pub range: u64,
    pub target: u64,
    /// Width of the bitvector arithmetic used by word-level families.
    pub widened_width: Option<u32>,
}

impl HashConstraint {
    /// Parity constraint over the individual bits of `projection`.
    pub fn xor(projection: &ProjectionSet, coefficients: Vec<u64>, target: u64) -> Self {
        let slices = slice_projection(projection, 1);
        assert_eq!(slices.len(), coefficients.len());
        assert!(coefficients.iter().all(|&a| a <= 1) && target <= 1);
        HashConstraint {
            family: HashFamily::Xor,
            exponent: 1,
            slices,
            coefficients,
            offset: None,
            range: 2,
            target,
            widened_width: None,
        }
    }

    /// Multiply-mod-prime constraint. The sum is computed at `2ℓ + d` bits,
    /// enough for `d` products of a coefficient below `p ≤ 2^(ℓ+1)` with an
    /// `ℓ`-bit slice plus the offset.
    pub fn prime(
        projection: &ProjectionSet,
        ell: u32,
        p: u64,
        coefficients: Vec<u64>,
        offset: u64,
        target: u64,
    ) -> Self {
        check_exponent(ell);
        let slices = slice_projection(projection, ell);
        assert_eq!(slices.len(), coefficients.len());
        assert!(coefficients.iter().all(|&a| a < p) && offset < p && target < p);
        let widened = 2 * ell + slices.len() as u32;
        HashConstraint {
            family: HashFamily::Prime,
            exponent: ell,
            slices,
            coefficients,
            offset: Some(offset),
            range: p,
            target,
            widened_width: Some(widened),
        }
    }

    /// Multiply-shift constraint with `w̄ = 2ℓ` (slices are at most `ℓ` bits
    /// wide, so `w̄ ≥ w + ℓ - 1` holds).
    pub fn shift(projection: &ProjectionSet, ell: u32, coefficients: Vec<u64>, offset: u64, target: u64) -> Self {
        check_exponent(ell);
        let slices = slice_projection(projection, ell);
        assert_eq!(slices.len(), coefficients.len());
        let widened = shift_width(ell);
        assert!(coefficients.iter().all(|&a| a >> widened == 0) && offset >> widened == 0);
        assert!(target < 1 << ell);
        HashConstraint {
            family: HashFamily::Shift,
            exponent: ell,
            slices,
            coefficients,
            offset: Some(offset),
            range: 1 << ell,
            target,
            widened_width: Some(widened),
        }
    }

    pub fn dimension(&self) -> usize {
        self.slices.len()
    }

    /// Hash value given a way to read each slice.
    pub fn eval_by(&self, mut slice_value: impl FnMut(&Slice) -> u64) -> u64 {
        match self.family {
            HashFamily::Xor => {
                self.slices
                    .iter()
                    .zip(&self.coefficients)
                    .filter(|(_, &a)| a == 1)
                    .fold(0, |acc, (s, _)| acc ^ (slice_value(s) & 1))
            }
            HashFamily::Prime => {
                let sum = self.exact_sum(&mut slice_value);
                debug_assert!(sum.checked_shr(self.widened_width.unwrap()).unwrap_or(0) == 0);
                (sum % self.range as u128) as u64
            }
            HashFamily::Shift => {
                let wide = self.widened_width.unwrap();
                let sum = self.exact_sum(&mut slice_value) & ((1u128 << wide) - 1);
                (sum >> (wide - self.exponent)) as u64
            }
        }
    }

    fn exact_sum(&self, slice_value: &mut impl FnMut(&Slice) -> u64) -> u128 {
        let sum: u128 = self
            .slices
            .iter()
            .zip(&self.coefficients)
            .map(|(s, &a)| a as u128 * slice_value(s) as u128)
            .sum();
        sum + self.offset.unwrap_or(0) as u128
    }

    /// Hash value of a projected model.
    pub fn eval(&self, model: &ProjectedModel) -> u64 {
        self.eval_by(|s| s.value_in(model))
    }

    pub fn holds(&self, model: &ProjectedModel) -> bool {
        self.eval(model) == self.target
    }
}

fn check_exponent(ell: u32) {
    assert!(
        (1..=MAX_EXPONENT).contains(&ell),
        "range exponent {ell} outside 1..={MAX_EXPONENT}"
    );
}

pub(crate) fn shift_width(ell: u32) -> u32 {
    2 * ell
}

/// Samples a fresh constraint from `family` with range exponent `ell`
/// (ignored for `Xor`, which always has range 2).
pub fn generate_hash<R: Rng + ?Sized>(
    projection: &ProjectionSet,
    ell: u32,
    family: HashFamily,
    rng: &mut R,
) -> HashConstraint {
    match family {
        HashFamily::Xor => {
            let d = projection.total_width() as usize;
            let coefficients = (0..d).map(|_| rng.gen_range(0..2)).collect();
            HashConstraint::xor(projection, coefficients, rng.gen_range(0..2))
        }
        HashFamily::Prime => {
            check_exponent(ell);
            let p = family.range_for(ell);
            let d = slice_projection(projection, ell).len();
            let coefficients = (0..d).map(|_| rng.gen_range(0..p)).collect();
            let offset = rng.gen_range(0..p);
            HashConstraint::prime(projection, ell, p, coefficients, offset, rng.gen_range(0..p))
        }
        HashFamily::Shift => {
            check_exponent(ell);
            let bound = 1u64 << shift_width(ell);
            let d = slice_projection(projection, ell).len();
            let coefficients = (0..d).map(|_| rng.gen_range(0..bound)).collect();
            let offset = rng.gen_range(0..bound);
            HashConstraint::shift(projection, ell, coefficients, offset, rng.gen_range(0..1u64 << ell))
        }
    }
}

/// Conjunction of the first `len` constraints, with the number of cells
/// each prefix partitions the space into.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HashStack {
    constraints: Vec<HashConstraint>,
    cumulative_ranges: Vec<BigUint>,
}

impl HashStack {
    pub fn new() -> Self {
        HashStack {
            constraints: Vec::new(),
            cumulative_ranges: vec![BigUint::one()],
        }
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn constraints(&self) -> &[HashConstraint] {
        &self.constraints
    }

    /// Entry `i` is the product of the first `i` ranges.
    pub fn cumulative_ranges(&self) -> &[BigUint] {
        &self.cumulative_ranges
    }

    /// Number of cells the whole stack partitions the space into.
    pub fn total_range(&self) -> &BigUint {
        self.cumulative_ranges.last().expect("never empty")
    }

    pub fn extend(&mut self, h: HashConstraint) {
        let next = self.total_range() * h.range;
        self.cumulative_ranges.push(next);
        self.constraints.push(h);
    }

    pub fn replace_last(&mut self, h: HashConstraint) -> Result<HashConstraint, HashError> {
        let old = self.constraints.pop().ok_or(HashError::EmptyStack)?;
        self.cumulative_ranges.pop();
        self.extend(h);
        Ok(old)
    }

    /// Keeps the first `len` constraints.
    pub fn truncate(&mut self, len: usize) {
        self.constraints.truncate(len);
        self.cumulative_ranges.truncate(len + 1);
    }
}
