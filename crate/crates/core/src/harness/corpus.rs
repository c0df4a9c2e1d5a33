//! Seeded generator for instances with known projected counts.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::oracle::MemoryOracle;
use crate::smtlib::{bin_literal, ProjectionSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    /// `x < count`.
    Interval,
    /// A union of disjoint intervals scattered over the domain.
    Scattered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceSpec {
    pub width: u32,
    pub count: u64,
    pub shape: Shape,
    /// Adds a floating-point variable outside the projection with a
    /// satisfiable side condition.
    pub hybrid: bool,
    pub seed: u64,
}

impl InstanceSpec {
    pub fn new(width: u32, count: u64) -> Self {
        InstanceSpec {
            width,
            count,
            shape: Shape::Interval,
            hybrid: false,
            seed: 0,
        }
    }

    pub fn scattered(mut self, seed: u64) -> Self {
        self.shape = Shape::Scattered;
        self.seed = seed;
        self
    }

    pub fn hybrid(mut self) -> Self {
        self.hybrid = true;
        self
    }

    pub fn name(&self) -> String {
        let shape = match self.shape {
            Shape::Interval => "iv",
            Shape::Scattered => "sc",
        };
        let theory = if self.hybrid { "bvfp" } else { "bv" };
        format!("{theory}_w{}_n{}_{shape}_s{}", self.width, self.count, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub name: String,
    pub spec: InstanceSpec,
    pub text: String,
    /// Inclusive, disjoint, sorted intervals whose union is the solution set.
    pub intervals: Vec<(u64, u64)>,
}

impl Instance {
    pub fn count(&self) -> u64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo + 1).sum()
    }

    pub fn solutions(&self) -> impl Iterator<Item = u128> + '_ {
        self.intervals.iter().flat_map(|&(lo, hi)| (lo..=hi).map(u128::from))
    }

    pub fn contains(&self, x: u64) -> bool {
        self.intervals.iter().any(|&(lo, hi)| lo <= x && x <= hi)
    }

    /// In-memory oracle over the solution set, projected on `x`.
    pub fn oracle(&self) -> MemoryOracle {
        let projection = ProjectionSet::single("x", self.spec.width).expect("width is positive");
        MemoryOracle::from_packed(projection, self.solutions()).expect("solutions fit the width")
    }
}

/// Panics if `count` exceeds `2^width` or `width` is outside `1..=63`.
pub fn generate_instance(spec: &InstanceSpec) -> Instance {
    assert!((1..=63).contains(&spec.width), "width {} out of range", spec.width);
    let domain = 1u64 << spec.width;
    assert!(spec.count <= domain, "{} solutions do not fit in width {}", spec.count, spec.width);
    let intervals = match spec.shape {
        Shape::Interval if spec.count == 0 => Vec::new(),
        Shape::Interval => vec![(0, spec.count - 1)],
        Shape::Scattered => scattered(spec, domain),
    };
    let w = spec.width;
    let mut text = String::new();
    let logic = if spec.hybrid { "QF_BVFP" } else { "QF_BV" };
    let _ = writeln!(text, "; projected-vars: x");
    let _ = writeln!(text, "; expected-count: {}", spec.count);
    let _ = writeln!(text, "(set-logic {logic})");
    let _ = writeln!(text, "(declare-fun x () (_ BitVec {w}))");
    if spec.hybrid {
        let _ = writeln!(text, "(declare-fun y () (_ FloatingPoint 8 24))");
    }
    let body = match intervals.as_slice() {
        [] => "false".to_string(),
        [(0, hi)] if spec.shape == Shape::Interval => format!("(bvult x {})", bin_literal(hi + 1, w)),
        ivs => {
            let parts: Vec<String> = ivs
                .iter()
                .map(|&(lo, hi)| {
                    if lo == hi {
                        format!("(= x {})", bin_literal(lo, w))
                    } else {
                        format!("(and (bvuge x {}) (bvule x {}))", bin_literal(lo, w), bin_literal(hi, w))
                    }
                })
                .collect();
            if parts.len() == 1 {
                parts.into_iter().next().unwrap()
            } else {
                format!("(or {})", parts.join(" "))
            }
        }
    };
    let _ = writeln!(text, "(assert {body})");
    if spec.hybrid {
        let _ = writeln!(text, "(assert (fp.gt y (_ +zero 8 24)))");
    }
    let _ = writeln!(text, "(check-sat)");
    let instance = Instance {
        name: spec.name(),
        spec: spec.clone(),
        text,
        intervals,
    };
    debug_assert_eq!(instance.count(), spec.count);
    instance
}

/// Splits `count` into a handful of runs placed at random, non-touching
/// positions.
fn scattered(spec: &InstanceSpec, domain: u64) -> Vec<(u64, u64)> {
    if spec.count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let free = domain - spec.count;
    let pieces = rng.gen_range(1..=8u64).min(spec.count).min(free + 1);
    // Cut the solutions into `pieces` nonempty runs.
    let mut cuts: Vec<u64> = sample(&mut rng, (spec.count - 1) as usize, (pieces - 1) as usize)
        .into_iter()
        .map(|c| c as u64 + 1)
        .collect();
    cuts.sort_unstable();
    let mut lengths = Vec::with_capacity(pieces as usize);
    let mut prev = 0;
    for c in cuts.into_iter().chain([spec.count]) {
        lengths.push(c - prev);
        prev = c;
    }
    // Distribute the non-solutions into pieces + 1 gaps, the inner ones
    // nonempty so runs never merge.
    let inner = pieces - 1;
    let spare = free - inner;
    let mut gaps = vec![0u64; pieces as usize + 1];
    let weights: Vec<u64> = (0..=pieces).map(|_| rng.gen_range(1..=100)).collect();
    let total: u64 = weights.iter().sum();
    let mut assigned = 0;
    for (g, w) in gaps.iter_mut().zip(&weights) {
        *g = (u128::from(spare) * u128::from(*w) / u128::from(total)) as u64;
        assigned += *g;
    }
    gaps[0] += spare - assigned;
    for g in &mut gaps[1..pieces as usize] {
        *g += 1;
    }
    let mut out = Vec::with_capacity(pieces as usize);
    let mut at = gaps[0];
    for (i, len) in lengths.into_iter().enumerate() {
        out.push((at, at + len - 1));
        at += len + gaps[i + 1];
    }
    out
}

/// `n` instances with counts drawn log-uniformly from `[lo, hi]`, alternating
/// shapes and mixing in hybrid ones.
pub fn generate_corpus(n: usize, width: u32, lo: u64, hi: u64, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let count = (rng.gen_range((lo as f64).ln()..=(hi as f64).ln())).exp().round() as u64;
            let mut spec = InstanceSpec::new(width, count.clamp(lo, hi));
            if i % 2 == 1 {
                spec = spec.scattered(rng.gen());
            }
            if i % 3 == 2 {
                spec = spec.hybrid();
            }
            let mut inst = generate_instance(&spec);
            inst.name = format!("{i:03}_{}", inst.name);
            inst
        })
        .collect()
}

/// Writes `<name>.smt2` for each instance plus an `instances.txt` list, and
/// returns the list's path.
pub fn write_corpus(dir: &Path, instances: &[Instance]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut list = String::new();
    for inst in instances {
        let file = format!("{}.smt2", inst.name);
        fs::write(dir.join(&file), &inst.text)?;
        list.push_str(&file);
        list.push('\n');
    }
    let path = dir.join("instances.txt");
    fs::write(&path, list)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smtlib::parse_declarations;

    #[test]
    fn interval_example() {
        let inst = generate_instance(&InstanceSpec::new(8, 20));
        assert!(inst.text.contains("(assert (bvult x #b00010100))"));
        assert_eq!(inst.count(), 20);
        let script = parse_declarations(&inst.text).unwrap();
        assert_eq!(script.projection_hint(), Some(&["x".to_string()][..]));
    }

    #[test]
    fn hybrid_example() {
        let inst = generate_instance(&InstanceSpec::new(8, 20).hybrid());
        assert!(inst.text.contains("(declare-fun y () (_ FloatingPoint 8 24))"));
        assert!(inst.text.contains("(assert (fp.gt y (_ +zero 8 24)))"));
        assert!(inst.text.contains("(set-logic QF_BVFP)"));
        parse_declarations(&inst.text).unwrap();
    }

    #[test]
    fn scattered_counts_by_brute_force() {
        for seed in 0..40 {
            for (width, count) in [(12, 1000), (8, 255), (8, 256), (6, 1), (10, 0), (4, 15)] {
                let inst = generate_instance(&InstanceSpec::new(width, count).scattered(seed));
                let brute = (0..1u64 << width).filter(|&x| inst.contains(x)).count() as u64;
                assert_eq!(brute, count, "seed {seed} width {width}");
                for pair in inst.intervals.windows(2) {
                    assert!(pair[0].1 + 1 < pair[1].0, "{:?}", inst.intervals);
                }
            }
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(20, 16, 100, 5000, 3);
        assert_eq!(a, generate_corpus(20, 16, 100, 5000, 3));
        assert!(a.iter().all(|i| (100..=5000).contains(&i.count())));
        let dir = tempfile::tempdir().unwrap();
        let list = write_corpus(dir.path(), &a).unwrap();
        assert_eq!(fs::read_to_string(list).unwrap().lines().count(), 20);
    }
}
