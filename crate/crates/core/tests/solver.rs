mod common;

use std::collections::BTreeSet;

use pact_core::baseline::{enumerate_count, BaselineCount};
use pact_core::hashgen::{generate_hash, HashFamily};
use pact_core::oracle::{MemoryOracle, Oracle, ProjectedModel, SatResult, SubprocessOracle};
use pact_core::smtlib::{parse_declarations, resolve_projection, Assertion};
use pact_core::{pact_count, CountParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

macro_rules! require_solver {
    () => {
        match common::solver() {
            Some(s) => s,
            None => {
                eprintln!("no SMT solver found; skipping");
                return;
            }
        }
    };
}

fn open(text: &str, vars: &[&str]) -> SubprocessOracle {
    let script = parse_declarations(text).unwrap();
    let names: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
    let projection = resolve_projection(&script, &names).unwrap();
    SubprocessOracle::open(require_solver_config(), &script, projection).unwrap()
}

fn require_solver_config() -> pact_core::oracle::SolverConfig {
    common::solver().expect("checked by caller")
}

fn baseline(o: &mut dyn Oracle) -> BaselineCount {
    enumerate_count(o, None, None).unwrap().count
}

#[test]
fn baseline_examples() {
    require_solver!();
    let mut o = open("(declare-fun x () (_ BitVec 4))\n(assert (bvult x #b0101))\n", &["x"]);
    assert_eq!(baseline(&mut o), BaselineCount::Exact(5));

    let mut o = open("(declare-fun x () (_ BitVec 4))\n(assert (bvult x #b0000))\n", &["x"]);
    assert_eq!(baseline(&mut o), BaselineCount::Exact(0));

    let mut o = open(
        "(set-logic ALL)\n(declare-fun x () (_ BitVec 4))\n(declare-fun y () Real)\n\
         (assert (bvult x #b0011))\n(assert (> y 0.0))\n(check-sat)\n(get-model)\n",
        &["x"],
    );
    assert_eq!(baseline(&mut o), BaselineCount::Exact(3));
    assert_eq!(o.depth(), 0);
}

const TWO_VARS: &str = "(declare-fun x () (_ BitVec 6))\n(declare-fun y () (_ BitVec 5))\n\
                        (assert (bvult (bvadd ((_ zero_extend 1) y) x) #b101101))\n";

/// Solutions of `TWO_VARS`, packed with `x` low.
fn two_var_solutions() -> Vec<u128> {
    let mut out = Vec::new();
    for x in 0u32..64 {
        for y in 0u32..32 {
            if (x + y) % 64 < 45 {
                out.push(u128::from(x | (y << 6)));
            }
        }
    }
    out
}

fn models(o: &mut dyn Oracle) -> BTreeSet<ProjectedModel> {
    let mut seen = BTreeSet::new();
    o.push().unwrap();
    while o.check_sat().unwrap() == SatResult::Sat {
        let m = o.projected_model().unwrap();
        assert!(seen.insert(m.clone()), "model repeated");
        o.assert_constraint(Assertion::Block(&pact_core::oracle::BlockingClause::new(m))).unwrap();
    }
    o.pop().unwrap();
    seen
}

/// Every rendered hash constraint selects the same cell in the solver as
/// the in-memory evaluation does.
#[test]
fn hashes_agree_with_memory_oracle() {
    require_solver!();
    let mut solver = open(TWO_VARS, &["x", "y"]);
    let projection = solver.projection().clone();
    let mut memory = MemoryOracle::from_packed(projection.clone(), two_var_solutions()).unwrap();
    assert_eq!(models(&mut solver), models(&mut memory));
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for family in [HashFamily::Xor, HashFamily::Prime, HashFamily::Shift] {
        for ell in [1, 2, 3, 4] {
            if family == HashFamily::Xor && ell > 1 {
                continue;
            }
            solver.push().unwrap();
            memory.push().unwrap();
            for _ in 0..2 {
                let h = generate_hash(&projection, ell, family, &mut rng);
                solver.assert_constraint(Assertion::Hash(&h)).unwrap();
                memory.assert_constraint(Assertion::Hash(&h)).unwrap();
            }
            let want = models(&mut memory);
            assert_eq!(models(&mut solver), want, "{family} ell {ell}");
            assert_eq!(solver.check_sat().unwrap() == SatResult::Sat, !want.is_empty());
            solver.pop().unwrap();
            memory.pop().unwrap();
        }
    }
}

#[test]
fn count_through_solver() {
    require_solver!();
    let mut o = open(
        "(declare-fun x () (_ BitVec 10))\n(assert (bvult x #b0100101100))\n",
        &["x"],
    );
    let r = pact_count(&mut o, &CountParams::new(0.8, 0.2, HashFamily::Xor), 5).unwrap();
    let est: f64 = r.estimate.to_string().parse().unwrap();
    assert!((300.0 / 1.8..=300.0 * 1.8).contains(&est), "{est}");
    assert!(!r.exact);
    assert_eq!(o.depth(), 0);
}

#[test]
fn query_timeout_restarts_and_replays() {
    let mut config = require_solver!();
    config.query_timeout = Some(std::time::Duration::from_millis(1));
    let script = parse_declarations(TWO_VARS).unwrap();
    let projection = resolve_projection(&script, &["x".into(), "y".into()]).unwrap();
    let mut o = SubprocessOracle::open(config, &script, projection).unwrap();
    o.push().unwrap();
    o.assert_text("(assert (= x #b000011))").unwrap();
    // Whether or not this first check beats the 1 ms budget, the session
    // must stay usable with its frames intact.
    let first = o.check_sat().unwrap();
    assert!(matches!(first, SatResult::Sat | SatResult::Timeout));
    o.set_query_timeout(None);
    assert_eq!(o.check_sat().unwrap(), SatResult::Sat);
    assert_eq!(o.depth(), 1);
    let m = o.projected_model().unwrap();
    assert_eq!(m.values()[0], 3u32.into());
    o.pop().unwrap();
    assert_eq!(o.depth(), 0);
}
