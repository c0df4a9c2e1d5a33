#![allow(dead_code)]

use pact_core::oracle::{SolverConfig, SOLVER_ENV};

fn on_path(bin: &str) -> bool {
    std::env::var_os("PATH").is_some_and(|paths| std::env::split_paths(&paths).any(|d| d.join(bin).is_file()))
}

/// `$PACT_SOLVER_CMD`, else cvc5, else z3, else `None`.
pub fn solver() -> Option<SolverConfig> {
    if let Ok(cmd) = std::env::var(SOLVER_ENV) {
        return Some(SolverConfig::new(cmd));
    }
    if on_path("cvc5") {
        return Some(SolverConfig::new("cvc5 --incremental --produce-models"));
    }
    on_path("z3").then(|| SolverConfig::new("z3 -in -smt2"))
}
