//! Projected approximate model counting for SMT formulas over bitvectors,
//! with an enumeration baseline and a benchmark harness.

pub mod baseline;
pub mod counter;
pub mod harness;
pub mod hashgen;
pub mod oracle;
pub mod parallel;
pub mod sexpr;
pub mod smtlib;

pub use baseline::{enumerate_count, BaselineCount, BaselineResult};
pub use counter::{pact_count, CountParams, CountResult, CounterError};
pub use hashgen::HashFamily;
pub use oracle::{MemoryOracle, Oracle, SubprocessOracle};
pub use smtlib::{ProjectionSet, SmtScript};
