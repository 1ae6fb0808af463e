//! Constant ledger, bound suites and hypothesis/obstruction checks.

mod area;
mod bounds;
mod hypotheses;
mod ledger;

pub use ledger::{build_ledger, ConstantLedger, LedgerError, LEDGER_KEYS};
pub use hypotheses::{hypothesis_report, HypothesisClause, HypothesisConfig, HypothesisReport, LipschitzReport};
pub use area::{area_obstruction, circle_loop, shoelace, AreaError, AreaReport, AreaVerdict};
pub use bounds::{run_bound_suite, BoundRecord, BoundReport, Site, SuiteConfig, SuiteError, CLAUSES};
