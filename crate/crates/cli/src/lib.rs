//! Configuration, gallery and artifact plumbing behind the `symplext` binary.

pub mod config;
pub mod gallery;
pub mod report;
pub mod run;

pub use config::{ConfigError, RunConfig};
pub use run::{run_check, run_extend, run_gallery, run_verify, Outcome, EXIT_CONFIG, EXIT_HYPOTHESIS, EXIT_NUMERIC, EXIT_OK};
