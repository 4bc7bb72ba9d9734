//! Simulation study and timing harness.

pub mod bench;
pub mod response;
pub mod scenario;

pub use bench::{bench_scaling, BenchMethod, BenchOptions, BenchRecord, BenchReport};
pub use response::{gen_covariates, CovariateSpec, ResponseFunction, ResponseModel};
pub use scenario::{run_grid, run_scenario, GridSpec, GridTable, ScenarioResult, ScenarioSpec};
