#![no_std]
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::type_complexity,
    clippy::needless_range_loop
)]
extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod decomposition;
pub mod driver;
pub mod envelope;
pub mod error;
pub mod girsanov;
pub mod harness;
pub mod ode;
pub mod regression;
pub mod solver;
pub mod stats;
pub mod stochastic;

pub use driver::{Driver, Modulus, TerminalCondition};
pub use error::{Error, Result};
pub use harness::{run_convergence, run_girsanov_pair, run_uniqueness_probe, ConvergenceReport, ExperimentConfig};
pub use solver::{solve_bsde, SolutionPair};
pub use stochastic::{AdaptedProcess, PathEnsemble, Shape, StoppingTime, TimeGrid};
