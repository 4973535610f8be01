//! Finite-horizon optimal control by direct transcription, with tools to
//! detect, classify, certify and exploit turnpike behavior of the optimal
//! solutions.
//!
//! The crate is organized by task:
//!
//! * [`ocp`]: problem model, time grids, steady states and the Hamiltonian.
//! * [`nlp`]: transcription, the SQP solver and optimality residuals.
//! * [`analysis`]: exit sets, `ν(ε)` tables, exponential fits, verdicts.
//! * [`dissipativity`]: storage functions and dissipation inequalities.
//! * [`long_horizon`]: horizon splitting, receding-horizon control and
//!   coarsened grids.
//! * [`benchmarks`]: the fish-harvest and scalar LQ reference problems.
//! * [`config`]: the JSON problem dialect.

pub mod analysis;
pub mod benchmarks;
pub mod config;
pub mod dissipativity;
mod error;
pub mod long_horizon;
pub mod nlp;
pub mod ocp;

pub use error::{Error, IterateResiduals, Result};

/// Version of this crate, stamped into emitted files.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
