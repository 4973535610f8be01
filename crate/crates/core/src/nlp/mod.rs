//! Direct transcription and the SQP solver.

mod qp;
mod residuals;
mod solution;
mod sqp;
mod transcribe;

pub use residuals::{nco_residuals, ResidualReport};
pub use solution::{fmt_f64, Solution, SolverStats};
pub use sqp::{solve_trajectory, solve_trajectory_with, HessianMode, SolverOptions};
pub use transcribe::{
    default_quadrature, transcribe, transcribe_with, DiscreteNlp, PathRow, Quadrature,
    StageLinearization,
};

pub(crate) use transcribe::rk4;
