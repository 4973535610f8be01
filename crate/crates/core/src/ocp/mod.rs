//! Problem model shared by every other module: the optimal control problem,
//! time grids, controlled equilibria and the Hamiltonian.
//!
//! Sign conventions follow `H = ℓ + λᵀf + μᵀg`. In discrete time the
//! costate attached to `x(t+1) = f(x(t), u(t))` is indexed `λ(t+1)`, so the
//! adjoint recursion reads `λ(t) = f_xᵀλ(t+1) + ℓ_x + g_xᵀμ(t)` with
//! `λ(T) = φ_x + ψ_xᵀμ(T)`. With this convention `λ(t)` is the gradient of
//! the optimal cost-to-go with respect to `x(t)`.

mod equilibrium;
pub mod fd;
mod grid;
mod problem;

use serde::{Deserialize, Serialize};

pub use equilibrium::{
    hamiltonian, solve_steady_state, solve_steady_state_with, Equilibrium, SteadyStateOptions,
};
pub use grid::TimeGrid;
pub use problem::{
    Derivatives, MatrixMap, OcpProblem, ScalarMap, TerminalMatrix, TerminalScalar, TerminalVector,
    TimeMode, VectorMap,
};

use crate::error::{Error, Result};

/// Class-K∞ representative `r ↦ c·rᵖ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KFunction {
    pub coefficient: f64,
    pub exponent: f64,
}

impl KFunction {
    pub fn new(coefficient: f64, exponent: f64) -> Result<Self> {
        if !(coefficient > 0.0) || !coefficient.is_finite() {
            return Err(Error::invalid("coefficient", "must be positive"));
        }
        if !(exponent >= 1.0) || !exponent.is_finite() {
            return Err(Error::invalid("exponent", "must be at least 1"));
        }
        Ok(KFunction {
            coefficient,
            exponent,
        })
    }

    pub fn eval(&self, r: f64) -> f64 {
        self.coefficient * r.max(0.0).powf(self.exponent)
    }

    pub fn with_coefficient(&self, coefficient: f64) -> Result<Self> {
        KFunction::new(coefficient, self.exponent)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p - q).powi(2))
        .sum::<f64>()
        .sqrt()
}
