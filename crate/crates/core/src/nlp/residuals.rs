use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::Solution;
use crate::error::Result;
use crate::ocp::{hamiltonian, OcpProblem, TimeMode};

/// Maxima of the first-order optimality residuals along a solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `max |H_u|`
    pub stationarity: f64,
    /// Adjoint recursion (discrete) or `λ̇ + H_x` (continuous, midpoint form).
    pub adjoint: f64,
    /// `max |μᵢ gᵢ|`
    pub complementarity: f64,
    /// Most negative multiplier, reported as a nonnegative number.
    pub dual_infeasibility: f64,
    /// `|λ(T) − φ_x − ψ_xᵀν|`, including state rows active at the final node.
    pub transversality: f64,
    /// `max H − min H` over the intervals (continuous mode only).
    pub hamiltonian_variation: Option<f64>,
}

fn amax(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Evaluates the optimality conditions on `solution`.
///
/// Discrete problems are checked exactly. In continuous mode the conditions
/// are evaluated at interval midpoints with `λ̇` by differences, so the
/// residuals of a transcribed solution shrink with the grid spacing.
pub fn nco_residuals(problem: &OcpProblem, solution: &Solution) -> Result<ResidualReport> {
    solution.check_compatible(problem)?;
    crate::error::check_dim(
        "solution.adjoints",
        solution.states.len(),
        solution.adjoints.len(),
    )?;
    crate::error::check_dim(
        "solution.multipliers",
        solution.states.len(),
        solution.multipliers.len(),
    )?;
    let n_int = solution.inputs.len();
    let grid = &solution.grid;
    let mut stationarity: f64 = 0.0;
    let mut adjoint: f64 = 0.0;
    let mut h_min = f64::INFINITY;
    let mut h_max = f64::NEG_INFINITY;

    for k in 0..n_int {
        let u = &solution.inputs[k];
        let mu = DVector::from_column_slice(&solution.multipliers[k]);
        match problem.time_mode {
            TimeMode::Discrete => {
                let x = &solution.states[k];
                let lam_next = DVector::from_column_slice(&solution.adjoints[k + 1]);
                let su = DVector::from_vec(problem.l_u(x, u))
                    + problem.f_u(x, u).tr_mul(&lam_next)
                    + problem.g_u(x, u).tr_mul(&mu);
                let rec = DVector::from_vec(problem.l_x(x, u))
                    + problem.f_x(x, u).tr_mul(&lam_next)
                    + problem.g_x(x, u).tr_mul(&mu)
                    - DVector::from_column_slice(&solution.adjoints[k]);
                stationarity = stationarity.max(amax(&su));
                adjoint = adjoint.max(amax(&rec));
            }
            TimeMode::Continuous => {
                let h = grid.step(k);
                let mid = |a: &[f64], b: &[f64]| -> Vec<f64> {
                    a.iter().zip(b).map(|(p, q)| 0.5 * (p + q)).collect()
                };
                let xm = mid(&solution.states[k], &solution.states[k + 1]);
                let lm = mid(&solution.adjoints[k], &solution.adjoints[k + 1]);
                let lam = DVector::from_column_slice(&lm);
                let su = DVector::from_vec(problem.l_u(&xm, u))
                    + problem.f_u(&xm, u).tr_mul(&lam)
                    + problem.g_u(&xm, u).tr_mul(&mu);
                let lam_dot = (DVector::from_column_slice(&solution.adjoints[k + 1])
                    - DVector::from_column_slice(&solution.adjoints[k]))
                    / h;
                let rec = lam_dot
                    + DVector::from_vec(problem.l_x(&xm, u))
                    + problem.f_x(&xm, u).tr_mul(&lam)
                    + problem.g_x(&xm, u).tr_mul(&mu);
                stationarity = stationarity.max(amax(&su));
                adjoint = adjoint.max(amax(&rec));
                let mu_pos: Vec<f64> = mu.iter().map(|v| v.max(0.0)).collect();
                let hv = hamiltonian(problem, &xm, u, &lm, &mu_pos)?;
                h_min = h_min.min(hv);
                h_max = h_max.max(hv);
            }
        }
    }

    let mut complementarity: f64 = 0.0;
    let mut dual_infeasibility: f64 = 0.0;
    for (k, mu) in solution.multipliers.iter().enumerate() {
        if problem.path_dim == 0 {
            break;
        }
        let g = problem.g(&solution.states[k], solution.node_input(k));
        for (r, (&gi, &mi)) in g.iter().zip(mu).enumerate() {
            let imposed = k < n_int
                || (problem.time_mode == TimeMode::Continuous && problem.state_rows.contains(&r));
            if imposed {
                complementarity = complementarity.max((gi * mi).abs());
            }
            dual_infeasibility = dual_infeasibility.max(-mi);
        }
    }
    for (r, &nu) in solution.terminal_multipliers.iter().enumerate() {
        if !problem.terminal_equalities.contains(&r) {
            dual_infeasibility = dual_infeasibility.max(-nu);
            let psi = problem.psi(solution.final_state());
            complementarity = complementarity.max((psi[r] * nu).abs());
        }
    }

    let x_t = solution.final_state();
    let mut expected = DVector::from_vec(problem.phi_x(x_t));
    if problem.terminal_dim > 0 {
        expected += problem
            .psi_x(x_t)
            .tr_mul(&DVector::from_column_slice(&solution.terminal_multipliers));
    }
    if problem.path_dim > 0 && problem.time_mode == TimeMode::Continuous {
        let h = grid.step(n_int - 1);
        let raw: Vec<f64> = solution.multipliers[n_int]
            .iter()
            .enumerate()
            .map(|(r, v)| {
                if problem.state_rows.contains(&r) {
                    v * h
                } else {
                    0.0
                }
            })
            .collect();
        expected += problem
            .g_x(x_t, solution.node_input(n_int))
            .tr_mul(&DVector::from_vec(raw));
    }
    let transversality = amax(&(DVector::from_column_slice(&solution.adjoints[n_int]) - expected));

    Ok(ResidualReport {
        stationarity,
        adjoint,
        complementarity,
        dual_infeasibility,
        transversality,
        hamiltonian_variation: match problem.time_mode {
            TimeMode::Continuous => Some(h_max - h_min),
            TimeMode::Discrete => None,
        },
    })
}
