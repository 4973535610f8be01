use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::{solve_trajectory_with, Solution, SolverOptions, SolverStats};
use crate::ocp::{distance, Equilibrium, OcpProblem, TimeGrid};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitOptions {
    /// Intervals on `[0, T]`, distributed over the legs and the middle
    /// segment in proportion to their length.
    pub intervals: usize,
    pub solver: SolverOptions,
}

impl Default for SplitOptions {
    fn default() -> Self {
        SplitOptions {
            intervals: 500,
            solver: SolverOptions::default(),
        }
    }
}

/// State and input mismatches where the legs meet the turnpike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchJumps {
    /// `‖x₁(T₁) − x̄‖`
    pub entry_state: f64,
    /// `‖x̄ − x₂(0)‖`, zero unless the second leg is absent.
    pub leaving_state: f64,
    pub entry_input: f64,
    pub leaving_input: f64,
}

/// `total = leg1 + middle + leg2` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSplit {
    pub leg1: f64,
    /// `(T − T₁ − T₂)·ℓ(x̄,ū)`
    pub middle: f64,
    /// Second-leg objective, or `φ(x̄)` without a second leg.
    pub leg2: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSolution {
    /// Stitched trajectory on `[0, T]`.
    pub solution: Solution,
    pub leg1: Solution,
    pub leg2: Option<Solution>,
    pub jumps: StitchJumps,
    pub cost: CostSplit,
}

fn leg_intervals(total: usize, length: f64, horizon: f64) -> usize {
    ((total as f64 * length / horizon).round() as usize).max(2)
}

/// Solves the approach leg on `[0, T₁]` into `x̄`, holds `(x̄, ū)` and solves
/// the leaving leg on `[0, T₂]` from `x̄` with the original terminal data.
///
/// `T₂ = 0` skips the leaving leg: the turnpike is held up to `T` and only
/// `φ(x̄)` is charged at the end.
pub fn split_solve(
    problem: &OcpProblem,
    eq: &Equilibrium,
    t1: f64,
    t2: f64,
    opts: &SplitOptions,
) -> Result<SplitSolution> {
    problem.check_point(&eq.x_bar, &eq.u_bar)?;
    let horizon = problem.horizon;
    if !(t1 > 0.0) || !(t2 >= 0.0) || !(t1 + t2 < horizon) {
        return Err(Error::invalid(
            "split",
            "need T₁ > 0, T₂ ≥ 0 and T₁ + T₂ < T",
        ));
    }
    let (x_bar, u_bar) = (&eq.x_bar, &eq.u_bar);
    let steady = problem.l(x_bar, u_bar);
    let n = opts.intervals.max(4);

    let leg_problem = problem.with_terminal_state(x_bar).with_horizon(t1);
    let grid1 = TimeGrid::uniform(t1, leg_intervals(n, t1, horizon))?;
    let leg1 = solve_trajectory_with(&leg_problem, &grid1, None, &opts.solver).map_err(|e| {
        Error::SplitLeg {
            leg: 1,
            source: Box::new(e),
        }
    })?;

    let leg2 = if t2 > 0.0 {
        let p2 = problem
            .clone()
            .with_initial_state(x_bar.clone())
            .with_horizon(t2);
        let grid2 = TimeGrid::uniform(t2, leg_intervals(n, t2, horizon))?;
        let guess = Solution::constant(&p2, &grid2, eq)?;
        Some(
            solve_trajectory_with(&p2, &grid2, Some(&guess), &opts.solver).map_err(|e| {
                Error::SplitLeg {
                    leg: 2,
                    source: Box::new(e),
                }
            })?,
        )
    } else {
        if problem.psi(x_bar).iter().enumerate().any(|(r, v)| {
            if problem.terminal_equalities.contains(&r) {
                v.abs() > 1e-8
            } else {
                *v > 1e-8
            }
        }) {
            return Err(Error::invalid(
                "split",
                "x̄ violates the terminal constraints",
            ));
        }
        None
    };

    let middle_len = horizon - t1 - t2;
    let m = leg_intervals(n, middle_len, horizon);
    let mut nodes = leg1.grid.nodes().to_vec();
    for j in 1..=m {
        nodes.push(if j == m {
            t1 + middle_len
        } else {
            t1 + middle_len * j as f64 / m as f64
        });
    }
    let mut states = leg1.states.clone();
    states.extend(std::iter::repeat_n(x_bar.clone(), m));
    let mut inputs = leg1.inputs.clone();
    inputs.extend(std::iter::repeat_n(u_bar.clone(), m));
    let n1 = leg1.grid.intervals();
    let mut adjoints = leg1.adjoints.clone();
    let mut multipliers: Vec<Vec<f64>> = leg1.multipliers.iter().take(n1).cloned().collect();
    adjoints.extend(std::iter::repeat_n(eq.lambda_bar.clone(), m));
    multipliers.extend(std::iter::repeat_n(eq.mu_bar.clone(), m + 1));
    let mut terminal_multipliers = vec![0.0; problem.terminal_dim];
    let mut stats = leg1.stats.clone();
    let mut tolerance = leg1.solver_tolerance;

    if let Some(l2) = &leg2 {
        let offset = horizon - t2;
        nodes.pop();
        nodes.extend(l2.grid.nodes().iter().map(|t| offset + t));
        let last = nodes.len() - 1;
        nodes[last] = horizon;
        states.pop();
        states.extend(l2.states.iter().cloned());
        inputs.extend(l2.inputs.iter().cloned());
        adjoints.pop();
        adjoints.extend(l2.adjoints.iter().cloned());
        multipliers.pop();
        multipliers.extend(l2.multipliers.iter().cloned());
        terminal_multipliers = l2.terminal_multipliers.clone();
        stats = merge_stats(&stats, &l2.stats);
        tolerance = tolerance.max(l2.solver_tolerance);
    }
    if leg1.adjoints.is_empty() || leg2.as_ref().is_some_and(|l| l.adjoints.is_empty()) {
        adjoints.clear();
    }
    if multipliers.len() != states.len() {
        multipliers.clear();
    }

    let cost = CostSplit {
        leg1: leg1.objective,
        middle: middle_len * steady,
        leg2: leg2
            .as_ref()
            .map_or_else(|| problem.phi(x_bar), |l| l.objective),
        total: 0.0,
    };
    let cost = CostSplit {
        total: cost.leg1 + cost.middle + cost.leg2,
        ..cost
    };
    let jumps = StitchJumps {
        entry_state: distance(leg1.final_state(), x_bar),
        leaving_state: leg2.as_ref().map_or(0.0, |l| distance(x_bar, &l.states[0])),
        entry_input: distance(leg1.inputs.last().unwrap(), u_bar),
        leaving_input: leg2.as_ref().map_or(0.0, |l| distance(u_bar, &l.inputs[0])),
    };
    let solution = Solution {
        problem: problem.name.clone(),
        time_mode: problem.time_mode,
        grid: TimeGrid::new(nodes)?,
        states,
        inputs,
        adjoints,
        multipliers,
        terminal_multipliers,
        quadrature: leg1.quadrature,
        objective: cost.total,
        solver_tolerance: tolerance,
        stats,
    };
    Ok(SplitSolution {
        solution,
        leg1,
        leg2,
        jumps,
        cost,
    })
}

fn merge_stats(a: &SolverStats, b: &SolverStats) -> SolverStats {
    SolverStats {
        iterations: a.iterations + b.iterations,
        qp_iterations: a.qp_iterations + b.qp_iterations,
        elastic_iterations: a.elastic_iterations + b.elastic_iterations,
        stationarity: a.stationarity.max(b.stationarity),
        feasibility: a.feasibility.max(b.feasibility),
        complementarity: a.complementarity.max(b.complementarity),
    }
}
