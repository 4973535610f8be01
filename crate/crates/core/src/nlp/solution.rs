use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Quadrature;
use crate::error::{Error, Result};
use crate::ocp::{Equilibrium, OcpProblem, TimeGrid, TimeMode};

/// Iteration statistics of one solve.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub iterations: usize,
    pub qp_iterations: usize,
    /// Iterations that needed the elastic (softened) subproblem.
    pub elastic_iterations: usize,
    pub stationarity: f64,
    pub feasibility: f64,
    pub complementarity: f64,
}

/// Primal-dual trajectories of a transcribed problem.
///
/// `states`, `adjoints` and `multipliers` are given at all `N + 1` nodes,
/// `inputs` on the `N` intervals. Multipliers at node `k` belong to
/// `g(x_k, u_k)`; at the last node only state-only rows are imposed in
/// continuous mode, and nothing in discrete mode. In continuous mode the
/// multipliers are densities (transcription multiplier divided by the
/// interval length) and the adjoints approximate the continuous costate to
/// the order of the grid spacing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub problem: String,
    pub time_mode: TimeMode,
    pub grid: TimeGrid,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub adjoints: Vec<Vec<f64>>,
    pub multipliers: Vec<Vec<f64>>,
    /// Multipliers of `ψ`, in row order.
    pub terminal_multipliers: Vec<f64>,
    /// Running-cost rule the objective was computed with.
    pub quadrature: Quadrature,
    pub objective: f64,
    pub solver_tolerance: f64,
    pub stats: SolverStats,
}

impl Solution {
    /// The constant trajectory at an equilibrium, with steady multipliers.
    pub fn constant(problem: &OcpProblem, grid: &TimeGrid, eq: &Equilibrium) -> Result<Self> {
        let nlp = super::transcribe(problem, grid)?;
        let n_nodes = grid.intervals() + 1;
        let states = vec![eq.x_bar.clone(); n_nodes];
        let inputs = vec![eq.u_bar.clone(); grid.intervals()];
        let mut multipliers = vec![eq.mu_bar.clone(); n_nodes];
        let last = multipliers.last_mut().unwrap();
        for (r, v) in last.iter_mut().enumerate() {
            if problem.time_mode == TimeMode::Discrete || !problem.state_rows.contains(&r) {
                *v = 0.0;
            }
        }
        Ok(Solution {
            problem: problem.name.clone(),
            time_mode: problem.time_mode,
            grid: grid.clone(),
            objective: nlp.objective(&states, &inputs),
            states,
            inputs,
            adjoints: vec![eq.lambda_bar.clone(); n_nodes],
            multipliers,
            terminal_multipliers: vec![0.0; problem.terminal_dim],
            quadrature: nlp.quadrature(),
            solver_tolerance: 0.0,
            stats: SolverStats::default(),
        })
    }

    pub fn horizon(&self) -> f64 {
        self.grid.horizon()
    }

    pub fn nodes(&self) -> usize {
        self.states.len()
    }

    /// Input paired with the state at `node` (left interval value).
    pub fn node_input(&self, node: usize) -> &[f64] {
        &self.inputs[node.min(self.inputs.len() - 1)]
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }

    /// Linear interpolation of the state at time `t`.
    pub fn state_at(&self, t: f64) -> Vec<f64> {
        let k = self.grid.interval_of(t);
        let (t0, t1) = (self.grid.nodes()[k], self.grid.nodes()[k + 1]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        self.states[k]
            .iter()
            .zip(&self.states[k + 1])
            .map(|(a, b)| a + w * (b - a))
            .collect()
    }

    /// The part of the trajectory from node `from` on, shifted to start at
    /// zero. Meant as a warm start; the objective is left as `NaN`.
    pub(crate) fn tail(&self, from: usize) -> Result<Solution> {
        if from + 1 >= self.states.len() {
            return Err(Error::invalid("from", "tail needs at least one interval"));
        }
        Ok(Solution {
            grid: self.grid.tail(from)?,
            states: self.states[from..].to_vec(),
            inputs: self.inputs[from..].to_vec(),
            adjoints: self
                .adjoints
                .get(from..)
                .map(<[_]>::to_vec)
                .unwrap_or_default(),
            multipliers: self
                .multipliers
                .get(from..)
                .map(<[_]>::to_vec)
                .unwrap_or_default(),
            objective: f64::NAN,
            ..self.clone()
        })
    }

    pub fn check_compatible(&self, problem: &OcpProblem) -> Result<()> {
        crate::error::check_dim(
            "solution.states",
            self.grid.intervals() + 1,
            self.states.len(),
        )?;
        crate::error::check_dim("solution.inputs", self.grid.intervals(), self.inputs.len())?;
        for x in &self.states {
            crate::error::check_dim("solution.states", problem.state_dim, x.len())?;
        }
        for u in &self.inputs {
            crate::error::check_dim("solution.inputs", problem.input_dim, u.len())?;
        }
        if self.time_mode != problem.time_mode {
            return Err(Error::invalid(
                "solution",
                "time mode differs from the problem",
            ));
        }
        Ok(())
    }

    /// CSV with columns `t, x…, u…, lambda…, mu…`; the last row repeats the
    /// final input.
    pub fn to_csv(&self) -> String {
        let n = self.states[0].len();
        let m = self.inputs[0].len();
        let l = self.adjoints.first().map_or(0, Vec::len);
        let p = self.multipliers.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for (name, count) in [("x", n), ("u", m), ("lambda", l), ("mu", p)] {
            for i in 0..count {
                let _ = write!(out, ",{name}{i}");
            }
        }
        out.push('\n');
        for (k, t) in self.grid.nodes().iter().enumerate() {
            out.push_str(&fmt_f64(*t));
            let row = self.states[k]
                .iter()
                .chain(self.node_input(k))
                .chain(self.adjoints.get(k).into_iter().flatten())
                .chain(self.multipliers.get(k).into_iter().flatten());
            for v in row {
                out.push(',');
                out.push_str(&fmt_f64(*v));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Fixed 17-significant-digit formatting used by every CSV writer.
pub fn fmt_f64(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    format!("{v:.16e}")
}
