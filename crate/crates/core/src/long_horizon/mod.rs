//! Long-horizon strategies built on the turnpike: splitting the horizon at
//! the equilibrium, receding-horizon control and coarse late-horizon grids.

mod coarsen;
mod mpc;
mod split;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nlp::{fmt_f64, Solution, SolverStats};
use crate::ocp::distance;

pub use coarsen::{coarsened_grid, coarsened_grid_with, Coarsening};
pub use mpc::{mpc_run, MpcOptions};
pub use split::{split_solve, CostSplit, SplitOptions, SplitSolution, StitchJumps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcHorizon {
    /// Shrinking predictions, terminal cost charged at `T`.
    Finite(f64),
    /// Fixed prediction length; the loop stops after `window` without a
    /// terminal cost.
    Infinite { window: f64 },
}

impl MpcHorizon {
    pub fn end(&self) -> f64 {
        match *self {
            MpcHorizon::Finite(t) => t,
            MpcHorizon::Infinite { window } => window,
        }
    }
}

impl Default for MpcHorizon {
    fn default() -> Self {
        MpcHorizon::Infinite { window: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub start: f64,
    pub prediction_horizon: f64,
    pub objective: f64,
    pub stats: SolverStats,
}

/// Closed-loop trajectory of a receding-horizon run.
///
/// `inputs[k]` is held on `[times[k], times[k+1]]` and `step_costs[k]` is its
/// running cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoop {
    pub delta: f64,
    pub t_opt: f64,
    pub horizon: MpcHorizon,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub step_costs: Vec<f64>,
    pub terminal_cost: f64,
    pub total_cost: f64,
    pub steps: Vec<StepRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub open_loop: Vec<Solution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopSummary {
    pub total_cost: f64,
    pub terminal_cost: f64,
    /// Entry into the `eps`-ball, see [`ClosedLoop::summary`].
    pub entry_time: Option<f64>,
    pub steps: Vec<StepRecord>,
}

impl ClosedLoop {
    /// First node time from which the state stays within `eps` of `x_bar`
    /// up to `until`.
    pub fn entry_time(&self, x_bar: &[f64], eps: f64, until: f64) -> Option<f64> {
        let mut entry = None;
        for (t, x) in self.times.iter().zip(&self.states) {
            if *t > until + 1e-12 {
                break;
            }
            if distance(x, x_bar) <= eps {
                entry.get_or_insert(*t);
            } else {
                entry = None;
            }
        }
        entry
    }

    /// Running cost over the intervals inside `[from, to]` divided by their
    /// total length.
    pub fn average_stage_cost(&self, from: f64, to: f64) -> Option<f64> {
        let tol = 1e-9 * to.abs().max(1.0);
        let (mut cost, mut length) = (0.0, 0.0);
        for (k, c) in self.step_costs.iter().enumerate() {
            let (a, b) = (self.times[k], self.times[k + 1]);
            if a >= from - tol && b <= to + tol {
                cost += c;
                length += b - a;
            }
        }
        (length > 0.0).then(|| cost / length)
    }

    /// Header `t,x0..,u0..,cost`; the last row repeats the last input and
    /// carries the terminal cost.
    pub fn to_csv(&self) -> String {
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for i in 0..n {
            let _ = write!(out, ",x{i}");
        }
        for j in 0..m {
            let _ = write!(out, ",u{j}");
        }
        out.push_str(",cost\n");
        for (k, x) in self.states.iter().enumerate() {
            out.push_str(&fmt_f64(self.times[k]));
            for v in x {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            if let Some(u) = self.inputs.get(k).or(self.inputs.last()) {
                for v in u {
                    let _ = write!(out, ",{}", fmt_f64(*v));
                }
            }
            let cost = self
                .step_costs
                .get(k)
                .copied()
                .unwrap_or(self.terminal_cost);
            let _ = writeln!(out, ",{}", fmt_f64(cost));
        }
        out
    }

    /// Costs, per-step records and the entry time into the `eps`-ball around
    /// `x_bar`. With a finite horizon the loop may leave the ball once the
    /// predictions shrink, so staying is only required up to `T − T_opt`.
    pub fn summary(&self, x_bar: Option<&[f64]>, eps: f64) -> ClosedLoopSummary {
        let end = self.times.last().copied().unwrap_or(0.0);
        let until = match self.horizon {
            MpcHorizon::Finite(_) => end - self.t_opt,
            MpcHorizon::Infinite { .. } => end,
        };
        ClosedLoopSummary {
            total_cost: self.total_cost,
            terminal_cost: self.terminal_cost,
            entry_time: x_bar.and_then(|x| self.entry_time(x, eps, until)),
            steps: self.steps.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
