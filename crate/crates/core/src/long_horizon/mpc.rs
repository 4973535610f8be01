use log::debug;
use serde::{Deserialize, Serialize};

use super::coarsen::{coarsened_grid_with, Coarsening};
use super::{ClosedLoop, MpcHorizon, StepRecord};
use crate::error::{Error, Result};
use crate::nlp::{rk4, solve_trajectory_with, transcribe, Solution, SolverOptions};
use crate::ocp::{Equilibrium, OcpProblem, TimeGrid, TimeMode};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcOptions {
    /// Intervals of each prediction grid (continuous time).
    pub intervals: usize,
    pub coarsening: Option<Coarsening>,
    /// Impose `x(T_opt) = x̄` in every prediction.
    pub terminal_equality: bool,
    /// Keep every open-loop solution in the result.
    pub keep_open_loop: bool,
    pub solver: SolverOptions,
}

impl Default for MpcOptions {
    fn default() -> Self {
        MpcOptions {
            intervals: 50,
            coarsening: None,
            terminal_equality: false,
            keep_open_loop: false,
            solver: SolverOptions::default(),
        }
    }
}

/// Shrunken predictions that cannot be coarsened fall back to the uniform
/// grid.
fn prediction_grid(mode: TimeMode, t_pred: f64, delta: f64, opts: &MpcOptions) -> Result<TimeGrid> {
    match (mode, &opts.coarsening) {
        (TimeMode::Discrete, _) => TimeGrid::discrete(t_pred.round() as usize),
        (TimeMode::Continuous, Some(c)) if delta < t_pred => {
            coarsened_grid_with(t_pred, delta, opts.intervals, c)
                .or_else(|_| TimeGrid::uniform(t_pred, opts.intervals))
        }
        _ => TimeGrid::uniform(t_pred, opts.intervals),
    }
}

/// Previous prediction shifted by `shift`, padded with `(x̄, ū)` (or the last
/// values without an equilibrium).
fn shifted_guess(
    prev: &Solution,
    shift: f64,
    grid: &TimeGrid,
    eq: Option<&Equilibrium>,
) -> Solution {
    let end = prev.grid.horizon();
    let pad_x = eq.map_or_else(|| prev.final_state().to_vec(), |e| e.x_bar.clone());
    let pad_u = eq.map_or_else(|| prev.inputs.last().unwrap().clone(), |e| e.u_bar.clone());
    let nodes = grid.nodes();
    let states = nodes
        .iter()
        .map(|&t| {
            if t + shift <= end {
                prev.state_at(t + shift)
            } else {
                pad_x.clone()
            }
        })
        .collect();
    let inputs = nodes
        .windows(2)
        .map(|w| {
            let mid = shift + 0.5 * (w[0] + w[1]);
            if mid < end {
                prev.inputs[prev.grid.interval_of(mid)].clone()
            } else {
                pad_u.clone()
            }
        })
        .collect();
    Solution {
        grid: grid.clone(),
        states,
        inputs,
        adjoints: vec![],
        multipliers: vec![],
        objective: f64::NAN,
        ..prev.clone()
    }
}

/// Receding-horizon loop: solve on `[0, T_opt]` from the current state, apply
/// the first `δ` of the prediction, shift and repeat. With a finite horizon
/// the prediction shrinks to `min{T_opt, T − t}` and the last segment ends at
/// `T`.
///
/// Segments are stored node by node from the predictions; when `δ` is not a
/// node of the prediction grid the last piece is integrated with RK4 under
/// the held input. Each segment starts from the stored end state of the
/// previous one.
pub fn mpc_run(
    problem: &OcpProblem,
    eq: Option<&Equilibrium>,
    horizon: MpcHorizon,
    t_opt: f64,
    delta: f64,
    opts: &MpcOptions,
) -> Result<ClosedLoop> {
    let end = horizon.end();
    if !(delta > 0.0 && delta < t_opt) {
        return Err(Error::invalid("delta", "need 0 < δ < T_opt"));
    }
    if let MpcHorizon::Finite(t) = horizon {
        if !(t_opt <= t) {
            return Err(Error::invalid("t_opt", "must not exceed the horizon"));
        }
    }
    if !end.is_finite() || !(end > 0.0) {
        return Err(Error::invalid(
            "horizon",
            "needs a finite positive end time",
        ));
    }
    if problem.time_mode == TimeMode::Discrete
        && (delta.fract() != 0.0 || t_opt.fract() != 0.0 || end.fract() != 0.0)
    {
        return Err(Error::invalid("delta", "discrete loops need integer times"));
    }
    if opts.terminal_equality && eq.is_none() {
        return Err(Error::invalid("terminal_equality", "needs an equilibrium"));
    }
    let first = match (&opts.coarsening, problem.time_mode) {
        (Some(c), TimeMode::Continuous) => coarsened_grid_with(t_opt, delta, opts.intervals, c)?,
        _ => prediction_grid(problem.time_mode, t_opt, delta, opts)?,
    };
    if first.step(0) > delta * (1.0 + 1e-12) {
        return Err(Error::invalid(
            "intervals",
            format!(
                "prediction grid (first step {}) does not resolve δ = {delta}",
                first.step(0)
            ),
        ));
    }

    let snap = 1e-9 * end.max(1.0);
    let mut cl = ClosedLoop {
        delta,
        t_opt,
        horizon,
        times: vec![0.0],
        states: vec![problem.initial_state.clone()],
        ..ClosedLoop::default()
    };
    let mut prev: Option<(Solution, f64)> = None;
    let mut t = 0.0;
    let mut step = 0;
    while end - t > snap {
        let remaining = end - t;
        let t_pred = match horizon {
            MpcHorizon::Finite(_) => t_opt.min(remaining),
            MpcHorizon::Infinite { .. } => t_opt,
        };
        let apply = delta.min(remaining);
        let mut p = problem
            .clone()
            .with_initial_state(cl.states.last().unwrap().clone())
            .with_horizon(t_pred);
        if let (true, Some(e)) = (opts.terminal_equality, eq) {
            p = p.with_terminal_state(&e.x_bar);
        }
        let grid = prediction_grid(problem.time_mode, t_pred, apply, opts)?;
        let guess = prev
            .as_ref()
            .map(|(s, shift)| shifted_guess(s, *shift, &grid, eq));
        let sol = match solve_trajectory_with(&p, &grid, guess.as_ref(), &opts.solver) {
            Ok(s) => s,
            Err(e) => {
                finalize(problem, &mut cl)?;
                return Err(Error::MpcStep {
                    step,
                    source: Box::new(e),
                    partial: Box::new(cl),
                });
            }
        };
        debug!(
            "mpc step {step}: t = {t:.4}, T_opt = {t_pred:.4}, {} iterations",
            sol.stats.iterations
        );

        let nodes = sol.grid.nodes();
        let k_end = nodes.iter().rposition(|&s| s <= apply + snap).unwrap();
        for k in 0..k_end {
            cl.inputs.push(sol.inputs[k].clone());
            cl.states.push(sol.states[k + 1].clone());
            cl.times.push(t + nodes[k + 1]);
        }
        if apply - nodes[k_end] > snap {
            let (x, u) = (&sol.states[k_end], &sol.inputs[k_end]);
            cl.states.push(rk4(problem, apply - nodes[k_end], x, u));
            cl.inputs.push(u.clone());
            cl.times.push(t + apply);
        }
        t = if remaining - apply <= snap {
            end
        } else {
            t + apply
        };
        *cl.times.last_mut().unwrap() = t;
        cl.steps.push(StepRecord {
            start: cl.times[cl.times.len() - 1] - apply,
            prediction_horizon: t_pred,
            objective: sol.objective,
            stats: sol.stats.clone(),
        });
        if opts.keep_open_loop {
            cl.open_loop.push(sol.clone());
        }
        prev = Some((sol, apply));
        step += 1;
    }
    finalize(problem, &mut cl)?;
    Ok(cl)
}

/// Step costs from the transcription quadrature on the closed-loop grid.
fn finalize(problem: &OcpProblem, cl: &mut ClosedLoop) -> Result<()> {
    cl.step_costs.clear();
    cl.terminal_cost = 0.0;
    if cl.inputs.is_empty() {
        cl.total_cost = 0.0;
        return Ok(());
    }
    let grid = TimeGrid::new(cl.times.clone())?;
    let mut p = problem.clone().with_horizon(grid.horizon());
    p.mayer_cost = None;
    let nlp = transcribe(&p, &grid)?;
    cl.step_costs = (0..cl.inputs.len())
        .map(|k| nlp.stage_cost(k, &cl.states[k], &cl.inputs[k]))
        .collect();
    if matches!(cl.horizon, MpcHorizon::Finite(t) if (grid.horizon() - t).abs() <= 1e-9 * t.max(1.0))
    {
        cl.terminal_cost = problem.phi(cl.states.last().unwrap());
    }
    cl.total_cost = cl.step_costs.iter().sum::<f64>() + cl.terminal_cost;
    Ok(())
}
