use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_exponential, ExponentialFit};
use super::{
    check_eps_grid, deviation_profile, estimate_nu, exit_set_of_profile, BatchMember,
    ComponentSelector, NuTable,
};
use crate::error::{Error, Result};
use crate::nlp::{solve_trajectory, Solution};
use crate::ocp::{Equilibrium, OcpProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exactness {
    Exact,
    Approximate,
    Undetermined,
}

/// Thresholds of the classification, relative to `scale = ‖ξ̄‖ + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifyOptions {
    /// Extra `ε` values for the ν tables (absolute, decreasing).
    pub eps_grid: Vec<f64>,
    /// `ε_min = eps_min_factor · scale`
    pub eps_min_factor: f64,
    /// `ε_ref = eps_ref_factor · scale`
    pub eps_ref_factor: f64,
    /// Exactness slack in multiples of the largest grid interval, per
    /// crossing of the `ε_ref`-sphere (the staircase input needs a couple
    /// of intervals to settle at each junction).
    pub slack_intervals: f64,
    pub selectors: Vec<ComponentSelector>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            eps_grid: vec![0.5, 0.25, 0.1],
            eps_min_factor: 1e-3,
            eps_ref_factor: 1e-2,
            slack_intervals: 3.0,
            selectors: ComponentSelector::ALL.to_vec(),
        }
    }
}

/// Entry into and last presence in the `ε_ref`-ball for one member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemberWindow {
    pub member: BatchMember,
    pub entry: Option<f64>,
    pub exit: Option<f64>,
    pub crossings: usize,
    pub min_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeReport {
    pub selector: ComponentSelector,
    pub equilibrium: Equilibrium,
    pub nu_table: NuTable,
    pub fit: Option<ExponentialFit>,
    /// Why the fit is missing, if it is.
    pub fit_error: Option<String>,
    /// Every member enters the `ε_ref`-ball and `ν(ε_ref)` is shorter than
    /// the shortest horizon.
    pub detected: bool,
    pub exactness: Exactness,
    pub eps_min: f64,
    pub eps_ref: f64,
    pub slack: f64,
    pub windows: Vec<MemberWindow>,
    /// Norm used for the deviations.
    pub norm: String,
}

fn distinct(values: impl Iterator<Item = Vec<f64>>) -> usize {
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for v in values {
        if !seen
            .iter()
            .any(|s| s.iter().zip(&v).all(|(a, b)| (a - b).abs() <= 1e-12))
        {
            seen.push(v);
        }
    }
    seen.len()
}

/// Runs the ν estimation and the exponential fit for each selector and
/// decides exactness.
///
/// The verdict is `exact` when `ν(ε_min) ≤ ν(ε_ref) + slack`, i.e. shrinking
/// the ball by an order of magnitude costs no more than a few grid
/// intervals of exit time per crossing. It is `undetermined` when no turnpike is
/// detected.
pub fn classify_turnpike(
    batch: &[Solution],
    eq: &Equilibrium,
    opts: &ClassifyOptions,
) -> Result<Vec<TurnpikeReport>> {
    if distinct(batch.iter().map(|s| vec![s.horizon()])) < 2
        || distinct(batch.iter().map(|s| s.states[0].clone())) < 2
    {
        return Err(Error::Analysis(
            "classification needs at least two horizons and two initial states".into(),
        ));
    }
    if !opts.eps_grid.is_empty() {
        check_eps_grid(&opts.eps_grid)?;
    }
    if !(opts.eps_min_factor > 0.0 && opts.eps_min_factor < opts.eps_ref_factor) {
        return Err(Error::invalid(
            "eps_min_factor",
            "must be positive and below eps_ref_factor",
        ));
    }
    let max_step = batch.iter().map(|s| s.grid.max_step()).fold(0.0, f64::max);
    let min_horizon = batch
        .iter()
        .map(|s| s.horizon())
        .fold(f64::INFINITY, f64::min);
    opts.selectors
        .par_iter()
        .map(|&sel| {
            let scale = sel.scale(eq);
            let eps_min = opts.eps_min_factor * scale;
            let eps_ref = opts.eps_ref_factor * scale;
            let mut eps: Vec<f64> = opts.eps_grid.clone();
            eps.extend([eps_ref, eps_min]);
            eps.sort_by(|a, b| b.total_cmp(a));
            eps.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
            let nu_table = estimate_nu(batch, eq, sel, &eps)?;

            let mut windows = Vec::with_capacity(batch.len());
            for s in batch {
                let profile = deviation_profile(s, eq, sel)?;
                let inside: Vec<f64> = profile
                    .iter()
                    .filter(|p| p.1 <= eps_ref)
                    .map(|p| p.0)
                    .collect();
                windows.push(MemberWindow {
                    member: BatchMember::of(s),
                    entry: inside.first().copied(),
                    exit: inside.last().copied(),
                    crossings: exit_set_of_profile(&profile, s.time_mode, eps_ref)?.crossings,
                    min_deviation: profile.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
                });
            }

            let nu_ref = nu_table.at(eps_ref).unwrap_or(f64::INFINITY);
            let nu_min = nu_table.at(eps_min).unwrap_or(f64::INFINITY);
            let crossings = windows
                .iter()
                .map(|w| w.crossings)
                .max()
                .unwrap_or(0)
                .max(1);
            let slack = opts.slack_intervals * max_step * crossings as f64;
            let detected = windows.iter().all(|w| w.entry.is_some()) && nu_ref < min_horizon;
            let exactness = if !detected {
                Exactness::Undetermined
            } else if nu_min <= nu_ref + slack {
                Exactness::Exact
            } else {
                Exactness::Approximate
            };
            let (fit, fit_error) = match fit_exponential(batch, eq, sel) {
                Ok(f) => (Some(f), None),
                Err(Error::UndeterminedFit(why)) => (None, Some(why)),
                Err(e) => return Err(e),
            };
            Ok(TurnpikeReport {
                selector: sel,
                equilibrium: eq.clone(),
                nu_table,
                fit,
                fit_error,
                detected,
                exactness,
                eps_min,
                eps_ref,
                slack,
                windows,
                norm: "euclidean, unweighted".into(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueGradientCheck {
    /// Node time actually used (nearest node to the requested `τ`).
    pub tau: f64,
    pub lambda_at_tau: Vec<f64>,
    pub fd_gradient: Vec<f64>,
    /// `‖fd_gradient − λ⋆(τ)‖`
    pub gap: f64,
    /// `‖fd_gradient − λ̄‖`
    pub gap_to_steady: f64,
    pub step: f64,
}

/// Compares `λ⋆(τ)` and `λ̄` with the central-difference gradient of the
/// optimal value of the tail problem on `[τ, T]`.
///
/// `τ` must lie in the turnpike window, i.e. the state deviation at `τ` may
/// not exceed `ε_ref` of the default [`ClassifyOptions`].
pub fn value_gradient_check(
    problem: &OcpProblem,
    solution: &Solution,
    eq: &Equilibrium,
    tau: f64,
) -> Result<ValueGradientCheck> {
    solution.check_compatible(problem)?;
    let k = solution.grid.nearest(tau);
    if k >= solution.grid.intervals() {
        return Err(Error::invalid("tau", "must lie before the horizon"));
    }
    let profile = deviation_profile(solution, eq, ComponentSelector::State)?;
    let eps_ref = ClassifyOptions::default().eps_ref_factor * ComponentSelector::State.scale(eq);
    if profile[k].1 > eps_ref {
        return Err(Error::Analysis(format!(
            "tau = {} is outside the turnpike window (deviation {:.3e} > {:.3e})",
            solution.grid.nodes()[k],
            profile[k].1,
            eps_ref
        )));
    }
    let x_tau = &solution.states[k];
    let step = 1e-4 * (1.0 + crate::ocp::norm(x_tau));
    let guess = solution.tail(k)?;
    let grid = guess.grid.clone();
    let value = |x: Vec<f64>| -> Result<f64> {
        let p = problem
            .clone()
            .with_initial_state(x)
            .with_horizon(grid.horizon());
        Ok(solve_trajectory(&p, &grid, Some(&guess))?.objective)
    };
    let mut fd_gradient = Vec::with_capacity(x_tau.len());
    for i in 0..x_tau.len() {
        let mut plus = x_tau.clone();
        let mut minus = x_tau.clone();
        plus[i] += step;
        minus[i] -= step;
        fd_gradient.push((value(plus)? - value(minus)?) / (2.0 * step));
    }
    let lambda_at_tau = solution
        .adjoints
        .get(k)
        .cloned()
        .ok_or_else(|| Error::Analysis("solution carries no adjoints".into()))?;
    Ok(ValueGradientCheck {
        tau: solution.grid.nodes()[k],
        gap: crate::ocp::distance(&fd_gradient, &lambda_at_tau),
        gap_to_steady: crate::ocp::distance(&fd_gradient, &eq.lambda_bar),
        lambda_at_tau,
        fd_gradient,
        step,
    })
}
