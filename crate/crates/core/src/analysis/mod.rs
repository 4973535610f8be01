//! Turnpike detection on solved trajectories.
//!
//! Deviations `e(t) = ‖ξ⋆(t) − ξ̄‖` are Euclidean on the concatenation of
//! the selected components (optionally weighted per entry). Inputs and
//! multipliers enter at a node with the value of the interval starting
//! there; the last node reuses the last interval.

mod classify;
mod fit;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nlp::Solution;
use crate::ocp::{Equilibrium, TimeMode};

pub use classify::{
    classify_turnpike, value_gradient_check, ClassifyOptions, Exactness, MemberWindow,
    TurnpikeReport, ValueGradientCheck,
};
pub use fit::{fit_exponential, turnpike_bounds, ExponentialFit, TurnpikeBounds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentSelector {
    /// `x`
    State,
    /// `(x, u)`
    InputState,
    /// `(x, u, λ, μ)`
    PrimalDual,
}

impl ComponentSelector {
    pub const ALL: [ComponentSelector; 3] = [
        ComponentSelector::State,
        ComponentSelector::InputState,
        ComponentSelector::PrimalDual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentSelector::State => "state",
            ComponentSelector::InputState => "input_state",
            ComponentSelector::PrimalDual => "primal_dual",
        }
    }

    /// `ξ̄` for this selector.
    pub fn reference(self, eq: &Equilibrium) -> Vec<f64> {
        let mut v = eq.x_bar.clone();
        if self != ComponentSelector::State {
            v.extend(&eq.u_bar);
        }
        if self == ComponentSelector::PrimalDual {
            v.extend(&eq.lambda_bar);
            v.extend(&eq.mu_bar);
        }
        v
    }

    /// `‖ξ̄‖ + 1`, the scale of the classification thresholds.
    pub fn scale(self, eq: &Equilibrium) -> f64 {
        crate::ocp::norm(&self.reference(eq)) + 1.0
    }
}

impl FromStr for ComponentSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ComponentSelector::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid("selector", format!("unknown selector `{s}`")))
    }
}

/// `(t, e(t))` at every node.
pub fn deviation_profile(
    solution: &Solution,
    eq: &Equilibrium,
    sel: ComponentSelector,
) -> Result<Vec<(f64, f64)>> {
    deviation_profile_weighted(solution, eq, sel, None)
}

/// Like [`deviation_profile`] with per-entry weights on `ξ`, i.e.
/// `e = sqrt(Σ wᵢ (ξᵢ − ξ̄ᵢ)²)`.
pub fn deviation_profile_weighted(
    solution: &Solution,
    eq: &Equilibrium,
    sel: ComponentSelector,
    weights: Option<&[f64]>,
) -> Result<Vec<(f64, f64)>> {
    let reference = sel.reference(eq);
    if let Some(w) = weights {
        crate::error::check_dim("weights", reference.len(), w.len())?;
        if w.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::invalid("weights", "must be nonnegative"));
        }
    }
    let nodes = solution.states.len();
    if sel == ComponentSelector::PrimalDual
        && (solution.adjoints.len() != nodes || solution.multipliers.len() != nodes)
    {
        return Err(Error::Analysis(
            "primal_dual selector needs adjoints and multipliers at every node".into(),
        ));
    }
    let mut out = Vec::with_capacity(nodes);
    let mut xi: Vec<f64> = Vec::with_capacity(reference.len());
    for (k, &t) in solution.grid.nodes().iter().enumerate() {
        xi.clear();
        xi.extend(&solution.states[k]);
        if sel != ComponentSelector::State {
            xi.extend(solution.node_input(k));
        }
        if sel == ComponentSelector::PrimalDual {
            xi.extend(&solution.adjoints[k]);
            let mu = &solution.multipliers[k.min(solution.inputs.len() - 1)];
            xi.extend(mu);
        }
        crate::error::check_dim("selected components", reference.len(), xi.len())?;
        let sq: f64 = xi
            .iter()
            .zip(&reference)
            .enumerate()
            .map(|(i, (a, b))| weights.map_or(1.0, |w| w[i]) * (a - b) * (a - b))
            .sum();
        out.push((t, sq.sqrt()));
    }
    Ok(out)
}

/// Times at which a trajectory is outside the `ε`-ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitSet {
    pub nodes: Vec<usize>,
    pub times: Vec<f64>,
    /// `#Q(ε)` (discrete) or the left-endpoint approximation of `μ[Θ(ε)]`.
    pub size: f64,
    /// Number of threshold crossings along the trajectory.
    pub crossings: usize,
}

/// Exit set of a deviation profile. In continuous mode node `k` contributes
/// its interval length `t_{k+1} − t_k` and the last node contributes
/// nothing; the error is at most one interval per crossing.
pub fn exit_set_of_profile(
    profile: &[(f64, f64)],
    mode: TimeMode,
    epsilon: f64,
) -> Result<ExitSet> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    let mut set = ExitSet {
        nodes: Vec::new(),
        times: Vec::new(),
        size: 0.0,
        crossings: 0,
    };
    for (k, &(t, e)) in profile.iter().enumerate() {
        let outside = e > epsilon;
        if k > 0 && outside != (profile[k - 1].1 > epsilon) {
            set.crossings += 1;
        }
        if !outside {
            continue;
        }
        set.nodes.push(k);
        set.times.push(t);
        set.size += match mode {
            TimeMode::Discrete => 1.0,
            TimeMode::Continuous => profile.get(k + 1).map_or(0.0, |next| next.0 - t),
        };
    }
    Ok(set)
}

pub fn exit_measure(
    solution: &Solution,
    eq: &Equilibrium,
    sel: ComponentSelector,
    epsilon: f64,
) -> Result<ExitSet> {
    let profile = deviation_profile(solution, eq, sel)?;
    exit_set_of_profile(&profile, solution.time_mode, epsilon)
}

/// `(x₀, T)` of one batch member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchMember {
    pub x0: Vec<f64>,
    pub horizon: f64,
}

impl BatchMember {
    pub fn of(solution: &Solution) -> Self {
        BatchMember {
            x0: solution.states[0].clone(),
            horizon: solution.horizon(),
        }
    }
}

/// `ν(ε)` over a batch, on a decreasing `ε` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NuTable {
    pub selector: ComponentSelector,
    pub epsilons: Vec<f64>,
    pub nu: Vec<f64>,
    pub batch: Vec<BatchMember>,
}

impl NuTable {
    /// `ν` at a grid value of `ε` (exact match up to rounding).
    pub fn at(&self, epsilon: f64) -> Option<f64> {
        self.epsilons
            .iter()
            .position(|&e| (e - epsilon).abs() <= 1e-12 * epsilon.abs())
            .map(|i| self.nu[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epsilon,nu\n");
        for (e, n) in self.epsilons.iter().zip(&self.nu) {
            out.push_str(&format!(
                "{},{}\n",
                crate::nlp::fmt_f64(*e),
                crate::nlp::fmt_f64(*n)
            ));
        }
        out
    }
}

pub(crate) fn check_eps_grid(eps_grid: &[f64]) -> Result<()> {
    if eps_grid.is_empty() {
        return Err(Error::invalid("eps_grid", "must not be empty"));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid("eps_grid", "entries must be positive"));
    }
    if eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::invalid("eps_grid", "must be strictly decreasing"));
    }
    Ok(())
}

/// `ν(ε) = max` over the batch of the exit-set size, followed by a running
/// maximum so that `ν` is nonincreasing in `ε`.
pub fn estimate_nu(
    batch: &[Solution],
    eq: &Equilibrium,
    sel: ComponentSelector,
    eps_grid: &[f64],
) -> Result<NuTable> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must not be empty"));
    }
    check_eps_grid(eps_grid)?;
    let mut nu = vec![0.0f64; eps_grid.len()];
    for s in batch {
        let profile = deviation_profile(s, eq, sel)?;
        for (i, &eps) in eps_grid.iter().enumerate() {
            nu[i] = nu[i].max(exit_set_of_profile(&profile, s.time_mode, eps)?.size);
        }
    }
    for i in 1..nu.len() {
        nu[i] = nu[i].max(nu[i - 1]);
    }
    Ok(NuTable {
        selector: sel,
        epsilons: eps_grid.to_vec(),
        nu,
        batch: batch.iter().map(BatchMember::of).collect(),
    })
}
