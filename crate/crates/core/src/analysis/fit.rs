use serde::{Deserialize, Serialize};

use super::{deviation_profile, ComponentSelector};
use crate::error::{Error, Result};
use crate::nlp::Solution;
use crate::ocp::Equilibrium;

/// Safety factor of the validity check.
pub const SAFETY: f64 = 1.1;

/// `e(t) ≤ C(ρᵗ + ρ^{T−t})` with `ρ = e^{−γ}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentialFit {
    pub selector: ComponentSelector,
    pub c: f64,
    pub gamma: f64,
    pub rho: f64,
    /// RMS residual of the log fit.
    pub residual: f64,
    /// Number of points entering the regression.
    pub points: usize,
    /// The envelope times [`SAFETY`] bounds every node of every member.
    pub valid: bool,
}

impl ExponentialFit {
    pub fn envelope(&self, t: f64, horizon: f64) -> f64 {
        self.c * (envelope_shape(self.gamma, t, horizon))
    }
}

fn envelope_shape(gamma: f64, t: f64, horizon: f64) -> f64 {
    (-gamma * t).exp() + (-gamma * (horizon - t)).exp()
}

struct Arc {
    points: Vec<(f64, f64)>,
}

/// Residual sum of the log-linear model with least-squares intercepts.
fn log_residual(arcs: &[Arc], gamma: f64) -> f64 {
    let mut ss = 0.0;
    for arc in arcs {
        let r: Vec<f64> = arc.points.iter().map(|&(t, y)| y + gamma * t).collect();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        ss += r.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    ss
}

/// Pooled slope of `ln e` against `t` with one intercept per member.
fn pooled_slope(arcs: &[Arc]) -> f64 {
    let (mut sty, mut stt) = (0.0, 0.0);
    for arc in arcs {
        let n = arc.points.len() as f64;
        let tm = arc.points.iter().map(|p| p.0).sum::<f64>() / n;
        let ym = arc.points.iter().map(|p| p.1).sum::<f64>() / n;
        for &(t, y) in &arc.points {
            sty += (t - tm) * (y - ym);
            stt += (t - tm).powi(2);
        }
    }
    -sty / stt
}

/// Fits the exponential envelope on the entry arcs `t ∈ [0, T/2]`.
///
/// Only points with `e > 10·solver_tolerance` enter. `γ` is the pooled
/// log-linear slope with one intercept per member. `C` is the largest ratio
/// of `e` to the envelope shape over all nodes of all members.
pub fn fit_exponential(
    batch: &[Solution],
    eq: &Equilibrium,
    sel: ComponentSelector,
) -> Result<ExponentialFit> {
    if batch.is_empty() {
        return Err(Error::invalid("batch", "must not be empty"));
    }
    let profiles = batch
        .iter()
        .map(|s| deviation_profile(s, eq, sel))
        .collect::<Result<Vec<_>>>()?;
    let mut arcs = Vec::new();
    for (s, profile) in batch.iter().zip(&profiles) {
        let floor = 10.0 * s.solver_tolerance.max(f64::EPSILON);
        let horizon = s.horizon();
        let points: Vec<(f64, f64)> = profile
            .iter()
            .filter(|&&(t, e)| t <= 0.5 * horizon && e > floor)
            .map(|&(t, e)| (t, e.ln()))
            .collect();
        let spread = points.last().map_or(0.0, |p| p.0) - points.first().map_or(0.0, |p| p.0);
        if points.len() >= 3 && spread > 0.0 {
            arcs.push(Arc { points });
        }
    }
    if arcs.is_empty() {
        return Err(Error::UndeterminedFit(
            "no member has a resolvable entry arc".into(),
        ));
    }
    let slope = pooled_slope(&arcs);
    if !(slope > 0.0) || !slope.is_finite() {
        return Err(Error::UndeterminedFit(format!(
            "no decaying segment (pooled log slope {:.3e})",
            -slope
        )));
    }
    let gamma = slope;
    let points: usize = arcs.iter().map(|a| a.points.len()).sum();
    let residual = (log_residual(&arcs, gamma) / points as f64).sqrt();

    let mut c = 0.0f64;
    for (s, profile) in batch.iter().zip(&profiles) {
        for &(t, e) in profile {
            c = c.max(e / envelope_shape(gamma, t, s.horizon()));
        }
    }
    if !(c > 0.0) {
        return Err(Error::UndeterminedFit("all deviations vanish".into()));
    }
    let mut fit = ExponentialFit {
        selector: sel,
        c,
        gamma,
        rho: (-gamma).exp(),
        residual,
        points,
        valid: false,
    };
    fit.valid = batch.iter().zip(&profiles).all(|(s, profile)| {
        profile
            .iter()
            .all(|&(t, e)| e <= SAFETY * fit.envelope(t, s.horizon()))
    });
    Ok(fit)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnpikeBounds {
    /// Worst-case entry time into the `ε`-ball under the envelope.
    pub t1: f64,
    /// `max{0, −(2/γ) ln(ε/2C)}`
    pub measure_bound: f64,
    /// Smallest integer `k ≥ 2·log_ρ(ε/2C)`.
    pub cardinality_bound: u64,
}

/// Exit bounds implied by a valid envelope.
///
/// `t1` is the smaller root of `C(ρᵗ + ρ^{T−t}) = ε`. When that equation has
/// no real root the envelope never dips below `ε` and `t1` is reported as
/// zero; the horizon-free `measure_bound` still applies.
pub fn turnpike_bounds(fit: &ExponentialFit, epsilon: f64, horizon: f64) -> Result<TurnpikeBounds> {
    if !fit.valid {
        return Err(Error::Analysis("turnpike bounds need a valid fit".into()));
    }
    if !(epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(horizon > 0.0) {
        return Err(Error::invalid("horizon", "must be positive"));
    }
    let ratio = epsilon / (2.0 * fit.c);
    let disc = ratio * ratio - (-fit.gamma * horizon).exp();
    let t1 = if disc < 0.0 {
        0.0
    } else {
        (-(ratio + disc.sqrt()).ln() / fit.gamma).max(0.0)
    };
    let measure_bound = (-2.0 / fit.gamma * ratio.ln()).max(0.0);
    // 2·log_ρ(ε/2C) = −(2/γ)·ln(ε/2C); guard against rounding just above an integer
    let cardinality_bound = (measure_bound - 1e-12 * measure_bound.max(1.0))
        .ceil()
        .max(0.0) as u64;
    Ok(TurnpikeBounds {
        t1,
        measure_bound,
        cardinality_bound,
    })
}
