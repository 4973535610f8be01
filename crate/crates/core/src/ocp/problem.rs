use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::fd;
use crate::error::{check_dim, Error, Result};

pub type VectorMap = Arc<dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarMap = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
pub type MatrixMap = Arc<dyn Fn(&[f64], &[f64]) -> DMatrix<f64> + Send + Sync>;
pub type TerminalScalar = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type TerminalVector = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type TerminalMatrix = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeMode {
    /// `x(t+1) = f(x(t), u(t))` on integer times.
    Discrete,
    /// `ẋ = f(x, u)` on `[0, T]`.
    Continuous,
}

/// Optional analytic derivatives. Any missing entry falls back to central
/// finite differences.
#[derive(Clone, Default)]
pub struct Derivatives {
    pub f_x: Option<MatrixMap>,
    pub f_u: Option<MatrixMap>,
    pub l_x: Option<VectorMap>,
    pub l_u: Option<VectorMap>,
    pub g_x: Option<MatrixMap>,
    pub g_u: Option<MatrixMap>,
    pub phi_x: Option<TerminalVector>,
    pub psi_x: Option<TerminalMatrix>,
}

/// A finite-horizon optimal control problem
///
/// ```text
///   min  Σ ℓ(x,u) (or ∫ ℓ dt) + φ(x(T))
///   s.t. x⁺ = f(x,u) (or ẋ = f(x,u)),  x(0) = x₀,
///        g(x,u) ≤ 0,  ψ(x(T)) ≤ 0 (selected rows = 0).
/// ```
///
/// Closures are reference counted so problems are cheap to clone and can
/// be shared across threads.
#[derive(Clone)]
pub struct OcpProblem {
    pub name: String,
    pub time_mode: TimeMode,
    pub state_dim: usize,
    pub input_dim: usize,
    pub dynamics: VectorMap,
    pub stage_cost: ScalarMap,
    pub mayer_cost: Option<TerminalScalar>,
    pub path_dim: usize,
    pub path_constraints: Option<VectorMap>,
    /// Rows of `g` that only involve the state. In continuous mode they are
    /// also imposed at the final node (evaluated with the last input).
    pub state_rows: Vec<usize>,
    pub terminal_dim: usize,
    pub terminal_constraints: Option<TerminalVector>,
    /// Rows of `ψ` treated as equalities.
    pub terminal_equalities: Vec<usize>,
    pub horizon: f64,
    pub initial_state: Vec<f64>,
    /// Box used for default guesses and warm-start clamping. The actual
    /// bounds must also appear in `g`.
    pub input_box: Option<(Vec<f64>, Vec<f64>)>,
    pub derivatives: Derivatives,
}

impl fmt::Debug for OcpProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OcpProblem")
            .field("name", &self.name)
            .field("time_mode", &self.time_mode)
            .field("state_dim", &self.state_dim)
            .field("input_dim", &self.input_dim)
            .field("path_dim", &self.path_dim)
            .field("terminal_dim", &self.terminal_dim)
            .field("horizon", &self.horizon)
            .field("initial_state", &self.initial_state)
            .finish_non_exhaustive()
    }
}

impl OcpProblem {
    pub fn new(
        name: impl Into<String>,
        time_mode: TimeMode,
        state_dim: usize,
        input_dim: usize,
        dynamics: VectorMap,
        stage_cost: ScalarMap,
    ) -> Self {
        OcpProblem {
            name: name.into(),
            time_mode,
            state_dim,
            input_dim,
            dynamics,
            stage_cost,
            mayer_cost: None,
            path_dim: 0,
            path_constraints: None,
            state_rows: Vec::new(),
            terminal_dim: 0,
            terminal_constraints: None,
            terminal_equalities: Vec::new(),
            horizon: 1.0,
            initial_state: vec![0.0; state_dim],
            input_box: None,
            derivatives: Derivatives::default(),
        }
    }

    pub fn with_mayer(mut self, phi: TerminalScalar) -> Self {
        self.mayer_cost = Some(phi);
        self
    }

    pub fn with_path_constraints(
        mut self,
        rows: usize,
        g: VectorMap,
        state_rows: Vec<usize>,
    ) -> Self {
        self.path_dim = rows;
        self.path_constraints = Some(g);
        self.state_rows = state_rows;
        self
    }

    pub fn with_terminal_constraints(
        mut self,
        rows: usize,
        psi: TerminalVector,
        equalities: Vec<usize>,
    ) -> Self {
        self.terminal_dim = rows;
        self.terminal_constraints = Some(psi);
        self.terminal_equalities = equalities;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_initial_state(mut self, x0: Vec<f64>) -> Self {
        self.initial_state = x0;
        self
    }

    pub fn with_input_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.input_box = Some((lower, upper));
        self
    }

    pub fn with_derivatives(mut self, derivatives: Derivatives) -> Self {
        self.derivatives = derivatives;
        self
    }

    /// Same problem without Mayer term and with the terminal set replaced by
    /// the equality `x(T) = target`.
    pub fn with_terminal_state(&self, target: &[f64]) -> Self {
        let target = target.to_vec();
        let n = self.state_dim;
        let mut p = self.clone();
        p.mayer_cost = None;
        p.derivatives.phi_x = None;
        p.terminal_dim = n;
        p.terminal_constraints = Some(Arc::new(move |x: &[f64]| {
            x.iter().zip(&target).map(|(a, b)| a - b).collect()
        }));
        p.terminal_equalities = (0..n).collect();
        p.derivatives.psi_x = Some(Arc::new(move |_x: &[f64]| DMatrix::identity(n, n)));
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 {
            return Err(Error::invalid("state_dim", "must be positive"));
        }
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be positive"));
        }
        check_dim("initial_state", self.state_dim, self.initial_state.len())?;
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::invalid("horizon", "must be positive and finite"));
        }
        if self.time_mode == TimeMode::Discrete && self.horizon.fract() != 0.0 {
            return Err(Error::invalid("horizon", "discrete horizons are integers"));
        }
        if let Some(&bad) = self.state_rows.iter().find(|&&r| r >= self.path_dim) {
            return Err(Error::invalid(
                "state_rows",
                format!("row {bad} out of range"),
            ));
        }
        if let Some(&bad) = self
            .terminal_equalities
            .iter()
            .find(|&&r| r >= self.terminal_dim)
        {
            return Err(Error::invalid(
                "terminal_equalities",
                format!("row {bad} out of range"),
            ));
        }
        if let Some((lo, hi)) = &self.input_box {
            check_dim("input_box", self.input_dim, lo.len())?;
            check_dim("input_box", self.input_dim, hi.len())?;
        }
        let probe_u = self.default_input();
        let fx = (self.dynamics)(&self.initial_state, &probe_u);
        check_dim("dynamics", self.state_dim, fx.len())?;
        Ok(())
    }

    pub(crate) fn check_point(&self, x: &[f64], u: &[f64]) -> Result<()> {
        check_dim("x", self.state_dim, x.len())?;
        check_dim("u", self.input_dim, u.len())
    }

    /// Midpoint of the input box where finite, zero otherwise.
    pub fn default_input(&self) -> Vec<f64> {
        match &self.input_box {
            Some((lo, hi)) => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| match (l.is_finite(), h.is_finite()) {
                    (true, true) => 0.5 * (l + h),
                    (true, false) => l.max(0.0),
                    (false, true) => h.min(0.0),
                    (false, false) => 0.0,
                })
                .collect(),
            None => vec![0.0; self.input_dim],
        }
    }

    pub fn clamp_input(&self, u: &mut [f64]) {
        if let Some((lo, hi)) = &self.input_box {
            for ((v, &l), &h) in u.iter_mut().zip(lo).zip(hi) {
                *v = v.clamp(l, h);
            }
        }
    }

    pub fn f(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        (self.dynamics)(x, u)
    }

    pub fn l(&self, x: &[f64], u: &[f64]) -> f64 {
        (self.stage_cost)(x, u)
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        self.mayer_cost.as_ref().map_or(0.0, |p| p(x))
    }

    pub fn g(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.path_constraints
            .as_ref()
            .map_or_else(Vec::new, |g| g(x, u))
    }

    pub fn psi(&self, x: &[f64]) -> Vec<f64> {
        self.terminal_constraints
            .as_ref()
            .map_or_else(Vec::new, |p| p(x))
    }

    pub fn f_x(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        match &self.derivatives.f_x {
            Some(d) => d(x, u),
            None => fd::jacobian(x, self.state_dim, |xp| self.f(xp, u)),
        }
    }

    pub fn f_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        match &self.derivatives.f_u {
            Some(d) => d(x, u),
            None => fd::jacobian(u, self.state_dim, |up| self.f(x, up)),
        }
    }

    pub fn l_x(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.derivatives.l_x {
            Some(d) => d(x, u),
            None => fd::gradient(x, |xp| self.l(xp, u)),
        }
    }

    pub fn l_u(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        match &self.derivatives.l_u {
            Some(d) => d(x, u),
            None => fd::gradient(u, |up| self.l(x, up)),
        }
    }

    pub fn g_x(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        if self.path_dim == 0 {
            return DMatrix::zeros(0, self.state_dim);
        }
        match &self.derivatives.g_x {
            Some(d) => d(x, u),
            None => fd::jacobian(x, self.path_dim, |xp| self.g(xp, u)),
        }
    }

    pub fn g_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64> {
        if self.path_dim == 0 {
            return DMatrix::zeros(0, self.input_dim);
        }
        match &self.derivatives.g_u {
            Some(d) => d(x, u),
            None => fd::jacobian(u, self.path_dim, |up| self.g(x, up)),
        }
    }

    pub fn phi_x(&self, x: &[f64]) -> Vec<f64> {
        if self.mayer_cost.is_none() {
            return vec![0.0; self.state_dim];
        }
        match &self.derivatives.phi_x {
            Some(d) => d(x),
            None => fd::gradient(x, |xp| self.phi(xp)),
        }
    }

    pub fn psi_x(&self, x: &[f64]) -> DMatrix<f64> {
        if self.terminal_dim == 0 {
            return DMatrix::zeros(0, self.state_dim);
        }
        match &self.derivatives.psi_x {
            Some(d) => d(x),
            None => fd::jacobian(x, self.terminal_dim, |xp| self.psi(xp)),
        }
    }

    /// Largest relative disagreement between supplied derivative oracles and
    /// central finite differences at `(x, u)`. Zero when no oracle is set.
    pub fn oracle_discrepancy(&self, x: &[f64], u: &[f64]) -> f64 {
        fn rel(a: &[f64], b: &[f64]) -> f64 {
            a.iter()
                .zip(b)
                .map(|(p, q)| (p - q).abs() / p.abs().max(q.abs()).max(1.0))
                .fold(0.0, f64::max)
        }
        let d = &self.derivatives;
        let mut worst: f64 = 0.0;
        if let Some(o) = &d.f_x {
            let fdm = fd::jacobian(x, self.state_dim, |xp| self.f(xp, u));
            worst = worst.max(rel(o(x, u).as_slice(), fdm.as_slice()));
        }
        if let Some(o) = &d.f_u {
            let fdm = fd::jacobian(u, self.state_dim, |up| self.f(x, up));
            worst = worst.max(rel(o(x, u).as_slice(), fdm.as_slice()));
        }
        if let Some(o) = &d.l_x {
            worst = worst.max(rel(&o(x, u), &fd::gradient(x, |xp| self.l(xp, u))));
        }
        if let Some(o) = &d.l_u {
            worst = worst.max(rel(&o(x, u), &fd::gradient(u, |up| self.l(x, up))));
        }
        if self.path_dim > 0 {
            if let Some(o) = &d.g_x {
                let fdm = fd::jacobian(x, self.path_dim, |xp| self.g(xp, u));
                worst = worst.max(rel(o(x, u).as_slice(), fdm.as_slice()));
            }
            if let Some(o) = &d.g_u {
                let fdm = fd::jacobian(u, self.path_dim, |up| self.g(x, up));
                worst = worst.max(rel(o(x, u).as_slice(), fdm.as_slice()));
            }
        }
        if self.mayer_cost.is_some() {
            if let Some(o) = &d.phi_x {
                worst = worst.max(rel(&o(x), &fd::gradient(x, |xp| self.phi(xp))));
            }
        }
        if self.terminal_dim > 0 {
            if let Some(o) = &d.psi_x {
                let fdm = fd::jacobian(x, self.terminal_dim, |xp| self.psi(xp));
                worst = worst.max(rel(o(x).as_slice(), fdm.as_slice()));
            }
        }
        worst
    }
}
