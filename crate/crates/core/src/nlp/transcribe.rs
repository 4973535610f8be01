use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::{OcpProblem, TimeGrid, TimeMode};

/// How the running cost is summed over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Plain sum `Σ ℓ(x(t), u(t))` of the discrete problem.
    Sum,
    /// `h/2·(ℓ(x_k, u_k) + ℓ(x_{k+1}, u_k))` with piecewise-constant input.
    /// On singular arcs this rule makes rapidly switching inputs cheaper
    /// than the singular input, so the transcribed optimum chatters.
    Trapezoid,
    /// Runge–Kutta weights on the stage points of the dynamics step, i.e.
    /// the running cost integrated as an extra state. Default in continuous
    /// mode.
    Rk4,
}

/// One inequality row `g_row(x_node, u) ≤ 0` of the transcribed program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathRow {
    pub node: usize,
    pub row: usize,
}

/// The finite program obtained by transcribing an [`OcpProblem`] onto a grid.
///
/// Decision vector layout: all states `x_0..x_N` first, then all inputs
/// `u_0..u_{N-1}`. Equalities are the dynamics defects
/// `x_{k+1} − F_k(x_k, u_k)` followed by the terminal equalities; inequalities
/// are the path rows followed by the remaining terminal rows. In continuous
/// mode `F_k` is one classical Runge–Kutta step of length `h_k`.
#[derive(Debug, Clone)]
pub struct DiscreteNlp {
    problem: OcpProblem,
    grid: TimeGrid,
    path_rows: Vec<PathRow>,
    quadrature: Quadrature,
}

pub fn default_quadrature(mode: TimeMode) -> Quadrature {
    match mode {
        TimeMode::Discrete => Quadrature::Sum,
        TimeMode::Continuous => Quadrature::Rk4,
    }
}

pub fn transcribe(problem: &OcpProblem, grid: &TimeGrid) -> Result<DiscreteNlp> {
    transcribe_with(problem, grid, default_quadrature(problem.time_mode))
}

pub fn transcribe_with(
    problem: &OcpProblem,
    grid: &TimeGrid,
    quadrature: Quadrature,
) -> Result<DiscreteNlp> {
    problem.validate()?;
    if (problem.time_mode == TimeMode::Discrete) != (quadrature == Quadrature::Sum) {
        return Err(Error::invalid(
            "quadrature",
            "the plain sum is used exactly for discrete-time problems",
        ));
    }
    let t = grid.horizon();
    if (t - problem.horizon).abs() > 1e-12 * problem.horizon.max(1.0) {
        return Err(Error::invalid(
            "grid",
            format!("last node {t} differs from the horizon {}", problem.horizon),
        ));
    }
    match problem.time_mode {
        TimeMode::Continuous => {
            if grid.intervals() < 2 {
                return Err(Error::invalid(
                    "grid",
                    "continuous mode needs at least two intervals",
                ));
            }
        }
        TimeMode::Discrete => {
            if grid.nodes().iter().enumerate().any(|(k, &s)| s != k as f64) {
                return Err(Error::invalid(
                    "grid",
                    "discrete mode needs the integer grid 0..T",
                ));
            }
        }
    }
    let n_int = grid.intervals();
    let mut path_rows = Vec::with_capacity((n_int + 1) * problem.path_dim);
    for node in 0..n_int {
        path_rows.extend((0..problem.path_dim).map(|row| PathRow { node, row }));
    }
    if problem.time_mode == TimeMode::Continuous {
        let mut rows = problem.state_rows.clone();
        rows.sort_unstable();
        rows.dedup();
        path_rows.extend(rows.into_iter().map(|row| PathRow { node: n_int, row }));
    }
    Ok(DiscreteNlp {
        problem: problem.clone(),
        grid: grid.clone(),
        path_rows,
        quadrature,
    })
}

impl DiscreteNlp {
    pub fn problem(&self) -> &OcpProblem {
        &self.problem
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn intervals(&self) -> usize {
        self.grid.intervals()
    }

    pub fn state_blocks(&self) -> usize {
        self.intervals() + 1
    }

    pub fn input_blocks(&self) -> usize {
        self.intervals()
    }

    pub fn variable_count(&self) -> usize {
        self.state_blocks() * self.problem.state_dim + self.input_blocks() * self.problem.input_dim
    }

    /// Number of scalar dynamics defects.
    pub fn defect_count(&self) -> usize {
        self.intervals() * self.problem.state_dim
    }

    pub fn path_rows(&self) -> &[PathRow] {
        &self.path_rows
    }

    pub fn terminal_equality_count(&self) -> usize {
        self.problem.terminal_equalities.len()
    }

    pub fn terminal_inequality_count(&self) -> usize {
        self.problem.terminal_dim - self.terminal_equality_count()
    }

    pub fn equality_count(&self) -> usize {
        self.defect_count() + self.terminal_equality_count()
    }

    pub fn inequality_count(&self) -> usize {
        self.path_rows.len() + self.terminal_inequality_count()
    }

    pub fn quadrature(&self) -> Quadrature {
        self.quadrature
    }

    /// Input used with the state at `node` (the last input for the final node).
    pub fn input_index(&self, node: usize) -> usize {
        node.min(self.intervals() - 1)
    }

    /// Flattens trajectories into the decision vector.
    pub fn pack(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.variable_count());
        states.iter().for_each(|x| v.extend_from_slice(x));
        inputs.iter().for_each(|u| v.extend_from_slice(u));
        v
    }

    pub fn unpack(&self, v: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let n = self.problem.state_dim;
        let m = self.problem.input_dim;
        let split = self.state_blocks() * n;
        let states = v[..split].chunks(n).map(<[f64]>::to_vec).collect();
        let inputs = v[split..].chunks(m).map(<[f64]>::to_vec).collect();
        (states, inputs)
    }

    /// Stage map `F_k`.
    pub fn stage_map(&self, k: usize, x: &[f64], u: &[f64]) -> Vec<f64> {
        match self.problem.time_mode {
            TimeMode::Discrete => self.problem.f(x, u),
            TimeMode::Continuous => rk4(&self.problem, self.grid.step(k), x, u),
        }
    }

    /// Stage cost with the quadrature weights folded in.
    pub fn stage_cost(&self, k: usize, x: &[f64], u: &[f64]) -> f64 {
        let p = &self.problem;
        match self.quadrature {
            Quadrature::Sum => p.l(x, u),
            Quadrature::Trapezoid => {
                let next = self.stage_map(k, x, u);
                0.5 * self.grid.step(k) * (p.l(x, u) + p.l(&next, u))
            }
            Quadrature::Rk4 => Rk4Step::new(p, self.grid.step(k), x, u, false).cost(p, u),
        }
    }

    /// Stage map, its Jacobians and the gradient of the stage cost.
    pub fn stage_linearization(&self, k: usize, x: &[f64], u: &[f64]) -> StageLinearization {
        let p = &self.problem;
        if self.quadrature == Quadrature::Sum {
            return StageLinearization {
                next: p.f(x, u),
                fx: p.f_x(x, u),
                fu: p.f_u(x, u),
                cost_x: p.l_x(x, u),
                cost_u: p.l_u(x, u),
            };
        }
        let h = self.grid.step(k);
        let step = Rk4Step::new(p, h, x, u, true);
        let (cost_x, cost_u) = match self.quadrature {
            Quadrature::Trapezoid => {
                let w = 0.5 * h;
                let lx1 = DVector::from_vec(p.l_x(&step.next, u));
                let gx = (DVector::from_vec(p.l_x(x, u)) + step.fx.tr_mul(&lx1)) * w;
                let gu = (DVector::from_vec(p.l_u(x, u))
                    + step.fu.tr_mul(&lx1)
                    + DVector::from_vec(p.l_u(&step.next, u)))
                    * w;
                (gx.as_slice().to_vec(), gu.as_slice().to_vec())
            }
            _ => step.cost_gradient(p, u),
        };
        StageLinearization {
            next: step.next,
            fx: step.fx,
            fu: step.fu,
            cost_x,
            cost_u,
        }
    }

    /// Forward simulation from `x0`.
    pub fn rollout(&self, x0: &[f64], inputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.to_vec());
        for (k, u) in inputs.iter().enumerate() {
            let next = self.stage_map(k, &states[k], u);
            states.push(next);
        }
        states
    }

    /// `x_{k+1} − F_k(x_k, u_k)` stacked over all intervals.
    pub fn defects(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut d = Vec::with_capacity(self.defect_count());
        for (k, u) in inputs.iter().enumerate() {
            let f = self.stage_map(k, &states[k], u);
            d.extend(states[k + 1].iter().zip(&f).map(|(a, b)| a - b));
        }
        d
    }

    pub fn objective(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> f64 {
        let p = &self.problem;
        let running: f64 = match self.quadrature {
            Quadrature::Trapezoid => inputs
                .iter()
                .enumerate()
                .map(|(k, u)| {
                    0.5 * self.grid.step(k) * (p.l(&states[k], u) + p.l(&states[k + 1], u))
                })
                .sum(),
            _ => inputs
                .iter()
                .enumerate()
                .map(|(k, u)| self.stage_cost(k, &states[k], u))
                .sum(),
        };
        running + p.phi(&states[self.intervals()])
    }

    /// Path-row values in the order of [`Self::path_rows`].
    pub fn path_values(&self, states: &[Vec<f64>], inputs: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.path_rows.len());
        let mut cached: Option<(usize, Vec<f64>)> = None;
        for r in &self.path_rows {
            if cached.as_ref().map_or(true, |(node, _)| *node != r.node) {
                let g = self
                    .problem
                    .g(&states[r.node], &inputs[self.input_index(r.node)]);
                cached = Some((r.node, g));
            }
            out.push(cached.as_ref().unwrap().1[r.row]);
        }
        out
    }
}

/// First-order data of one stage.
#[derive(Debug, Clone)]
pub struct StageLinearization {
    pub next: Vec<f64>,
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub cost_x: Vec<f64>,
    pub cost_u: Vec<f64>,
}

fn axpy(a: &[f64], s: f64, b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(p, q)| p + s * q).collect()
}

pub(crate) fn rk4(problem: &OcpProblem, h: f64, x: &[f64], u: &[f64]) -> Vec<f64> {
    let k1 = problem.f(x, u);
    let k2 = problem.f(&axpy(x, 0.5 * h, &k1), u);
    let k3 = problem.f(&axpy(x, 0.5 * h, &k2), u);
    let k4 = problem.f(&axpy(x, h, &k3), u);
    (0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// One classical Runge–Kutta step with its stage points and, optionally,
/// the derivatives of the stage points with respect to `(x, u)`.
struct Rk4Step {
    h: f64,
    next: Vec<f64>,
    stages: [Vec<f64>; 4],
    stage_dx: Vec<DMatrix<f64>>,
    stage_du: Vec<DMatrix<f64>>,
    fx: DMatrix<f64>,
    fu: DMatrix<f64>,
}

const RK4_WEIGHTS: [f64; 4] = [1.0, 2.0, 2.0, 1.0];

impl Rk4Step {
    fn new(problem: &OcpProblem, h: f64, x: &[f64], u: &[f64], derivatives: bool) -> Self {
        let n = x.len();
        let m = u.len();
        let k1 = problem.f(x, u);
        let x2 = axpy(x, 0.5 * h, &k1);
        let k2 = problem.f(&x2, u);
        let x3 = axpy(x, 0.5 * h, &k2);
        let k3 = problem.f(&x3, u);
        let x4 = axpy(x, h, &k3);
        let k4 = problem.f(&x4, u);
        let next = (0..n)
            .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        let stages = [x.to_vec(), x2, x3, x4];
        if !derivatives {
            return Rk4Step {
                h,
                next,
                stages,
                stage_dx: Vec::new(),
                stage_du: Vec::new(),
                fx: DMatrix::zeros(0, 0),
                fu: DMatrix::zeros(0, 0),
            };
        }
        let eye = DMatrix::<f64>::identity(n, n);
        let offsets = [0.0, 0.5 * h, 0.5 * h, h];
        let mut stage_dx = vec![eye.clone()];
        let mut stage_du = vec![DMatrix::zeros(n, m)];
        let mut dkx = Vec::with_capacity(4);
        let mut dku = Vec::with_capacity(4);
        for i in 0..4 {
            let (a, b) = (problem.f_x(&stages[i], u), problem.f_u(&stages[i], u));
            let kx = &a * &stage_dx[i];
            let ku = &a * &stage_du[i] + b;
            if i < 3 {
                stage_dx.push(&eye + &kx * offsets[i + 1]);
                stage_du.push(&ku * offsets[i + 1]);
            }
            dkx.push(kx);
            dku.push(ku);
        }
        let mut fx = eye;
        let mut fu = DMatrix::zeros(n, m);
        for i in 0..4 {
            fx += &dkx[i] * (h / 6.0 * RK4_WEIGHTS[i]);
            fu += &dku[i] * (h / 6.0 * RK4_WEIGHTS[i]);
        }
        Rk4Step {
            h,
            next,
            stages,
            stage_dx,
            stage_du,
            fx,
            fu,
        }
    }

    /// `h/6·Σ wᵢ ℓ(Xᵢ, u)` over the stage points.
    fn cost(&self, problem: &OcpProblem, u: &[f64]) -> f64 {
        self.stages
            .iter()
            .zip(RK4_WEIGHTS)
            .map(|(x, w)| w * problem.l(x, u))
            .sum::<f64>()
            * self.h
            / 6.0
    }

    fn cost_gradient(&self, problem: &OcpProblem, u: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.stages[0].len();
        let mut gx = DVector::zeros(n);
        let mut gu = DVector::zeros(u.len());
        for i in 0..4 {
            let w = self.h / 6.0 * RK4_WEIGHTS[i];
            let lx = DVector::from_vec(problem.l_x(&self.stages[i], u));
            gx += self.stage_dx[i].tr_mul(&lx) * w;
            gu += (self.stage_du[i].tr_mul(&lx)
                + DVector::from_vec(problem.l_u(&self.stages[i], u)))
                * w;
        }
        (gx.as_slice().to_vec(), gu.as_slice().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmarks::{fish_problem, FishParams, FishVariant};
    use crate::ocp::fd;
    use std::sync::Arc;

    fn discrete_toy(t: f64) -> OcpProblem {
        OcpProblem::new(
            "toy",
            TimeMode::Discrete,
            2,
            1,
            Arc::new(|x: &[f64], u: &[f64]| vec![0.5 * x[0] + x[1], x[1] * x[0] + u[0]]),
            Arc::new(|x: &[f64], u: &[f64]| x[0] * x[0] + u[0] * u[0]),
        )
        .with_horizon(t)
        .with_initial_state(vec![1.0, 0.0])
    }

    #[test]
    fn counts_discrete() {
        let nlp = transcribe(&discrete_toy(3.0), &TimeGrid::discrete(3).unwrap()).unwrap();
        assert_eq!(nlp.state_blocks(), 4);
        assert_eq!(nlp.input_blocks(), 3);
        assert_eq!(nlp.defect_count() / 2, 3);
        assert_eq!(nlp.quadrature(), Quadrature::Sum);
    }

    #[test]
    fn counts_fish() {
        let p = fish_problem(FishVariant::Bilinear, &FishParams::default())
            .unwrap()
            .with_horizon(1.1);
        let nlp = transcribe(&p, &TimeGrid::uniform(1.1, 200).unwrap()).unwrap();
        assert_eq!(nlp.state_blocks(), 201);
        assert_eq!(nlp.input_blocks(), 200);
        assert_eq!(nlp.defect_count(), 200);
        assert_eq!(nlp.path_rows().iter().filter(|r| r.row == 0).count(), 201);
        assert_eq!(nlp.inequality_count(), 601);
    }

    #[test]
    fn grid_must_match() {
        let p = discrete_toy(3.0);
        assert!(transcribe(&p, &TimeGrid::discrete(4).unwrap()).is_err());
        let c = fish_problem(FishVariant::Bilinear, &FishParams::default()).unwrap();
        assert!(transcribe(&c, &TimeGrid::uniform(1.0, 1).unwrap()).is_err());
    }

    #[test]
    fn equilibrium_rollout_has_no_defects() {
        let p = discrete_toy(5.0);
        let nlp = transcribe(&p, &TimeGrid::discrete(5).unwrap()).unwrap();
        let inputs = vec![vec![0.0]; 5];
        let states = nlp.rollout(&[0.0, 0.0], &inputs);
        assert!(nlp
            .defects(&states, &inputs)
            .iter()
            .all(|d| d.abs() <= 1e-10));
        let v = nlp.pack(&states, &inputs);
        assert_eq!(v.len(), nlp.variable_count());
        assert_eq!(nlp.unpack(&v), (states, inputs));
    }

    #[test]
    fn stage_linearization_matches_fd() {
        let p = fish_problem(FishVariant::QuadMayer, &FishParams::default()).unwrap();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        for q in [Quadrature::Rk4, Quadrature::Trapezoid] {
            let nlp = transcribe_with(&p, &grid, q).unwrap();
            let (x, u) = ([1.7], [3.1]);
            let lin = nlp.stage_linearization(3, &x, &u);
            let fa = fd::jacobian(&x, 1, |xp| nlp.stage_map(3, xp, &u));
            let fb = fd::jacobian(&u, 1, |up| nlp.stage_map(3, &x, up));
            assert!((lin.fx[(0, 0)] - fa[(0, 0)]).abs() < 1e-8);
            assert!((lin.fu[(0, 0)] - fb[(0, 0)]).abs() < 1e-8);
            let gx = fd::gradient(&x, |xp| nlp.stage_cost(3, xp, &u));
            let gu = fd::gradient(&u, |up| nlp.stage_cost(3, &x, up));
            assert!((lin.cost_x[0] - gx[0]).abs() < 1e-8, "{q:?}");
            assert!((lin.cost_u[0] - gu[0]).abs() < 1e-8, "{q:?}");
        }
    }

    #[test]
    fn rk4_quadrature_is_exact_for_cubics_in_time() {
        // ẋ = 1 from 0 gives x = t, and ∫₀¹ t³ dt = 1/4
        let p = OcpProblem::new(
            "ramp",
            TimeMode::Continuous,
            1,
            1,
            Arc::new(|_x: &[f64], _u: &[f64]| vec![1.0]),
            Arc::new(|x: &[f64], _u: &[f64]| x[0].powi(3)),
        );
        let nlp = transcribe(&p, &TimeGrid::uniform(1.0, 2).unwrap()).unwrap();
        let inputs = vec![vec![0.0]; 2];
        let states = nlp.rollout(&[0.0], &inputs);
        assert!((nlp.objective(&states, &inputs) - 0.25).abs() < 1e-15);
        let trap = transcribe_with(&p, nlp.grid(), Quadrature::Trapezoid).unwrap();
        assert!((trap.objective(&states, &inputs) - 0.25).abs() > 1e-3);
        assert!(transcribe_with(&p, nlp.grid(), Quadrature::Sum).is_err());
    }
}
