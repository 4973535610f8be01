//! Reduced-space SQP.
//!
//! States are eliminated by forward simulation, so every iterate satisfies
//! the dynamics defects to rounding. Each iteration linearizes the remaining
//! constraints through the state sensitivities `Z_{k+1} = A_k Z_k + B_k E_k`,
//! builds the reduced Hessian `Σ W_kᵀ ∇²L_k W_k` from per-stage Hessians of
//! the stage Lagrangian, solves the QP by the dual active-set method and
//! globalizes with an ℓ₁ merit line search. Costates follow from one backward
//! sweep with the QP multipliers, so the adjoint recursion holds exactly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp, QpFailure, QpSolution};
use super::solution::{Solution, SolverStats};
use super::transcribe::{
    default_quadrature, transcribe_with, DiscreteNlp, Quadrature, StageLinearization,
};
use crate::error::{check_dim, Error, IterateResiduals, Result};
use crate::ocp::{fd, OcpProblem, TimeGrid, TimeMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianMode {
    /// Finite-difference Hessians of the stage Lagrangians, condensed.
    Exact,
    /// Damped BFGS on the reduced Hessian.
    Bfgs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub tolerance: f64,
    pub max_iter: usize,
    pub hessian: HessianMode,
    /// Consecutive elastic iterations without progress before the problem is
    /// declared locally infeasible.
    pub infeasibility_patience: usize,
    /// Running-cost rule for continuous problems; `None` picks the default.
    pub quadrature: Option<Quadrature>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-8,
            max_iter: 500,
            hessian: HessianMode::Exact,
            infeasibility_patience: 8,
            quadrature: None,
        }
    }
}

pub fn solve_trajectory(
    problem: &OcpProblem,
    grid: &TimeGrid,
    guess: Option<&Solution>,
) -> Result<Solution> {
    solve_trajectory_with(problem, grid, guess, &SolverOptions::default())
}

pub fn solve_trajectory_with(
    problem: &OcpProblem,
    grid: &TimeGrid,
    guess: Option<&Solution>,
    opts: &SolverOptions,
) -> Result<Solution> {
    let quadrature = opts
        .quadrature
        .filter(|_| problem.time_mode == TimeMode::Continuous)
        .unwrap_or_else(|| default_quadrature(problem.time_mode));
    let nlp = transcribe_with(problem, grid, quadrature)?;
    let inputs = initial_inputs(&nlp, guess)?;
    Sqp::new(&nlp, opts).run(inputs)
}

fn initial_inputs(nlp: &DiscreteNlp, guess: Option<&Solution>) -> Result<Vec<Vec<f64>>> {
    let p = nlp.problem();
    let grid = nlp.grid();
    let n_int = grid.intervals();
    let Some(g) = guess else {
        return Ok(vec![p.default_input(); n_int]);
    };
    if g.inputs.is_empty() {
        return Err(Error::invalid("guess", "no inputs"));
    }
    for u in &g.inputs {
        check_dim("guess.inputs", p.input_dim, u.len())?;
    }
    let mut inputs = if g.inputs.len() == n_int
        && g.grid
            .nodes()
            .iter()
            .zip(grid.nodes())
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()))
    {
        g.inputs.clone()
    } else {
        (0..n_int)
            .map(|k| {
                let mid = 0.5 * (grid.nodes()[k] + grid.nodes()[k + 1]);
                let t = mid.min(g.grid.horizon());
                g.inputs[g.grid.interval_of(t)].clone()
            })
            .collect()
    };
    for u in &mut inputs {
        p.clamp_input(u);
    }
    Ok(inputs)
}

/// Simulated point: inputs plus everything that depends only on them.
#[derive(Clone)]
struct Iterate {
    inputs: Vec<Vec<f64>>,
    states: Vec<Vec<f64>>,
    objective: f64,
    /// Path rows then terminal inequalities, `≤ 0`.
    ineq: Vec<f64>,
    /// Terminal equalities.
    eq: Vec<f64>,
}

impl Iterate {
    fn violation_l1(&self) -> f64 {
        self.ineq.iter().map(|v| v.max(0.0)).sum::<f64>()
            + self.eq.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn violation_max(&self) -> f64 {
        self.ineq
            .iter()
            .map(|v| v.max(0.0))
            .chain(self.eq.iter().map(|v| v.abs()))
            .fold(0.0, f64::max)
    }
}

/// First-order data at an iterate.
struct Linearization {
    stages: Vec<StageLinearization>,
    /// Sensitivities `∂x_k/∂u`, stacked by node.
    z: DMatrix<f64>,
    grad: DVector<f64>,
    ineq_rows: DMatrix<f64>,
    eq_rows: DMatrix<f64>,
    /// `(g_x, g_u)` per node.
    path_jac: Vec<(DMatrix<f64>, DMatrix<f64>)>,
    psi_x: DMatrix<f64>,
}

struct Sqp<'a> {
    nlp: &'a DiscreteNlp,
    opts: &'a SolverOptions,
    n: usize,
    m: usize,
    n_int: usize,
    /// Terminal rows treated as inequalities / equalities.
    term_ineq: Vec<usize>,
    term_eq: Vec<usize>,
}

struct Subproblem {
    step: DVector<f64>,
    ineq_mult: Vec<f64>,
    eq_mult: Vec<f64>,
    elastic: bool,
    /// ℓ₁ violation of the linearized constraints at the step.
    linear_violation: f64,
    qp_iterations: usize,
}

impl<'a> Sqp<'a> {
    fn new(nlp: &'a DiscreteNlp, opts: &'a SolverOptions) -> Self {
        let p = nlp.problem();
        let term_eq = p.terminal_equalities.clone();
        let term_ineq = (0..p.terminal_dim)
            .filter(|r| !term_eq.contains(r))
            .collect();
        Sqp {
            nlp,
            opts,
            n: p.state_dim,
            m: p.input_dim,
            n_int: nlp.intervals(),
            term_ineq,
            term_eq,
        }
    }

    fn evaluate(&self, inputs: Vec<Vec<f64>>) -> Option<Iterate> {
        let p = self.nlp.problem();
        let states = self.nlp.rollout(&p.initial_state, &inputs);
        if states.iter().flatten().any(|v| !v.is_finite()) {
            return None;
        }
        let objective = self.nlp.objective(&states, &inputs);
        let mut ineq = self.nlp.path_values(&states, &inputs);
        let psi = p.psi(&states[self.n_int]);
        ineq.extend(self.term_ineq.iter().map(|&r| psi[r]));
        let eq: Vec<f64> = self.term_eq.iter().map(|&r| psi[r]).collect();
        if !objective.is_finite() || ineq.iter().chain(&eq).any(|v| !v.is_finite()) {
            return None;
        }
        Some(Iterate {
            inputs,
            states,
            objective,
            ineq,
            eq,
        })
    }

    fn linearize(&self, it: &Iterate) -> Linearization {
        let (n, m, nn) = (self.n, self.m, self.n_int);
        let p = self.nlp.problem();
        let nu = nn * m;
        let stages: Vec<StageLinearization> = (0..nn)
            .map(|k| {
                self.nlp
                    .stage_linearization(k, &it.states[k], &it.inputs[k])
            })
            .collect();

        let mut z = DMatrix::zeros((nn + 1) * n, nu);
        for k in 0..nn {
            let c = k * m;
            let (a, b) = (&stages[k].fx, &stages[k].fu);
            if c > 0 {
                let next = a * z.view((k * n, 0), (n, c));
                z.view_mut(((k + 1) * n, 0), (n, c)).copy_from(&next);
            }
            z.view_mut(((k + 1) * n, c), (n, m)).copy_from(b);
        }

        let mut grad = DVector::zeros(nu);
        for k in 0..nn {
            let c = k * m;
            let (gx, gu) = (&stages[k].cost_x, &stages[k].cost_u);
            if c > 0 {
                let zk = z.view((k * n, 0), (n, c));
                let add = zk.tr_mul(&DVector::from_column_slice(gx));
                let mut head = grad.rows_mut(0, c);
                head += add;
            }
            for i in 0..m {
                grad[c + i] += gu[i];
            }
        }
        let phi_x = p.phi_x(&it.states[nn]);
        let zn = z.view((nn * n, 0), (n, nu));
        grad += zn.tr_mul(&DVector::from_vec(phi_x));

        let path_jac: Vec<(DMatrix<f64>, DMatrix<f64>)> = (0..=nn)
            .map(|k| {
                if p.path_dim == 0 || (k == nn && p.time_mode == TimeMode::Discrete) {
                    return (DMatrix::zeros(p.path_dim, n), DMatrix::zeros(p.path_dim, m));
                }
                let u = &it.inputs[self.nlp.input_index(k)];
                (p.g_x(&it.states[k], u), p.g_u(&it.states[k], u))
            })
            .collect();

        let rows = self.nlp.path_rows();
        let mut ineq_rows = DMatrix::zeros(rows.len() + self.term_ineq.len(), nu);
        for (i, r) in rows.iter().enumerate() {
            let k = r.node;
            let (gx, gu) = &path_jac[k];
            let c = k * m;
            if c > 0 {
                let zk = z.view((k * n, 0), (n, c));
                let row = gx.row(r.row) * zk;
                ineq_rows.view_mut((i, 0), (1, c)).copy_from(&row);
            }
            let j = self.nlp.input_index(k) * m;
            for q in 0..m {
                ineq_rows[(i, j + q)] += gu[(r.row, q)];
            }
        }
        let psi_x = p.psi_x(&it.states[nn]);
        let mut eq_rows = DMatrix::zeros(self.term_eq.len(), nu);
        for (i, &r) in self.term_ineq.iter().enumerate() {
            let row = psi_x.row(r) * zn;
            ineq_rows.row_mut(rows.len() + i).copy_from(&row);
        }
        for (i, &r) in self.term_eq.iter().enumerate() {
            let row = psi_x.row(r) * zn;
            eq_rows.row_mut(i).copy_from(&row);
        }

        Linearization {
            stages,
            z,
            grad,
            ineq_rows,
            eq_rows,
            path_jac,
            psi_x,
        }
    }

    /// Multipliers of ψ in row order.
    fn terminal_multipliers(&self, ineq_mult: &[f64], eq_mult: &[f64]) -> Vec<f64> {
        let p = self.nlp.problem();
        let base = self.nlp.path_rows().len();
        let mut out = vec![0.0; p.terminal_dim];
        for (i, &r) in self.term_ineq.iter().enumerate() {
            out[r] = ineq_mult[base + i];
        }
        for (i, &r) in self.term_eq.iter().enumerate() {
            out[r] = eq_mult[i];
        }
        out
    }

    /// Path multipliers arranged per node.
    fn node_multipliers(&self, ineq_mult: &[f64]) -> Vec<Vec<f64>> {
        let p = self.nlp.problem();
        let mut out = vec![vec![0.0; p.path_dim]; self.n_int + 1];
        for (r, &v) in self.nlp.path_rows().iter().zip(ineq_mult) {
            out[r.node][r.row] = v;
        }
        out
    }

    /// Backward sweep `λ_k = ℓ̃_x + A_kᵀλ_{k+1} + g_xᵀμ_k`,
    /// `λ_N = φ_x + ψ_xᵀν + g_xᵀμ_N`.
    fn adjoints(
        &self,
        it: &Iterate,
        lin: &Linearization,
        node_mu: &[Vec<f64>],
        term_mu: &[f64],
    ) -> Vec<Vec<f64>> {
        let p = self.nlp.problem();
        let nn = self.n_int;
        let mut lam = vec![DVector::zeros(self.n); nn + 1];
        let mut last = DVector::from_vec(p.phi_x(&it.states[nn]))
            + lin.psi_x.tr_mul(&DVector::from_column_slice(term_mu));
        if p.path_dim > 0 {
            last += lin.path_jac[nn]
                .0
                .tr_mul(&DVector::from_column_slice(&node_mu[nn]));
        }
        lam[nn] = last;
        for k in (0..nn).rev() {
            let mut l = DVector::from_column_slice(&lin.stages[k].cost_x)
                + lin.stages[k].fx.tr_mul(&lam[k + 1]);
            if p.path_dim > 0 {
                l += lin.path_jac[k]
                    .0
                    .tr_mul(&DVector::from_column_slice(&node_mu[k]));
            }
            lam[k] = l;
        }
        lam.into_iter().map(|v| v.as_slice().to_vec()).collect()
    }

    /// Condensed Hessian of the Lagrangian.
    fn reduced_hessian(
        &self,
        it: &Iterate,
        lin: &Linearization,
        lam: &[Vec<f64>],
        node_mu: &[Vec<f64>],
        term_mu: &[f64],
    ) -> DMatrix<f64> {
        let (n, m, nn) = (self.n, self.m, self.n_int);
        let p = self.nlp.problem();
        let nu = nn * m;
        let mut hr = DMatrix::zeros(nu, nu);
        for k in 0..nn {
            let lam_next = &lam[k + 1];
            let mu = &node_mu[k];
            let stage = |v: &[f64]| -> f64 {
                let (x, u) = v.split_at(n);
                let mut val = self.nlp.stage_cost(k, x, u);
                let f = self.nlp.stage_map(k, x, u);
                val += f.iter().zip(lam_next).map(|(a, b)| a * b).sum::<f64>();
                if mu.iter().any(|&v| v != 0.0) {
                    let g = p.g(x, u);
                    val += g.iter().zip(mu).map(|(a, b)| a * b).sum::<f64>();
                }
                val
            };
            let mut at = it.states[k].clone();
            at.extend_from_slice(&it.inputs[k]);
            let h = fd::hessian(&at, stage);
            let hxx = h.view((0, 0), (n, n));
            let hxu = h.view((0, n), (n, m));
            let huu = h.view((n, n), (m, m));
            let c = k * m;
            if c > 0 {
                let zk = lin.z.view((k * n, 0), (n, c));
                let t = hxx * zk;
                hr.view_mut((0, 0), (c, c)).gemm_tr(1.0, &zk, &t, 1.0);
                let cross = zk.tr_mul(&hxu);
                let mut blk = hr.view_mut((0, c), (c, m));
                blk += &cross;
                let mut blk = hr.view_mut((c, 0), (m, c));
                blk += cross.transpose();
            }
            let mut blk = hr.view_mut((c, c), (m, m));
            blk += huu;
        }
        // terminal block, in x_N only
        let u_last = it.inputs[nn - 1].clone();
        let mu_n = &node_mu[nn];
        let terminal = |x: &[f64]| -> f64 {
            let mut val = p.phi(x);
            if !term_mu.is_empty() {
                val += p
                    .psi(x)
                    .iter()
                    .zip(term_mu)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            if mu_n.iter().any(|&v| v != 0.0) {
                val += p
                    .g(x, &u_last)
                    .iter()
                    .zip(mu_n)
                    .map(|(a, b)| a * b)
                    .sum::<f64>();
            }
            val
        };
        if p.mayer_cost.is_some() || p.terminal_dim > 0 || mu_n.iter().any(|&v| v != 0.0) {
            let hn = fd::hessian(&it.states[nn], terminal);
            let zn = lin.z.view((nn * n, 0), (n, nu));
            let t = &hn * zn;
            hr.gemm_tr(1.0, &zn, &t, 1.0);
        }
        let sym = (&hr + hr.transpose()) * 0.5;
        sym
    }

    fn run(&self, inputs: Vec<Vec<f64>>) -> Result<Solution> {
        let opts = self.opts;
        let nu = self.n_int * self.m;
        let n_ineq = self.nlp.path_rows().len() + self.term_ineq.len();
        let mut it = self
            .evaluate(inputs)
            .ok_or_else(|| Error::Numerical("initial guess produces non-finite values".into()))?;
        let mut ineq_mult = vec![0.0; n_ineq];
        let mut eq_mult = vec![0.0; self.term_eq.len()];
        let mut rho: f64 = 1.0;
        let mut bfgs: Option<DMatrix<f64>> = None;
        let mut stats = SolverStats::default();
        let mut elastic_streak = 0usize;
        let mut best_violation = f64::INFINITY;
        let mut stalled = 0usize;
        let mut best: Option<(f64, Solution)> = None;

        for iter in 0..opts.max_iter {
            stats.iterations = iter;
            let lin = self.linearize(&it);
            let hess = match opts.hessian {
                HessianMode::Exact => {
                    let node_mu = self.node_multipliers(&ineq_mult);
                    let term_mu = self.terminal_multipliers(&ineq_mult, &eq_mult);
                    let lam = self.adjoints(&it, &lin, &node_mu, &term_mu);
                    convexify(self.reduced_hessian(&it, &lin, &lam, &node_mu, &term_mu))
                }
                HessianMode::Bfgs => bfgs
                    .get_or_insert_with(|| DMatrix::identity(nu, nu) * initial_bfgs_scale(&lin))
                    .clone(),
            };

            let sub = self.subproblem(&it, &lin, &hess, rho)?;
            stats.qp_iterations += sub.qp_iterations;

            // KKT residuals at the current iterate with the new multipliers
            let lag_grad = &lin.grad
                + lin
                    .ineq_rows
                    .tr_mul(&DVector::from_column_slice(&sub.ineq_mult))
                + lin
                    .eq_rows
                    .tr_mul(&DVector::from_column_slice(&sub.eq_mult));
            let stationarity = lag_grad.amax();
            let feasibility = it.violation_max();
            let complementarity = it
                .ineq
                .iter()
                .zip(&sub.ineq_mult)
                .map(|(g, mu)| (g * mu).abs())
                .fold(0.0, f64::max);
            stats.stationarity = stationarity;
            stats.feasibility = feasibility;
            stats.complementarity = complementarity;
            let scale = 1.0 + lin.grad.amax();
            let kkt = (stationarity / scale).max(feasibility).max(complementarity);
            log::trace!(
                "sqp {iter}: J={:.10e} stat={stationarity:.2e} feas={feasibility:.2e} \
                 compl={complementarity:.2e} |du|={:.2e} elastic={}",
                it.objective,
                sub.step.amax(),
                sub.elastic
            );

            if !sub.elastic
                && stationarity <= opts.tolerance * scale
                && feasibility <= opts.tolerance
                && complementarity <= opts.tolerance
            {
                return Ok(self.finish(&it, &lin, &sub.ineq_mult, &sub.eq_mult, stats));
            }
            if best.as_ref().map_or(true, |(b, _)| kkt < *b) {
                let sol = self.finish(&it, &lin, &sub.ineq_mult, &sub.eq_mult, stats.clone());
                best = Some((kkt, sol));
            }

            if sub.elastic {
                stats.elastic_iterations += 1;
                elastic_streak += 1;
                if feasibility < 0.99 * best_violation {
                    best_violation = feasibility;
                    elastic_streak = 0;
                }
                let tiny_step = sub.step.amax() <= 1e-9 * (1.0 + max_abs(&it.inputs));
                if elastic_streak >= opts.infeasibility_patience
                    || (tiny_step && elastic_streak >= 2)
                {
                    return Err(Error::Infeasible {
                        violated: self.violated_names(&it),
                    });
                }
            } else {
                elastic_streak = 0;
                best_violation = best_violation.min(feasibility);
            }

            let mult_max = sub
                .ineq_mult
                .iter()
                .chain(&sub.eq_mult)
                .fold(0.0f64, |a, v| a.max(v.abs()));
            rho = rho.max(1.1 * mult_max + 1e-4);
            if sub.elastic {
                rho = rho.max(elastic_penalty(rho));
            }

            let accepted = self.line_search(&it, &lin, &hess, &sub, rho);
            let Some((next, alpha)) = accepted else {
                stalled += 1;
                if stalled >= 3 {
                    break;
                }
                // restart the quasi-Newton model and try again
                bfgs = None;
                continue;
            };
            stalled = 0;

            if opts.hessian == HessianMode::Bfgs {
                let lin_next = self.linearize(&next);
                let mi = DVector::from_column_slice(&sub.ineq_mult);
                let me = DVector::from_column_slice(&sub.eq_mult);
                let g_new =
                    &lin_next.grad + lin_next.ineq_rows.tr_mul(&mi) + lin_next.eq_rows.tr_mul(&me);
                let g_old = &lin.grad + lin.ineq_rows.tr_mul(&mi) + lin.eq_rows.tr_mul(&me);
                let s = &sub.step * alpha;
                let y = g_new - g_old;
                if let Some(b) = bfgs.as_mut() {
                    damped_bfgs(b, &s, &y);
                }
            }
            ineq_mult = sub.ineq_mult;
            eq_mult = sub.eq_mult;
            it = next;
        }

        let (_, best) = best.expect("at least one iteration");
        Err(Error::NoConvergence {
            iterations: stats.iterations + 1,
            residuals: IterateResiduals {
                stationarity: best.stats.stationarity,
                feasibility: best.stats.feasibility,
                complementarity: best.stats.complementarity,
            },
            best: Some(Box::new(best)),
        })
    }

    fn subproblem(
        &self,
        it: &Iterate,
        lin: &Linearization,
        hess: &DMatrix<f64>,
        rho: f64,
    ) -> Result<Subproblem> {
        match solve_qp(
            hess,
            &lin.grad,
            &lin.eq_rows,
            &it.eq,
            &lin.ineq_rows,
            &it.ineq,
        ) {
            Ok(QpSolution {
                x,
                eq_mult,
                ineq_mult,
                iterations,
            }) => Ok(Subproblem {
                step: x,
                ineq_mult,
                eq_mult,
                elastic: false,
                linear_violation: 0.0,
                qp_iterations: iterations,
            }),
            Err(QpFailure::Infeasible | QpFailure::Degenerate | QpFailure::IterationLimit) => {
                self.elastic_subproblem(it, lin, hess, elastic_penalty(rho))
            }
            Err(e) => Err(Error::Qp(e.to_string())),
        }
    }

    /// QP with one slack per state-dependent row, penalized by
    /// `w·(s + ½s²)`. Input-only rows stay hard.
    fn elastic_subproblem(
        &self,
        it: &Iterate,
        lin: &Linearization,
        hess: &DMatrix<f64>,
        weight: f64,
    ) -> Result<Subproblem> {
        let nu = hess.nrows();
        let n_path = self.nlp.path_rows().len();
        let soft: Vec<usize> = (0..lin.ineq_rows.nrows())
            .filter(|&i| {
                i >= n_path
                    || self.nlp.path_rows()[i].node > 0 && depends_on_state(lin, i, self.nlp)
            })
            .collect();
        let n_eq = lin.eq_rows.nrows();
        let ns = soft.len() + n_eq;
        let dim = nu + ns;
        let mut g = DMatrix::zeros(dim, dim);
        g.view_mut((0, 0), (nu, nu)).copy_from(hess);
        for i in nu..dim {
            g[(i, i)] = weight;
        }
        let mut a = DVector::zeros(dim);
        a.rows_mut(0, nu).copy_from(&lin.grad);
        for i in nu..dim {
            a[i] = weight;
        }
        let n_ineq = lin.ineq_rows.nrows();
        let rows = n_ineq + 2 * n_eq + ns;
        let mut c = DMatrix::zeros(rows, dim);
        let mut c0 = vec![0.0; rows];
        for i in 0..n_ineq {
            c.view_mut((i, 0), (1, nu)).copy_from(&lin.ineq_rows.row(i));
            c0[i] = it.ineq[i];
        }
        for (s, &i) in soft.iter().enumerate() {
            c[(i, nu + s)] = -1.0;
        }
        for e in 0..n_eq {
            let r1 = n_ineq + 2 * e;
            let slack = nu + soft.len() + e;
            c.view_mut((r1, 0), (1, nu)).copy_from(&lin.eq_rows.row(e));
            c0[r1] = it.eq[e];
            c[(r1, slack)] = -1.0;
            let neg = -lin.eq_rows.row(e);
            c.view_mut((r1 + 1, 0), (1, nu)).copy_from(&neg);
            c0[r1 + 1] = -it.eq[e];
            c[(r1 + 1, slack)] = -1.0;
        }
        for s in 0..ns {
            c[(n_ineq + 2 * n_eq + s, nu + s)] = -1.0;
        }
        let sol = solve_qp(&g, &a, &DMatrix::zeros(0, dim), &[], &c, &c0)
            .map_err(|e| Error::Qp(format!("elastic subproblem: {e}")))?;
        let step = sol.x.rows(0, nu).into_owned();
        let mut ineq_mult = sol.ineq_mult[..n_ineq].to_vec();
        for v in &mut ineq_mult {
            *v = v.min(weight);
        }
        let eq_mult = (0..n_eq)
            .map(|e| sol.ineq_mult[n_ineq + 2 * e] - sol.ineq_mult[n_ineq + 2 * e + 1])
            .collect();
        let lin_ineq = &lin.ineq_rows * &step;
        let lin_eq = &lin.eq_rows * &step;
        let linear_violation = (0..n_ineq)
            .map(|i| (lin_ineq[i] + it.ineq[i]).max(0.0))
            .sum::<f64>()
            + (0..n_eq).map(|e| (lin_eq[e] + it.eq[e]).abs()).sum::<f64>();
        Ok(Subproblem {
            step,
            ineq_mult,
            eq_mult,
            elastic: true,
            linear_violation,
            qp_iterations: sol.iterations,
        })
    }

    fn trial(&self, it: &Iterate, step: &DVector<f64>, alpha: f64) -> Option<Iterate> {
        let m = self.m;
        let inputs = it
            .inputs
            .iter()
            .enumerate()
            .map(|(k, u)| (0..m).map(|i| u[i] + alpha * step[k * m + i]).collect())
            .collect();
        self.evaluate(inputs)
    }

    fn line_search(
        &self,
        it: &Iterate,
        lin: &Linearization,
        hess: &DMatrix<f64>,
        sub: &Subproblem,
        rho: f64,
    ) -> Option<(Iterate, f64)> {
        let merit = |x: &Iterate| x.objective + rho * x.violation_l1();
        let m0 = merit(it);
        let slope = lin.grad.dot(&sub.step) - rho * (it.violation_l1() - sub.linear_violation);
        let slope = slope.min(-0.5 * sub.step.dot(&(hess * &sub.step)));
        let noise = 1e-14 * (1.0 + m0.abs());
        let armijo = |x: &Iterate, alpha: f64| merit(x) <= m0 + 1e-4 * alpha * slope + noise;

        if let Some(full) = self.trial(it, &sub.step, 1.0) {
            if armijo(&full, 1.0) {
                return Some((full, 1.0));
            }
            // second-order correction against the Maratos effect
            if !sub.elastic {
                let ineq_c: Vec<f64> = {
                    let lin_step = &lin.ineq_rows * &sub.step;
                    (0..it.ineq.len())
                        .map(|i| full.ineq[i] - lin_step[i])
                        .collect()
                };
                let eq_c: Vec<f64> = {
                    let lin_step = &lin.eq_rows * &sub.step;
                    (0..it.eq.len()).map(|i| full.eq[i] - lin_step[i]).collect()
                };
                if let Ok(soc) = solve_qp(
                    hess,
                    &lin.grad,
                    &lin.eq_rows,
                    &eq_c,
                    &lin.ineq_rows,
                    &ineq_c,
                ) {
                    if let Some(corrected) = self.trial(it, &soc.x, 1.0) {
                        if armijo(&corrected, 1.0) {
                            return Some((corrected, 1.0));
                        }
                    }
                }
            }
        }
        let mut alpha = 0.5;
        while alpha > 1e-12 {
            if let Some(t) = self.trial(it, &sub.step, alpha) {
                if armijo(&t, alpha) {
                    return Some((t, alpha));
                }
            }
            alpha *= 0.5;
        }
        None
    }

    fn violated_names(&self, it: &Iterate) -> Vec<String> {
        let tol = self.opts.tolerance.max(1e-9);
        let rows = self.nlp.path_rows();
        let mut out: Vec<String> = it
            .ineq
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > tol)
            .map(|(i, _)| {
                if i < rows.len() {
                    format!("g[{}] at node {}", rows[i].row, rows[i].node)
                } else {
                    format!("psi[{}]", self.term_ineq[i - rows.len()])
                }
            })
            .collect();
        out.extend(
            it.eq
                .iter()
                .enumerate()
                .filter(|(_, v)| v.abs() > tol)
                .map(|(i, _)| format!("psi[{}] (equality)", self.term_eq[i])),
        );
        out
    }

    fn finish(
        &self,
        it: &Iterate,
        lin: &Linearization,
        ineq_mult: &[f64],
        eq_mult: &[f64],
        stats: SolverStats,
    ) -> Solution {
        let p = self.nlp.problem();
        let node_mu = self.node_multipliers(ineq_mult);
        let term_mu = self.terminal_multipliers(ineq_mult, eq_mult);
        let adjoints = self.adjoints(it, lin, &node_mu, &term_mu);
        let grid = self.nlp.grid();
        let multipliers = match p.time_mode {
            TimeMode::Discrete => node_mu,
            TimeMode::Continuous => node_mu
                .into_iter()
                .enumerate()
                .map(|(k, mu)| {
                    let h = grid.step(k.min(self.n_int - 1));
                    mu.into_iter().map(|v| v / h).collect()
                })
                .collect(),
        };
        Solution {
            problem: p.name.clone(),
            time_mode: p.time_mode,
            grid: grid.clone(),
            states: it.states.clone(),
            inputs: it.inputs.clone(),
            adjoints,
            multipliers,
            terminal_multipliers: term_mu,
            quadrature: self.nlp.quadrature(),
            objective: it.objective,
            solver_tolerance: self.opts.tolerance,
            stats,
        }
    }
}

fn depends_on_state(lin: &Linearization, row: usize, nlp: &DiscreteNlp) -> bool {
    let r = nlp.path_rows()[row];
    lin.path_jac[r.node].0.row(r.row).amax() > 0.0
}

fn elastic_penalty(rho: f64) -> f64 {
    (10.0 * rho).max(100.0)
}

fn max_abs(inputs: &[Vec<f64>]) -> f64 {
    inputs.iter().flatten().fold(0.0, |a, v| a.max(v.abs()))
}

fn initial_bfgs_scale(lin: &Linearization) -> f64 {
    let s = lin.grad.amax();
    if s > 0.0 {
        s
    } else {
        1.0
    }
}

/// Keeps a symmetric matrix positive definite: unchanged when Cholesky
/// succeeds, otherwise eigenvalues are mirrored and floored.
fn convexify(h: DMatrix<f64>) -> DMatrix<f64> {
    let n = h.nrows();
    let scale = h.amax().max(1e-300);
    let floor = 1e-10 * scale;
    if let Some(chol) = h.clone().cholesky() {
        let l = chol.l();
        let min_pivot = (0..n)
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(f64::INFINITY, f64::min);
        if min_pivot > floor {
            return h;
        }
    }
    let eig = h.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.abs().max(floor));
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Powell-damped BFGS update keeping `b` positive definite.
fn damped_bfgs(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>) {
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if !(sbs > 0.0) {
        return;
    }
    let sy = s.dot(y);
    let theta = if sy >= 0.2 * sbs {
        1.0
    } else {
        0.8 * sbs / (sbs - sy)
    };
    let r = y * theta + &bs * (1.0 - theta);
    let sr = s.dot(&r);
    if !(sr > 0.0) {
        return;
    }
    *b -= &bs * bs.transpose() / sbs;
    *b += &r * r.transpose() / sr;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convexify_keeps_pd_and_fixes_indefinite() {
        let pd = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        assert_eq!(convexify(pd.clone()), pd);
        let ind = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -3.0]);
        let fixed = convexify(ind);
        assert!((fixed[(1, 1)] - 3.0).abs() < 1e-12);
        assert!(fixed.cholesky().is_some());
    }

    #[test]
    fn bfgs_secant() {
        let mut b = DMatrix::identity(2, 2);
        let s = DVector::from_vec(vec![1.0, 0.0]);
        let y = DVector::from_vec(vec![3.0, 1.0]);
        damped_bfgs(&mut b, &s, &y);
        let bs = &b * &s;
        assert!((bs - y).amax() < 1e-12);
    }
}
