use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{fd, OcpProblem, TimeMode};
use crate::error::{check_dim, Error, IterateResiduals, Result};

/// Controlled steady state with its steady multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub x_bar: Vec<f64>,
    pub u_bar: Vec<f64>,
    pub lambda_bar: Vec<f64>,
    pub mu_bar: Vec<f64>,
    /// `ℓ(x̄, ū)`
    pub cost: f64,
}

impl Equilibrium {
    /// ‖f(x̄,ū) − x̄‖ (discrete) or ‖f(x̄,ū)‖ (continuous).
    pub fn equilibrium_residual(&self, problem: &OcpProblem) -> f64 {
        let f = problem.f(&self.x_bar, &self.u_bar);
        let r: f64 = match problem.time_mode {
            TimeMode::Discrete => f
                .iter()
                .zip(&self.x_bar)
                .map(|(a, b)| (a - b).powi(2))
                .sum(),
            TimeMode::Continuous => f.iter().map(|a| a * a).sum(),
        };
        r.sqrt()
    }

    /// Largest residual of the steady optimality system.
    pub fn nco_residual(&self, problem: &OcpProblem) -> f64 {
        let (sx, su) = steady_stationarity(
            problem,
            &self.x_bar,
            &self.u_bar,
            &self.lambda_bar,
            &self.mu_bar,
        );
        let g = problem.g(&self.x_bar, &self.u_bar);
        let compl = g
            .iter()
            .zip(&self.mu_bar)
            .map(|(gi, mi)| (gi * mi).abs())
            .fold(0.0, f64::max);
        let primal = g.iter().fold(0.0f64, |a, &v| a.max(v));
        let dual = self.mu_bar.iter().fold(0.0f64, |a, &v| a.max(-v));
        sx.iter()
            .chain(&su)
            .map(|v| v.abs())
            .fold(self.equilibrium_residual(problem), f64::max)
            .max(compl)
            .max(primal)
            .max(dual)
    }

    pub fn norm_x(&self) -> f64 {
        self.x_bar.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Gradients of the steady Lagrangian with respect to `x` and `u`.
fn steady_stationarity(
    problem: &OcpProblem,
    x: &[f64],
    u: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let n = problem.state_dim;
    let lam = DVector::from_column_slice(lambda);
    let muv = DVector::from_column_slice(mu);
    let mut jx = problem.f_x(x, u);
    if problem.time_mode == TimeMode::Discrete {
        jx -= DMatrix::identity(n, n);
    }
    let sx = DVector::from_vec(problem.l_x(x, u))
        + jx.transpose() * &lam
        + problem.g_x(x, u).transpose() * &muv;
    let su = DVector::from_vec(problem.l_u(x, u))
        + problem.f_u(x, u).transpose() * &lam
        + problem.g_u(x, u).transpose() * &muv;
    (sx.as_slice().to_vec(), su.as_slice().to_vec())
}

/// `H = ℓ + λᵀf + μᵀg` with the cost multiplier fixed to one.
pub fn hamiltonian(
    problem: &OcpProblem,
    x: &[f64],
    u: &[f64],
    lambda: &[f64],
    mu: &[f64],
) -> Result<f64> {
    check_dim("x", problem.state_dim, x.len())?;
    check_dim("u", problem.input_dim, u.len())?;
    check_dim("lambda", problem.state_dim, lambda.len())?;
    check_dim("mu", problem.path_dim, mu.len())?;
    if let Some(i) = mu.iter().position(|&m| m < 0.0) {
        return Err(Error::invalid("mu", format!("component {i} is negative")));
    }
    let f = problem.f(x, u);
    let g = problem.g(x, u);
    Ok(problem.l(x, u)
        + lambda.iter().zip(&f).map(|(a, b)| a * b).sum::<f64>()
        + mu.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>())
}

#[derive(Debug, Clone)]
pub struct SteadyStateOptions {
    pub max_iter: usize,
    pub tolerance: f64,
    /// Largest violation of `g` tolerated at the initial guess.
    pub start_slack: f64,
}

impl Default for SteadyStateOptions {
    fn default() -> Self {
        SteadyStateOptions {
            max_iter: 200,
            tolerance: 1e-11,
            start_slack: 1e-2,
        }
    }
}

/// Solves the steady-state problem `min ℓ(x̄,ū)` subject to the equilibrium
/// condition and `g ≤ 0` by damped Newton on its KKT system.
///
/// Inequalities are handled by an active set: the most violated inactive row
/// enters, the most negative multiplier leaves, ties stay inactive. The KKT
/// point returned is the one Newton reaches from `guess`.
pub fn solve_steady_state(problem: &OcpProblem, guess: (&[f64], &[f64])) -> Result<Equilibrium> {
    solve_steady_state_with(problem, guess, &SteadyStateOptions::default())
}

pub fn solve_steady_state_with(
    problem: &OcpProblem,
    guess: (&[f64], &[f64]),
    opts: &SteadyStateOptions,
) -> Result<Equilibrium> {
    let (x0, u0) = guess;
    check_dim("initial_guess.x", problem.state_dim, x0.len())?;
    check_dim("initial_guess.u", problem.input_dim, u0.len())?;
    let n = problem.state_dim;
    let m = problem.input_dim;
    let ng = problem.path_dim;

    let g0 = problem.g(x0, u0);
    let bad: Vec<usize> = (0..ng).filter(|&j| g0[j] > opts.start_slack).collect();
    if !bad.is_empty() {
        return Err(Error::InfeasibleStart {
            rows: bad,
            slack: opts.start_slack,
        });
    }

    let mut x = x0.to_vec();
    let mut u = u0.to_vec();
    let mut lambda = initial_costate(problem, &x, &u);
    let mut mu = vec![0.0; ng];
    let mut active: Vec<usize> = Vec::new();
    let mut iterations = 0;

    loop {
        // inner Newton on the equality system for the current active set
        let unknowns = n + m + n + active.len();
        let pack = |x: &[f64], u: &[f64], l: &[f64], mu: &[f64], active: &[usize]| {
            let mut v = Vec::with_capacity(unknowns);
            v.extend_from_slice(x);
            v.extend_from_slice(u);
            v.extend_from_slice(l);
            v.extend(active.iter().map(|&j| mu[j]));
            v
        };
        let residual = |v: &[f64]| -> Vec<f64> {
            let (x, rest) = v.split_at(n);
            let (u, rest) = rest.split_at(m);
            let (l, ma) = rest.split_at(n);
            let mut full_mu = vec![0.0; ng];
            for (k, &j) in active.iter().enumerate() {
                full_mu[j] = ma[k];
            }
            let mut r = problem.f(x, u);
            if problem.time_mode == TimeMode::Discrete {
                for (ri, xi) in r.iter_mut().zip(x) {
                    *ri -= xi;
                }
            }
            let (sx, su) = steady_stationarity(problem, x, u, l, &full_mu);
            r.extend(sx);
            r.extend(su);
            if !active.is_empty() {
                let g = problem.g(x, u);
                r.extend(active.iter().map(|&j| g[j]));
            }
            r
        };
        let norm = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();

        let mut v = pack(&x, &u, &lambda, &mu, &active);
        let mut r = residual(&v);
        while norm(&r) > opts.tolerance * (1.0 + norm(&v)) {
            if iterations >= opts.max_iter {
                return Err(no_convergence(iterations, &r, n, m));
            }
            iterations += 1;
            let jac = fd::jacobian(&v, r.len(), &residual);
            let rhs = -DVector::from_column_slice(&r);
            let step = match jac.clone().lu().solve(&rhs) {
                Some(s) if s.iter().all(|c| c.is_finite()) => s,
                _ => jac
                    .svd(true, true)
                    .solve(&rhs, 1e-12)
                    .map_err(|e| Error::Numerical(e.to_string()))?,
            };
            let r0 = norm(&r);
            let mut alpha = 1.0;
            loop {
                let trial: Vec<f64> = v
                    .iter()
                    .zip(step.iter())
                    .map(|(a, b)| a + alpha * b)
                    .collect();
                let rt = residual(&trial);
                if norm(&rt) <= (1.0 - 1e-4 * alpha) * r0 || alpha < 1e-8 {
                    v = trial;
                    r = rt;
                    break;
                }
                alpha *= 0.5;
            }
        }
        x = v[..n].to_vec();
        u = v[n..n + m].to_vec();
        lambda = v[n + m..2 * n + m].to_vec();
        mu = vec![0.0; ng];
        for (k, &j) in active.iter().enumerate() {
            mu[j] = v[2 * n + m + k];
        }

        // active-set update
        let g = problem.g(&x, &u);
        let feas_tol = 1e-9;
        let entering = (0..ng)
            .filter(|j| !active.contains(j) && g[*j] > feas_tol)
            .max_by(|&a, &b| g[a].total_cmp(&g[b]));
        let leaving = active
            .iter()
            .copied()
            .filter(|&j| mu[j] < -feas_tol)
            .min_by(|&a, &b| mu[a].total_cmp(&mu[b]));
        if (entering.is_some() || leaving.is_some()) && iterations >= opts.max_iter {
            return Err(no_convergence(iterations, &r, n, m));
        }
        match (entering, leaving) {
            (None, None) => break,
            (_, Some(j)) => {
                active.retain(|&k| k != j);
                mu[j] = 0.0;
            }
            (Some(j), None) => active.push(j),
        }
    }

    let eq = Equilibrium {
        cost: problem.l(&x, &u),
        x_bar: x,
        u_bar: u,
        lambda_bar: lambda,
        mu_bar: mu,
    };
    log::debug!(
        "steady state after {iterations} Newton steps: x̄={:?} ū={:?}",
        eq.x_bar,
        eq.u_bar
    );
    Ok(eq)
}

fn no_convergence(iterations: usize, r: &[f64], n: usize, m: usize) -> Error {
    let max_abs = |s: &[f64]| s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Error::NoConvergence {
        iterations,
        residuals: IterateResiduals {
            feasibility: max_abs(&r[..n]),
            stationarity: max_abs(&r[n..(2 * n + m).min(r.len())]),
            complementarity: max_abs(&r[(2 * n + m).min(r.len())..]),
        },
        best: None,
    }
}

/// Least-squares costate from the steady stationarity with `μ = 0`.
fn initial_costate(problem: &OcpProblem, x: &[f64], u: &[f64]) -> Vec<f64> {
    let n = problem.state_dim;
    let m = problem.input_dim;
    let mut jx = problem.f_x(x, u);
    if problem.time_mode == TimeMode::Discrete {
        jx -= DMatrix::identity(n, n);
    }
    let fu = problem.f_u(x, u);
    let mut a = DMatrix::zeros(n + m, n);
    a.view_mut((0, 0), (n, n)).copy_from(&jx.transpose());
    a.view_mut((n, 0), (m, n)).copy_from(&fu.transpose());
    let mut b = DVector::zeros(n + m);
    for (i, v) in problem.l_x(x, u).into_iter().enumerate() {
        b[i] = -v;
    }
    for (i, v) in problem.l_u(x, u).into_iter().enumerate() {
        b[n + i] = -v;
    }
    a.svd(true, true)
        .solve(&b, 1e-12)
        .map(|s| s.as_slice().to_vec())
        .unwrap_or_else(|_| vec![0.0; n])
}
