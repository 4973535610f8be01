//! Dense strictly convex QP by the dual active-set method of Goldfarb and
//! Idnani, with the usual Givens updates of `J = L⁻ᵀQ` and the triangular
//! factor `R` of the active constraint normals.
//!
//! Solves `min ½xᵀGx + aᵀx` s.t. `E x + e = 0`, `C x + c ≤ 0` and returns
//! multipliers for the Lagrangian `½xᵀGx + aᵀx + νᵀ(Ex + e) + μᵀ(Cx + c)`.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub(crate) struct QpSolution {
    pub x: DVector<f64>,
    pub eq_mult: Vec<f64>,
    pub ineq_mult: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QpFailure {
    NotPositiveDefinite,
    Infeasible,
    Degenerate,
    IterationLimit,
}

impl std::fmt::Display for QpFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QpFailure::NotPositiveDefinite => "Hessian not positive definite",
            QpFailure::Infeasible => "constraints inconsistent",
            QpFailure::Degenerate => "linearly dependent active constraints",
            QpFailure::IterationLimit => "iteration limit",
        };
        f.write_str(s)
    }
}

struct Factors {
    j: DMatrix<f64>,
    r: DMatrix<f64>,
    iq: usize,
    r_norm: f64,
}

impl Factors {
    /// `d` must be `Jᵀn` for the constraint being added.
    fn add(&mut self, d: &mut DVector<f64>) -> bool {
        let n = self.j.nrows();
        let iq = self.iq;
        for jj in (iq + 1..n).rev() {
            let (mut cc, mut ss) = (d[jj - 1], d[jj]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            d[jj] = 0.0;
            ss /= h;
            cc /= h;
            if cc < 0.0 {
                cc = -cc;
                ss = -ss;
                d[jj - 1] = -h;
            } else {
                d[jj - 1] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in 0..n {
                let t1 = self.j[(k, jj - 1)];
                let t2 = self.j[(k, jj)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj - 1)] = a;
                self.j[(k, jj)] = xny * (t1 + a) - t2;
            }
        }
        for i in 0..=iq {
            self.r[(i, iq)] = d[i];
        }
        self.iq += 1;
        if d[iq].abs() <= f64::EPSILON * 10.0 * self.r_norm {
            return false;
        }
        self.r_norm = self.r_norm.max(d[iq].abs());
        true
    }

    /// Removes active column `qq` and restores the triangular form.
    fn remove(&mut self, qq: usize) {
        let n = self.j.nrows();
        let iq = self.iq;
        for i in qq..iq - 1 {
            for k in 0..n {
                self.r[(k, i)] = self.r[(k, i + 1)];
            }
        }
        for k in 0..n {
            self.r[(k, iq - 1)] = 0.0;
        }
        self.iq -= 1;
        let iq = self.iq;
        for jj in qq..iq {
            let (mut cc, mut ss) = (self.r[(jj, jj)], self.r[(jj + 1, jj)]);
            let h = cc.hypot(ss);
            if h == 0.0 {
                continue;
            }
            cc /= h;
            ss /= h;
            self.r[(jj + 1, jj)] = 0.0;
            if cc < 0.0 {
                self.r[(jj, jj)] = -h;
                cc = -cc;
                ss = -ss;
            } else {
                self.r[(jj, jj)] = h;
            }
            let xny = ss / (1.0 + cc);
            for k in jj + 1..iq {
                let t1 = self.r[(jj, k)];
                let t2 = self.r[(jj + 1, k)];
                let a = t1 * cc + t2 * ss;
                self.r[(jj, k)] = a;
                self.r[(jj + 1, k)] = xny * (t1 + a) - t2;
            }
            for k in 0..n {
                let t1 = self.j[(k, jj)];
                let t2 = self.j[(k, jj + 1)];
                let a = t1 * cc + t2 * ss;
                self.j[(k, jj)] = a;
                self.j[(k, jj + 1)] = xny * (a + t1) - t2;
            }
        }
    }

    /// Returns `(z, r)`: primal step direction and dual step for normal `np`.
    fn directions(&self, np: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let n = self.j.nrows();
        let iq = self.iq;
        let d = self.j.tr_mul(np);
        let mut z = DVector::zeros(n);
        for jj in iq..n {
            let dj = d[jj];
            if dj != 0.0 {
                z.axpy(dj, &self.j.column(jj), 1.0);
            }
        }
        let mut r = DVector::zeros(iq);
        for i in (0..iq).rev() {
            let mut s = d[i];
            for k in i + 1..iq {
                s -= self.r[(i, k)] * r[k];
            }
            r[i] = s / self.r[(i, i)];
        }
        (z, r, d)
    }
}

pub(crate) fn solve_qp(
    g: &DMatrix<f64>,
    a: &DVector<f64>,
    eq: &DMatrix<f64>,
    eq_const: &[f64],
    ineq: &DMatrix<f64>,
    ineq_const: &[f64],
) -> Result<QpSolution, QpFailure> {
    let n = g.nrows();
    let me = eq.nrows();
    let mi = ineq.nrows();
    let chol = g.clone().cholesky().ok_or(QpFailure::NotPositiveDefinite)?;
    let lt = chol.l().transpose();
    let j = lt
        .solve_upper_triangular(&DMatrix::identity(n, n))
        .ok_or(QpFailure::NotPositiveDefinite)?;
    let mut fac = Factors {
        j,
        r: DMatrix::zeros(n, n + 1),
        iq: 0,
        r_norm: 1.0,
    };

    // unconstrained minimum
    let mut x = -(&fac.j * fac.j.tr_mul(a));
    // active[i] < me: equality, otherwise me + inequality index
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n + 1);

    // GI form: n_iᵀx ≥ b_i with n_i = −row, b_i = const
    let normal = |id: usize| -> DVector<f64> {
        if id < me {
            -eq.row(id).transpose()
        } else {
            -ineq.row(id - me).transpose()
        }
    };
    let bound = |id: usize| {
        if id < me {
            eq_const[id]
        } else {
            ineq_const[id - me]
        }
    };

    for i in 0..me {
        let np = normal(i);
        let (z, r, mut d) = fac.directions(&np);
        let zn = z.dot(&np);
        let s = np.dot(&x) - bound(i);
        let t2 = if z.norm() > f64::EPSILON * 100.0 {
            -s / zn
        } else {
            0.0
        };
        x.axpy(t2, &z, 1.0);
        for (k, uk) in u.iter_mut().enumerate() {
            *uk -= t2 * r[k];
        }
        u.push(t2);
        active.push(i);
        if !fac.add(&mut d) {
            return Err(QpFailure::Degenerate);
        }
    }

    let max_iter = 50 * (n + mi + 10);
    let mut iterations = 0;
    let row_norms: Vec<f64> = (0..mi).map(|i| ineq.row(i).norm()).collect();
    loop {
        // step 1: most violated inactive inequality
        let xn = x.norm();
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..mi {
            let id = me + i;
            if active.contains(&id) {
                continue;
            }
            let s = -ineq.row(i).dot(&x.transpose()) - ineq_const[i];
            let tol = 1e-11 * (1.0 + ineq_const[i].abs() + row_norms[i] * xn);
            if s < -tol && pick.map_or(true, |(_, best)| s < best) {
                pick = Some((id, s));
            }
        }
        let Some((p, _)) = pick else { break };
        let np = normal(p);
        u.push(0.0);

        // step 2: move toward feasibility of p, dropping blocking constraints
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpFailure::IterationLimit);
            }
            let (z, r, mut d) = fac.directions(&np);
            let iq = fac.iq;
            let mut t1 = f64::INFINITY;
            let mut drop: Option<usize> = None;
            for k in me.min(iq)..iq {
                if active[k] >= me && r[k] > 0.0 {
                    let ratio = u[k] / r[k];
                    if ratio < t1 {
                        t1 = ratio;
                        drop = Some(k);
                    }
                }
            }
            let zn = z.dot(&np);
            let s = np.dot(&x) - bound(p);
            let t2 = if z.norm() > f64::EPSILON * 100.0 * (1.0 + np.norm()) && zn > 0.0 {
                -s / zn
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpFailure::Infeasible);
            }
            if !t2.is_finite() {
                for k in 0..iq {
                    u[k] -= t * r[k];
                }
                u[iq] += t;
                let qq = drop.unwrap();
                active.remove(qq);
                u.remove(qq);
                fac.remove(qq);
                continue;
            }
            x.axpy(t, &z, 1.0);
            for k in 0..iq {
                u[k] -= t * r[k];
            }
            u[iq] += t;
            if t2 <= t1 {
                active.push(p);
                if !fac.add(&mut d) {
                    return Err(QpFailure::Degenerate);
                }
                break;
            }
            let qq = drop.unwrap();
            active.remove(qq);
            u.remove(qq);
            fac.remove(qq);
        }
    }

    let mut eq_mult = vec![0.0; me];
    let mut ineq_mult = vec![0.0; mi];
    for (k, &id) in active.iter().enumerate() {
        if id < me {
            eq_mult[id] = u[k];
        } else {
            ineq_mult[id - me] = u[k].max(0.0);
        }
    }
    Ok(QpSolution {
        x,
        eq_mult,
        ineq_mult,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn kkt_violation(
        g: &DMatrix<f64>,
        a: &DVector<f64>,
        eq: &DMatrix<f64>,
        e: &[f64],
        ineq: &DMatrix<f64>,
        c: &[f64],
        s: &QpSolution,
    ) -> f64 {
        let nu = DVector::from_column_slice(&s.eq_mult);
        let mu = DVector::from_column_slice(&s.ineq_mult);
        let stat = g * &s.x + a + eq.transpose() * nu + ineq.transpose() * &mu;
        let mut worst = stat.amax();
        let ev = eq * &s.x;
        for i in 0..e.len() {
            worst = worst.max((ev[i] + e[i]).abs());
        }
        let iv = ineq * &s.x;
        for i in 0..c.len() {
            let gi = iv[i] + c[i];
            worst = worst.max(gi.max(0.0)).max((gi * mu[i]).abs()).max(-mu[i]);
        }
        worst
    }

    #[test]
    fn box_constrained() {
        // min ½‖x‖² − x₀ − 3x₁ s.t. x ≤ 1
        let g = DMatrix::identity(2, 2);
        let a = DVector::from_vec(vec![-1.0, -3.0]);
        let ineq = DMatrix::identity(2, 2);
        let s = solve_qp(&g, &a, &DMatrix::zeros(0, 2), &[], &ineq, &[-1.0, -1.0]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-12 && (s.x[1] - 1.0).abs() < 1e-12);
        assert!((s.ineq_mult[0]).abs() < 1e-12);
        assert!((s.ineq_mult[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equality_and_inequality() {
        // min ½‖x‖² s.t. x₀ + x₁ + x₂ = 3, x₀ ≥ 2
        let g = DMatrix::identity(3, 3);
        let a = DVector::zeros(3);
        let eq = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let ineq = DMatrix::from_row_slice(1, 3, &[-1.0, 0.0, 0.0]);
        let s = solve_qp(&g, &a, &eq, &[-3.0], &ineq, &[2.0]).unwrap();
        assert!((s.x[0] - 2.0).abs() < 1e-12);
        assert!((s.x[1] - 0.5).abs() < 1e-12);
        assert!(kkt_violation(&g, &a, &eq, &[-3.0], &ineq, &[2.0], &s) < 1e-12);
    }

    #[test]
    fn detects_infeasibility() {
        let g = DMatrix::identity(1, 1);
        let a = DVector::zeros(1);
        let ineq = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        // x ≤ −1 and x ≥ 1
        let r = solve_qp(&g, &a, &DMatrix::zeros(0, 1), &[], &ineq, &[1.0, 1.0]);
        assert_eq!(r.unwrap_err(), QpFailure::Infeasible);
    }

    proptest! {
        #[test]
        fn random_feasible_qps_satisfy_kkt(
            seed in proptest::collection::vec(-1.0f64..1.0, 6 * 6 + 6 + 8 * 6 + 8),
        ) {
            let n = 6;
            let mi = 8;
            let b = DMatrix::from_column_slice(n, n, &seed[..n * n]);
            let g = &b * b.transpose() + DMatrix::identity(n, n) * 0.1;
            let a = DVector::from_column_slice(&seed[n * n..n * n + n]);
            let ineq = DMatrix::from_row_slice(mi, n, &seed[n * n + n..n * n + n + mi * n]);
            // x = 0 strictly feasible
            let c: Vec<f64> = seed[n * n + n + mi * n..].iter().map(|v| -0.1 - v.abs()).collect();
            let eq = DMatrix::zeros(0, n);
            let s = solve_qp(&g, &a, &eq, &[], &ineq, &c).unwrap();
            prop_assert!(kkt_violation(&g, &a, &eq, &[], &ineq, &c, &s) < 1e-8);
        }
    }
}
