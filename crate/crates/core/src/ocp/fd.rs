//! Central finite differences used whenever a problem does not supply an
//! analytic derivative.

use nalgebra::DMatrix;

/// Step for central differences at `value`: cbrt(eps) scaled by magnitude.
pub fn step(value: f64) -> f64 {
    f64::EPSILON.cbrt() * value.abs().max(1.0)
}

/// Jacobian of `f` at `at`, one column per coordinate of `at`.
pub fn jacobian<F>(at: &[f64], rows: usize, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut jac = DMatrix::zeros(rows, at.len());
    let mut probe = at.to_vec();
    for j in 0..at.len() {
        let h = step(at[j]);
        probe[j] = at[j] + h;
        let plus = f(&probe);
        probe[j] = at[j] - h;
        let minus = f(&probe);
        probe[j] = at[j];
        // the actual spacing, not 2h, keeps rounding of at[j] ± h out of the quotient
        let width = (at[j] + h) - (at[j] - h);
        for i in 0..rows {
            jac[(i, j)] = (plus[i] - minus[i]) / width;
        }
    }
    jac
}

pub fn gradient<F>(at: &[f64], mut f: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = at.to_vec();
    (0..at.len())
        .map(|j| {
            let h = step(at[j]);
            probe[j] = at[j] + h;
            let plus = f(&probe);
            probe[j] = at[j] - h;
            let minus = f(&probe);
            probe[j] = at[j];
            (plus - minus) / ((at[j] + h) - (at[j] - h))
        })
        .collect()
}

/// Symmetric Hessian of a scalar function from function values only.
pub fn hessian<F>(at: &[f64], mut f: F) -> DMatrix<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = at.len();
    let mut hess = DMatrix::zeros(n, n);
    let steps: Vec<f64> = at
        .iter()
        .map(|v| f64::EPSILON.powf(0.25) * v.abs().max(1.0))
        .collect();
    let mut probe = at.to_vec();
    let f0 = f(&probe);
    for i in 0..n {
        let hi = steps[i];
        probe[i] = at[i] + hi;
        let fp = f(&probe);
        probe[i] = at[i] - hi;
        let fm = f(&probe);
        probe[i] = at[i];
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64, probe: &mut Vec<f64>| {
                probe[i] = at[i] + si * hi;
                probe[j] = at[j] + sj * hj;
                let v = f(probe);
                probe[i] = at[i];
                probe[j] = at[j];
                v
            };
            let pp = corner(1.0, 1.0, &mut probe);
            let pm = corner(1.0, -1.0, &mut probe);
            let mp = corner(-1.0, 1.0, &mut probe);
            let mm = corner(-1.0, -1.0, &mut probe);
            let v = (pp - pm - mp + mm) / (4.0 * hi * hj);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    hess
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_of_polynomial() {
        let g = gradient(&[1.5, -2.0], |v| v[0].powi(3) + v[0] * v[1]);
        assert!((g[0] - (3.0 * 2.25 - 2.0)).abs() < 1e-8);
        assert!((g[1] - 1.5).abs() < 1e-8);
    }

    #[test]
    fn hessian_of_bilinear_form() {
        let h = hessian(&[0.3, 0.7], |v| v[0] * v[0] + 3.0 * v[0] * v[1]);
        assert!((h[(0, 0)] - 2.0).abs() < 1e-6);
        assert!((h[(0, 1)] - 3.0).abs() < 1e-6);
        assert!(h[(1, 1)].abs() < 1e-6);
    }
}
