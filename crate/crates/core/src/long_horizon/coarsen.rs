use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ocp::TimeGrid;

/// Late-horizon coarsening of the prediction grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Coarsening {
    /// Cap on the quotient of the largest and smallest coarse interval.
    pub ratio: f64,
    /// Share of the intervals spent uniformly on `[0, δ]`.
    pub fine_fraction: f64,
}

impl Default for Coarsening {
    fn default() -> Self {
        Coarsening {
            ratio: 8.0,
            fine_fraction: 0.5,
        }
    }
}

/// Grid with uniform spacing on `[0, δ]` and geometrically growing intervals
/// on `[δ, T_opt]`, `n` intervals in total and half of them fine.
pub fn coarsened_grid(t_opt: f64, delta: f64, n: usize, ratio: f64) -> Result<TimeGrid> {
    coarsened_grid_with(
        t_opt,
        delta,
        n,
        &Coarsening {
            ratio,
            ..Coarsening::default()
        },
    )
}

/// The coarse intervals are `h₀qⁱ`, `i = 0, …, n_c − 1`. They continue the
/// fine spacing (`h₀ = hq`) unless that needs `q^{n_c−1} > ratio`, in which
/// case `q = ratio^{1/(n_c−1)}` and `h₀` follows from the sum. `ratio = 1`
/// gives the uniform grid.
pub fn coarsened_grid_with(t_opt: f64, delta: f64, n: usize, c: &Coarsening) -> Result<TimeGrid> {
    if n < 4 {
        return Err(Error::invalid("intervals", "coarsening needs at least 4"));
    }
    if !(c.ratio >= 1.0) || !c.ratio.is_finite() {
        return Err(Error::invalid("ratio", "must be finite and at least 1"));
    }
    if !(c.fine_fraction > 0.0 && c.fine_fraction < 1.0) {
        return Err(Error::invalid("fine_fraction", "must lie in (0, 1)"));
    }
    if !(delta > 0.0 && delta < t_opt) || !t_opt.is_finite() {
        return Err(Error::invalid("delta", "need 0 < δ < T_opt"));
    }
    if c.ratio == 1.0 {
        return TimeGrid::uniform(t_opt, n);
    }
    let n_fine = ((n as f64 * c.fine_fraction).round() as usize).clamp(1, n - 1);
    let n_coarse = n - n_fine;
    let h = delta / n_fine as f64;
    let rest = t_opt - delta;
    // Σ_{i=1}^{n_c} h qⁱ = rest
    let continued = |q: f64| h * (1..=n_coarse).map(|i| q.powi(i as i32)).sum::<f64>() - rest;
    if continued(1.0) > 0.0 {
        return Err(Error::invalid(
            "intervals",
            format!("{n_coarse} coarse intervals would be finer than the fine spacing {h}"),
        ));
    }
    let (mut lo, mut hi) = (1.0, 2.0);
    while continued(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if continued(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    let mut h0 = h * q;
    if n_coarse > 1 && q.powi(n_coarse as i32 - 1) > c.ratio {
        q = c.ratio.powf(1.0 / (n_coarse - 1) as f64);
        let sum: f64 = (0..n_coarse).map(|i| q.powi(i as i32)).sum();
        h0 = rest / sum;
    }
    let mut nodes: Vec<f64> = (0..=n_fine).map(|k| k as f64 * h).collect();
    nodes[n_fine] = delta;
    let mut t = delta;
    for i in 0..n_coarse {
        t += h0 * q.powi(i as i32);
        nodes.push(t);
    }
    nodes[n] = t_opt;
    TimeGrid::new(nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_one_is_uniform() {
        let g = coarsened_grid(2.0, 0.3, 10, 1.0).unwrap();
        assert_eq!(g, TimeGrid::uniform(2.0, 10).unwrap());
    }

    #[test]
    fn capped_growth() {
        let g = coarsened_grid(1.0, 0.1, 20, 8.0).unwrap();
        assert_eq!(g.intervals(), 20);
        for k in 0..10 {
            assert!((g.step(k) - 0.01).abs() < 1e-12);
        }
        let coarse: Vec<f64> = (10..20).map(|k| g.step(k)).collect();
        let sum: f64 = coarse.iter().sum();
        assert!((sum - 0.9).abs() < 1e-12);
        let q = 8f64.powf(1.0 / 9.0);
        for w in coarse.windows(2) {
            assert!((w[1] / w[0] - q).abs() < 1e-9);
        }
        let ratio = coarse[9] / coarse[0];
        assert!(ratio <= 8.0 + 1e-9 && ratio >= 8.0 - 1e-9);
        // the geometric-sum equation, solved independently
        let h0 = 0.9 * (q - 1.0) / (q.powi(10) - 1.0);
        assert!((coarse[0] - h0).abs() < 1e-12);
        assert_eq!(g.horizon(), 1.0);
    }

    #[test]
    fn uncapped_growth_continues_the_fine_spacing() {
        let g = coarsened_grid(1.0, 0.5, 8, 100.0).unwrap();
        // h = 0.125, Σ 0.125 qⁱ (i = 1..4) = 0.5 → q = 1
        for k in 0..8 {
            assert!((g.step(k) - 0.125).abs() < 1e-9, "{g:?}");
        }
        let g = coarsened_grid(1.0, 0.2, 8, 100.0).unwrap();
        let q = g.step(4) / g.step(3);
        assert!(q > 1.0);
        assert!((g.step(5) / g.step(4) - q).abs() < 1e-9);
    }

    #[test]
    fn rejects_impossible_requests() {
        assert!(coarsened_grid(1.0, 0.1, 3, 8.0).is_err());
        assert!(coarsened_grid(1.0, 0.9, 10, 8.0).is_err());
        assert!(coarsened_grid(1.0, 1.5, 10, 8.0).is_err());
        assert!(coarsened_grid(1.0, 0.1, 10, 0.5).is_err());
    }
}
