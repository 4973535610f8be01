use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Strictly increasing node times starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::invalid("grid", "needs at least two nodes"));
        }
        if nodes[0] != 0.0 {
            return Err(Error::invalid("grid", "first node must be 0"));
        }
        if let Some(w) = nodes.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "grid",
                format!("nodes not strictly increasing at {} -> {}", w[0], w[1]),
            ));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid", "non-finite node"));
        }
        Ok(TimeGrid { nodes })
    }

    pub fn uniform(horizon: f64, intervals: usize) -> Result<Self> {
        if intervals == 0 || !(horizon > 0.0) {
            return Err(Error::invalid(
                "grid",
                "need a positive horizon and intervals",
            ));
        }
        let h = horizon / intervals as f64;
        let mut nodes: Vec<f64> = (0..=intervals).map(|k| k as f64 * h).collect();
        nodes[intervals] = horizon;
        TimeGrid::new(nodes)
    }

    /// Integer grid `0, 1, …, T` for discrete-time problems.
    pub fn discrete(horizon: usize) -> Result<Self> {
        TimeGrid::new((0..=horizon).map(|k| k as f64).collect())
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn step(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    pub fn max_step(&self) -> f64 {
        (0..self.intervals())
            .map(|k| self.step(k))
            .fold(0.0, f64::max)
    }

    pub fn min_step(&self) -> f64 {
        (0..self.intervals())
            .map(|k| self.step(k))
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the node closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, &s) in self.nodes.iter().enumerate() {
            if (s - t).abs() < (self.nodes[best] - t).abs() {
                best = k;
            }
        }
        best
    }

    /// Index of the interval containing `t` (last interval for `t = T`).
    pub fn interval_of(&self, t: f64) -> usize {
        match self.nodes.partition_point(|&s| s <= t) {
            0 => 0,
            p => (p - 1).min(self.intervals() - 1),
        }
    }

    /// Nodes from index `from` onwards, shifted to start at zero.
    pub fn tail(&self, from: usize) -> Result<Self> {
        let t0 = self.nodes[from];
        TimeGrid::new(self.nodes[from..].iter().map(|t| t - t0).collect())
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(nodes: Vec<f64>) -> Result<Self> {
        TimeGrid::new(nodes)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Vec<f64> {
        g.nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_grids() {
        assert!(TimeGrid::new(vec![0.0]).is_err());
        assert!(TimeGrid::new(vec![0.1, 0.2]).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn uniform_ends_exactly_at_horizon() {
        let g = TimeGrid::uniform(1.1, 200).unwrap();
        assert_eq!(g.horizon(), 1.1);
        assert_eq!(g.intervals(), 200);
        assert_eq!(g.interval_of(1.1), 199);
        assert_eq!(g.interval_of(0.0), 0);
    }
}
