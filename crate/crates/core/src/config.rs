//! JSON problem definitions.
//!
//! A document names a benchmark with optional parameter overrides, or spells
//! out a problem with expression trees:
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "problem": { "benchmark": "fish:bilinear", "params": { "u_max": 4.0 } },
//!   "x0": [0.5],
//!   "horizon": 1.1
//! }
//! ```
//!
//! Expressions are numbers, `{"x": i}`, `{"u": j}`, `{"add": [..]}`,
//! `{"mul": [..]}`, `{"sub": [a, b]}`, `{"neg": e}` and `{"pow": [e, k]}`
//! with an integer `k`. A custom problem lists `dynamics` (one expression per
//! state), `stage_cost`, and optionally `mayer`, `path` (`g ≤ 0`),
//! `state_rows`, `terminal` (`ψ`), `terminal_equalities` and `input_box`.

use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::benchmarks::{
    fish_problem_with, fish_singular_arc, lq_problem, FishParams, FishVariant, LqParams, QuadParams,
};
use crate::error::{Error, Result};
use crate::ocp::{solve_steady_state, Equilibrium, OcpProblem, TimeMode};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Expr {
    Const(f64),
    Op(Op),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Op {
    X(usize),
    U(usize),
    Add(Vec<Expr>),
    Mul(Vec<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Pow(Box<Expr>, i32),
}

impl Expr {
    pub fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Op(op) => match op {
                Op::X(i) => x[*i],
                Op::U(j) => u[*j],
                Op::Add(terms) => terms.iter().map(|e| e.eval(x, u)).sum(),
                Op::Mul(factors) => factors.iter().map(|e| e.eval(x, u)).product(),
                Op::Sub(a, b) => a.eval(x, u) - b.eval(x, u),
                Op::Neg(a) => -a.eval(x, u),
                Op::Pow(a, k) => a.eval(x, u).powi(*k),
            },
        }
    }

    /// Checks variable indices; `inputs = None` forbids input references.
    fn check(&self, what: &str, states: usize, inputs: Option<usize>) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("{what}: {msg}")));
        match self {
            Expr::Const(c) if !c.is_finite() => bad("non-finite constant".into()),
            Expr::Const(_) => Ok(()),
            Expr::Op(op) => match op {
                Op::X(i) if *i >= states => bad(format!("state index {i} out of range")),
                Op::U(j) => match inputs {
                    None => bad("terminal expressions cannot use inputs".into()),
                    Some(m) if *j >= m => bad(format!("input index {j} out of range")),
                    _ => Ok(()),
                },
                Op::X(_) => Ok(()),
                Op::Add(es) | Op::Mul(es) => {
                    es.iter().try_for_each(|e| e.check(what, states, inputs))
                }
                Op::Sub(a, b) => {
                    a.check(what, states, inputs)?;
                    b.check(what, states, inputs)
                }
                Op::Neg(a) | Op::Pow(a, _) => a.check(what, states, inputs),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomProblem {
    pub name: String,
    #[serde(default = "continuous")]
    pub time_mode: TimeMode,
    pub state_dim: usize,
    pub input_dim: usize,
    pub dynamics: Vec<Expr>,
    pub stage_cost: Expr,
    #[serde(default)]
    pub mayer: Option<Expr>,
    #[serde(default)]
    pub path: Vec<Expr>,
    #[serde(default)]
    pub state_rows: Vec<usize>,
    #[serde(default)]
    pub terminal: Vec<Expr>,
    #[serde(default)]
    pub terminal_equalities: Vec<usize>,
    #[serde(default)]
    pub input_box: Option<(Vec<f64>, Vec<f64>)>,
}

fn continuous() -> TimeMode {
    TimeMode::Continuous
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProblemSpec {
    Benchmark {
        benchmark: String,
        #[serde(default)]
        params: Option<Value>,
        /// Tracking-cost overrides of the quadratic fish variants.
        #[serde(default)]
        quad: Option<Value>,
    },
    Custom {
        custom: CustomProblem,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyGuess {
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub schema_version: u32,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Starting point of the steady-state solve; defaults to `(x₀, default
    /// input)`.
    #[serde(default)]
    pub steady_guess: Option<SteadyGuess>,
}

impl FromStr for ProblemConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let cfg: ProblemConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }
}

/// Overlays the keys of `overrides` on the serialized defaults.
fn with_overrides<T: Serialize + for<'de> Deserialize<'de>>(
    defaults: T,
    overrides: &Option<Value>,
    what: &str,
) -> Result<T> {
    let Some(over) = overrides else {
        return Ok(defaults);
    };
    let mut base = serde_json::to_value(defaults)?;
    let (Value::Object(base_map), Value::Object(over_map)) = (&mut base, over) else {
        return Err(Error::Config(format!("{what} must be an object")));
    };
    for (k, v) in over_map {
        if !base_map.contains_key(k) {
            return Err(Error::Config(format!("unknown {what} key `{k}`")));
        }
        base_map.insert(k.clone(), v.clone());
    }
    serde_json::from_value(base).map_err(|e| Error::Config(format!("{what}: {e}")))
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }

    /// A benchmark by name with default parameters.
    pub fn benchmark(name: &str) -> Self {
        ProblemConfig {
            schema_version: SCHEMA_VERSION,
            problem: ProblemSpec::Benchmark {
                benchmark: name.into(),
                params: None,
                quad: None,
            },
            x0: None,
            horizon: None,
            steady_guess: None,
        }
    }

    pub fn build(&self) -> Result<OcpProblem> {
        let mut p = match &self.problem {
            ProblemSpec::Benchmark {
                benchmark,
                params,
                quad,
            } => build_benchmark(benchmark, params, quad)?,
            ProblemSpec::Custom { custom } => build_custom(custom)?,
        };
        if let Some(x0) = &self.x0 {
            p = p.with_initial_state(x0.clone());
        }
        if let Some(t) = self.horizon {
            p = p.with_horizon(t);
        }
        p.validate()?;
        Ok(p)
    }

    /// Steady state of the built problem. The bilinear fish problem uses its
    /// singular-arc closed form; everything else the steady-state solver.
    pub fn equilibrium(&self, problem: &OcpProblem) -> Result<Equilibrium> {
        if let ProblemSpec::Benchmark {
            benchmark, params, ..
        } = &self.problem
        {
            if benchmark == "fish:bilinear" {
                return fish_singular_arc(&with_overrides(
                    FishParams::default(),
                    params,
                    "params",
                )?);
            }
        }
        let (x, u) = match &self.steady_guess {
            Some(g) => (g.x.clone(), g.u.clone()),
            None => (problem.initial_state.clone(), problem.default_input()),
        };
        solve_steady_state(problem, (&x, &u))
    }
}

pub const BENCHMARKS: [&str; 4] = [
    "fish:bilinear",
    "fish:quad_mayer",
    "fish:quad_terminal",
    "lq",
];

fn build_benchmark(name: &str, params: &Option<Value>, quad: &Option<Value>) -> Result<OcpProblem> {
    match name.split_once(':') {
        Some(("fish", variant)) => {
            let variant: FishVariant = variant.parse()?;
            let fish = with_overrides(FishParams::default(), params, "params")?;
            let q = with_overrides(QuadParams::for_variant(variant), quad, "quad")?;
            fish_problem_with(variant, &fish, &q)
        }
        None if name == "lq" => {
            if quad.is_some() {
                return Err(Error::Config("`quad` only applies to fish variants".into()));
            }
            lq_problem(&with_overrides(LqParams::default(), params, "params")?)
        }
        _ => Err(Error::Config(format!(
            "unknown benchmark `{name}` (expected one of {})",
            BENCHMARKS.join(", ")
        ))),
    }
}

fn build_custom(c: &CustomProblem) -> Result<OcpProblem> {
    let (n, m) = (c.state_dim, c.input_dim);
    if c.dynamics.len() != n {
        return Err(Error::Config(format!(
            "{} dynamics expressions for {n} states",
            c.dynamics.len()
        )));
    }
    for e in &c.dynamics {
        e.check("dynamics", n, Some(m))?;
    }
    c.stage_cost.check("stage_cost", n, Some(m))?;
    for e in &c.path {
        e.check("path", n, Some(m))?;
    }
    if let Some(e) = &c.mayer {
        e.check("mayer", n, None)?;
    }
    for e in &c.terminal {
        e.check("terminal", n, None)?;
    }
    if let Some(r) = c.state_rows.iter().find(|&&r| r >= c.path.len()) {
        return Err(Error::Config(format!("state row {r} out of range")));
    }
    if let Some(r) = c
        .terminal_equalities
        .iter()
        .find(|&&r| r >= c.terminal.len())
    {
        return Err(Error::Config(format!("terminal equality {r} out of range")));
    }

    let dynamics = c.dynamics.clone();
    let cost = c.stage_cost.clone();
    let mut p = OcpProblem::new(
        c.name.clone(),
        c.time_mode,
        n,
        m,
        Arc::new(move |x: &[f64], u: &[f64]| dynamics.iter().map(|e| e.eval(x, u)).collect()),
        Arc::new(move |x: &[f64], u: &[f64]| cost.eval(x, u)),
    );
    if let Some(e) = c.mayer.clone() {
        p = p.with_mayer(Arc::new(move |x: &[f64]| e.eval(x, &[])));
    }
    if !c.path.is_empty() {
        let g = c.path.clone();
        p = p.with_path_constraints(
            g.len(),
            Arc::new(move |x: &[f64], u: &[f64]| g.iter().map(|e| e.eval(x, u)).collect()),
            c.state_rows.clone(),
        );
    }
    if !c.terminal.is_empty() {
        let psi = c.terminal.clone();
        p = p.with_terminal_constraints(
            psi.len(),
            Arc::new(move |x: &[f64]| psi.iter().map(|e| e.eval(x, &[])).collect()),
            c.terminal_equalities.clone(),
        );
    }
    if let Some((lo, hi)) = &c.input_box {
        p = p.with_input_box(lo.clone(), hi.clone());
    }
    Ok(p)
}
