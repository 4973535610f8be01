use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use turnpike::analysis::ComponentSelector;
use turnpike::config::{ProblemConfig, BENCHMARKS};
use turnpike::dissipativity::Certificate;
use turnpike::ocp::KFunction;

pub const RUN_SCHEMA_VERSION: u32 = 1;

/// One entry of the `x0` list: a number for scalar problems, an array
/// otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Scalar(f64),
    Vector(Vec<f64>),
}

impl InitialState {
    pub fn to_vec(&self) -> Vec<f64> {
        match self {
            InitialState::Scalar(x) => vec![*x],
            InitialState::Vector(v) => v.clone(),
        }
    }
}

/// Everything a command needs. Flags override the fields of a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Benchmark name or path to a problem config.
    pub problem: String,
    /// Intervals per solve; each command has its own default.
    pub grid_n: Option<usize>,
    pub coarsen_ratio: Option<f64>,
    /// Share of the prediction intervals spent on `[0, δ]` when coarsening.
    pub delta_fraction: f64,
    pub x0_list: Vec<InitialState>,
    pub t_list: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub selectors: Vec<ComponentSelector>,
    pub out: PathBuf,
    pub seed: u64,
    /// Relative amplitude of the random input guess; zero uses the default
    /// guess.
    pub jitter: f64,
    pub workers: Option<usize>,
    pub delta: f64,
    pub t_opt: f64,
    /// Receding-horizon run without shrinking predictions or terminal cost.
    pub infinite: bool,
    pub t1: f64,
    pub t2: f64,
    /// `zero` or `costate`, used when no certificate is given.
    pub storage: String,
    pub alpha: KFunction,
    pub certificate: Option<Certificate>,
    /// Points per axis of the certification grid.
    pub certify_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: RUN_SCHEMA_VERSION,
            problem: "fish:bilinear".into(),
            grid_n: None,
            coarsen_ratio: None,
            delta_fraction: 0.5,
            x0_list: vec![],
            t_list: vec![],
            eps_grid: vec![0.5, 0.25, 0.1],
            selectors: ComponentSelector::ALL.to_vec(),
            out: PathBuf::from("out"),
            seed: 0,
            jitter: 0.0,
            workers: None,
            delta: 0.1,
            t_opt: 1.0,
            infinite: false,
            t1: 1.0,
            t2: 1.0,
            storage: "zero".into(),
            alpha: KFunction {
                coefficient: 0.25,
                exponent: 2.0,
            },
            certificate: None,
            certify_points: 41,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading run config {}", path.display()))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| turnpike::Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != RUN_SCHEMA_VERSION {
            bail!(turnpike::Error::Config(format!(
                "unsupported schema_version {} (expected {RUN_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if !BENCHMARKS.contains(&self.problem.as_str()) && !Path::new(&self.problem).is_file() {
            bail!(turnpike::Error::Config(format!(
                "problem `{}` is neither a benchmark ({}) nor an existing file",
                self.problem,
                BENCHMARKS.join(", ")
            )));
        }
        if self.eps_grid.is_empty()
            || self.eps_grid.iter().any(|e| !(*e > 0.0))
            || self.eps_grid.windows(2).any(|w| !(w[1] < w[0]))
        {
            bail!(turnpike::Error::Config(
                "eps grid must be positive and strictly decreasing".into()
            ));
        }
        if self.selectors.is_empty() {
            bail!(turnpike::Error::Config("no selector given".into()));
        }
        if self.workers == Some(0) {
            bail!(turnpike::Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn problem_config(&self) -> Result<ProblemConfig> {
        if BENCHMARKS.contains(&self.problem.as_str()) {
            Ok(ProblemConfig::benchmark(&self.problem))
        } else {
            Ok(ProblemConfig::load(Path::new(&self.problem))?)
        }
    }

    /// SHA-256 over the effective config and, for file problems, the
    /// problem document. The output directory and worker count do not
    /// affect results and are left out.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig {
            out: PathBuf::new(),
            workers: None,
            ..self.clone()
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&canonical)?.as_bytes());
        if !BENCHMARKS.contains(&self.problem.as_str()) {
            h.update(b"\n");
            h.update(std::fs::read(&self.problem)?);
        }
        Ok(hex::encode(h.finalize()))
    }
}

pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|e| turnpike::Error::Config(format!("bad number `{v}`: {e}")).into())
        })
        .collect()
}

/// `a,b,c` gives scalar states; `a,b;c,d` gives vector states.
pub fn parse_x0_list(s: &str) -> Result<Vec<InitialState>> {
    if s.contains(';') {
        s.split(';')
            .map(|v| Ok(InitialState::Vector(parse_list(v)?)))
            .collect()
    } else {
        Ok(parse_list(s)?
            .into_iter()
            .map(InitialState::Scalar)
            .collect())
    }
}

pub fn parse_selectors(s: &str) -> Result<Vec<ComponentSelector>> {
    if s == "all" {
        return Ok(ComponentSelector::ALL.to_vec());
    }
    s.split(',')
        .map(|v| Ok(v.trim().parse::<ComponentSelector>()?))
        .collect()
}
