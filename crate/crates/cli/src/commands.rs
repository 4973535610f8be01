use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use turnpike::analysis::{classify_turnpike, ClassifyOptions};
use turnpike::dissipativity::{
    check_dissipation, value_bound_check, Certificate, GridSpec, Samples, StorageFunction,
    Strictness, WorkingBox,
};
use turnpike::long_horizon::{
    mpc_run, split_solve, Coarsening, MpcHorizon, MpcOptions, SplitOptions,
};
use turnpike::nlp::{solve_trajectory, Solution};
use turnpike::ocp::{Equilibrium, OcpProblem, TimeGrid, TimeMode};

use crate::output::{read_json_data, Output};
use crate::run_config::RunConfig;

pub struct RunContext {
    pub cfg: RunConfig,
    pub problem: OcpProblem,
    pub out: Output,
}

impl RunContext {
    /// Initial states from the `x0` list, or the problem's own.
    fn x0s(&self) -> Result<Vec<Vec<f64>>> {
        if self.cfg.x0_list.is_empty() {
            return Ok(vec![self.problem.initial_state.clone()]);
        }
        let x0s: Vec<Vec<f64>> = self.cfg.x0_list.iter().map(|x| x.to_vec()).collect();
        if let Some(x) = x0s.iter().find(|x| x.len() != self.problem.state_dim) {
            bail!(turnpike::Error::Config(format!(
                "initial state {x:?} has {} components, the problem has {}",
                x.len(),
                self.problem.state_dim
            )));
        }
        Ok(x0s)
    }

    fn horizons(&self) -> Vec<f64> {
        if self.cfg.t_list.is_empty() {
            vec![self.problem.horizon]
        } else {
            self.cfg.t_list.clone()
        }
    }

    fn equilibrium(&self) -> Result<Equilibrium> {
        Ok(self.cfg.problem_config()?.equilibrium(&self.problem)?)
    }

    fn member_problem(&self, x0: &[f64], horizon: f64) -> Result<OcpProblem> {
        Ok(self
            .problem
            .clone()
            .with_initial_state(x0.to_vec())
            .with_horizon(horizon))
    }

    fn grid(&self, horizon: f64, default_n: usize) -> Result<TimeGrid> {
        Ok(match self.problem.time_mode {
            TimeMode::Discrete => TimeGrid::discrete(horizon.round() as usize)?,
            TimeMode::Continuous => {
                TimeGrid::uniform(horizon, self.cfg.grid_n.unwrap_or(default_n))?
            }
        })
    }

    /// Solve with a seeded random input guess when jitter is requested.
    fn solve(&self, p: &OcpProblem, grid: &TimeGrid, member: u64) -> Result<Solution> {
        let guess = (self.cfg.jitter > 0.0).then(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed.wrapping_add(member));
            let base = p.default_input();
            let width: Vec<f64> = match &p.input_box {
                Some((lo, hi)) => lo.iter().zip(hi).map(|(l, h)| h - l).collect(),
                None => vec![1.0; p.input_dim],
            };
            let inputs = (0..grid.intervals())
                .map(|_| {
                    base.iter()
                        .zip(&width)
                        .map(|(b, w)| b + self.cfg.jitter * w * rng.random_range(-1.0..=1.0))
                        .collect()
                })
                .collect();
            Solution {
                problem: p.name.clone(),
                time_mode: p.time_mode,
                grid: grid.clone(),
                states: vec![p.initial_state.clone(); grid.intervals() + 1],
                inputs,
                adjoints: vec![],
                multipliers: vec![],
                terminal_multipliers: vec![],
                quadrature: turnpike::nlp::default_quadrature(p.time_mode),
                objective: f64::NAN,
                solver_tolerance: 0.0,
                stats: Default::default(),
            }
        });
        Ok(solve_trajectory(p, grid, guess.as_ref())?)
    }
}

pub fn solve(ctx: &RunContext) -> Result<Value> {
    let (x0, horizon) = (ctx.x0s()?.swap_remove(0), ctx.horizons()[0]);
    let p = ctx.member_problem(&x0, horizon)?;
    let s = ctx.solve(&p, &ctx.grid(horizon, 200)?, 0)?;
    ctx.out.csv("solution.csv", &s.to_csv())?;
    ctx.out.json("solution.json", &s)?;
    Ok(json!({
        "x0": x0,
        "horizon": horizon,
        "objective": s.objective,
        "iterations": s.stats.iterations,
        "final_state": s.final_state(),
    }))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestEntry {
    index: usize,
    x0: Vec<f64>,
    horizon: f64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    file: Option<String>,
}

pub fn sweep(ctx: &RunContext) -> Result<Value> {
    let x0s = ctx.x0s()?;
    let members: Vec<(&[f64], f64)> = ctx
        .horizons()
        .into_iter()
        .flat_map(|t| x0s.iter().map(move |x| (x.as_slice(), t)))
        .collect();
    let dir = ctx.out.sub("sweep")?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = ctx.cfg.workers {
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    let results: Vec<(ManifestEntry, Option<String>)> = pool.install(|| {
        members
            .par_iter()
            .enumerate()
            .map(|(i, &(x0, horizon))| {
                let run = || -> Result<Solution> {
                    let p = ctx.member_problem(x0, horizon)?;
                    ctx.solve(&p, &ctx.grid(horizon, 200)?, i as u64)
                };
                let base = ManifestEntry {
                    index: i,
                    x0: x0.to_vec(),
                    horizon,
                    status: "ok".into(),
                    error: None,
                    objective: None,
                    file: None,
                };
                match run().and_then(|s| {
                    let name = format!("member_{i:03}");
                    dir.json(&format!("{name}.json"), &s)?;
                    dir.csv(&format!("{name}.csv"), &s.to_csv())?;
                    Ok((s.objective, name, s.to_csv()))
                }) {
                    Ok((objective, name, csv)) => {
                        info!("sweep member {i} (x0 = {x0:?}, T = {horizon}) done");
                        (
                            ManifestEntry {
                                objective: Some(objective),
                                file: Some(format!("{name}.json")),
                                ..base
                            },
                            Some(csv),
                        )
                    }
                    Err(e) => (
                        ManifestEntry {
                            status: "failed".into(),
                            error: Some(format!("{e:#}")),
                            ..base
                        },
                        None,
                    ),
                }
            })
            .collect()
    });

    let mut merged = String::new();
    for (entry, csv) in &results {
        let Some(csv) = csv else { continue };
        let mut lines = csv.lines();
        let head = lines.next().unwrap_or_default();
        if merged.is_empty() {
            merged = format!("member,{head}\n");
        }
        for line in lines {
            merged.push_str(&format!("{},{line}\n", entry.index));
        }
    }
    ctx.out.csv("sweep.csv", &merged)?;
    let manifest: Vec<&ManifestEntry> = results.iter().map(|r| &r.0).collect();
    dir.json("manifest.json", &manifest)?;
    let failed: Vec<usize> = manifest
        .iter()
        .filter(|e| e.status != "ok")
        .map(|e| e.index)
        .collect();
    if !failed.is_empty() {
        bail!(
            "sweep members {failed:?} failed; partial results kept in {}",
            dir.dir.display()
        );
    }
    Ok(json!({ "members": manifest.len(), "directory": dir.dir }))
}

fn load_sweep(dir: &Path) -> Result<Vec<Solution>> {
    let manifest: Vec<ManifestEntry> =
        serde_json::from_value(read_json_data(&dir.join("manifest.json"))?)?;
    manifest
        .iter()
        .filter(|e| e.status == "ok")
        .map(|e| {
            let file = e.file.as_deref().context("manifest entry without file")?;
            Ok(serde_json::from_value(read_json_data(&dir.join(file))?)?)
        })
        .collect()
}

pub fn detect(ctx: &RunContext) -> Result<Value> {
    let dir = ctx.out.dir.join("sweep");
    if !dir.join("manifest.json").is_file() {
        sweep(ctx)?;
    }
    let batch = load_sweep(&dir)?;
    let eq = ctx.equilibrium()?;
    let opts = ClassifyOptions {
        eps_grid: ctx.cfg.eps_grid.clone(),
        selectors: ctx.cfg.selectors.clone(),
        ..ClassifyOptions::default()
    };
    let reports = classify_turnpike(&batch, &eq, &opts)?;
    for r in &reports {
        ctx.out.csv(
            &format!("nu_{}.csv", r.selector.name()),
            &r.nu_table.to_csv(),
        )?;
    }
    ctx.out.json("report.json", &reports)?;
    Ok(json!({
        "members": batch.len(),
        "verdicts": reports.iter().map(|r| json!({
            "selector": r.selector,
            "detected": r.detected,
            "exactness": r.exactness,
            "gamma": r.fit.as_ref().map(|f| f.gamma),
        })).collect::<Vec<_>>(),
    }))
}

fn default_certificate(ctx: &RunContext, eq: &Equilibrium) -> Result<Certificate> {
    let storage = match ctx.cfg.storage.as_str() {
        "zero" => StorageFunction::zero(ctx.problem.state_dim),
        "costate" => StorageFunction::steady_costate(eq),
        other => bail!(turnpike::Error::Config(format!(
            "unknown storage `{other}` (zero or costate; give a certificate for anything else)"
        ))),
    };
    Ok(Certificate {
        storage,
        alpha: ctx.cfg.alpha,
        strictness: Strictness::InputState,
        working_box: WorkingBox::new(
            eq.x_bar.iter().map(|x| x - 2.0).collect(),
            eq.x_bar.iter().map(|x| x + 2.0).collect(),
        )?,
    })
}

pub fn certify(ctx: &RunContext) -> Result<Value> {
    let p = &ctx.problem;
    let eq = ctx.equilibrium()?;
    let cert = match &ctx.cfg.certificate {
        Some(c) => c.clone(),
        None => default_certificate(ctx, &eq)?,
    };
    let storage = cert.storage.clone().certified(&cert.working_box)?;
    let (u_lo, u_hi): (Vec<f64>, Vec<f64>) = match &p.input_box {
        Some((lo, hi)) => (lo.clone(), hi.clone()),
        None => (
            eq.u_bar.iter().map(|u| u - 2.0).collect(),
            eq.u_bar.iter().map(|u| u + 2.0).collect(),
        ),
    };
    let spec = GridSpec {
        lower: cert
            .working_box
            .lower
            .iter()
            .chain(&u_lo)
            .copied()
            .collect(),
        upper: cert
            .working_box
            .upper
            .iter()
            .chain(&u_hi)
            .copied()
            .collect(),
        points_per_axis: ctx.cfg.certify_points,
    };
    let violation = check_dissipation(
        p,
        &eq,
        &storage,
        &cert.alpha,
        Samples::Grid(&spec),
        cert.strictness,
    )?;

    let mut horizons = ctx.horizons();
    horizons.dedup();
    let value_bound = if horizons.len() >= 3 {
        let x0 = ctx.x0s()?.swap_remove(0);
        let batch = horizons
            .iter()
            .map(|&t| {
                let mp = ctx.member_problem(&x0, t)?;
                ctx.solve(&mp, &ctx.grid(t, 200)?, 0)
            })
            .collect::<Result<Vec<_>>>()?;
        let eps = *ctx.cfg.eps_grid.last().unwrap();
        serde_json::to_value(value_bound_check(
            p,
            &batch,
            &eq,
            &storage,
            &cert.alpha,
            eps,
        )?)?
    } else {
        json!({ "skipped": "value bounds need at least three horizons in the t list" })
    };
    let report = json!({
        "certificate": cert,
        "storage_lower_bound": storage.lower_bound,
        "violation": violation,
        "value_bound": value_bound,
    });
    ctx.out.json("certify.json", &report)?;
    Ok(json!({
        "pass": violation.pass,
        "worst_residual": violation.worst_residual,
        "samples": violation.samples,
        "value_bound": value_bound,
    }))
}

pub fn split(ctx: &RunContext) -> Result<Value> {
    let (x0, horizon) = (ctx.x0s()?.swap_remove(0), ctx.horizons()[0]);
    let p = ctx.member_problem(&x0, horizon)?;
    let eq = ctx.equilibrium()?;
    let opts = SplitOptions {
        intervals: ctx.cfg.grid_n.unwrap_or(500),
        ..SplitOptions::default()
    };
    let s = split_solve(&p, &eq, ctx.cfg.t1, ctx.cfg.t2, &opts)?;
    ctx.out.csv("split.csv", &s.solution.to_csv())?;
    let summary = json!({ "cost": s.cost, "jumps": s.jumps });
    ctx.out.json("split.json", &summary)?;
    Ok(summary)
}

pub fn mpc(ctx: &RunContext) -> Result<Value> {
    let (x0, horizon) = (ctx.x0s()?.swap_remove(0), ctx.horizons()[0]);
    let p = ctx.member_problem(&x0, horizon)?;
    let eq = ctx.equilibrium()?;
    let opts = MpcOptions {
        intervals: ctx.cfg.grid_n.unwrap_or(50),
        coarsening: ctx.cfg.coarsen_ratio.map(|ratio| Coarsening {
            ratio,
            fine_fraction: ctx.cfg.delta_fraction,
        }),
        ..MpcOptions::default()
    };
    let mode = if ctx.cfg.infinite {
        MpcHorizon::Infinite { window: horizon }
    } else {
        MpcHorizon::Finite(horizon)
    };
    let eps = *ctx.cfg.eps_grid.last().unwrap();
    let cl = match mpc_run(&p, Some(&eq), mode, ctx.cfg.t_opt, ctx.cfg.delta, &opts) {
        Ok(cl) => cl,
        Err(turnpike::Error::MpcStep {
            step,
            source,
            partial,
        }) => {
            ctx.out.csv("mpc_partial.csv", &partial.to_csv())?;
            ctx.out
                .json("mpc_partial.json", &partial.summary(Some(&eq.x_bar), eps))?;
            return Err(turnpike::Error::MpcStep {
                step,
                source,
                partial,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    ctx.out.csv("mpc.csv", &cl.to_csv())?;
    let summary = cl.summary(Some(&eq.x_bar), eps);
    ctx.out.json("mpc.json", &summary)?;
    Ok(json!({
        "total_cost": summary.total_cost,
        "terminal_cost": summary.terminal_cost,
        "entry_time": summary.entry_time,
        "entry_epsilon": eps,
        "steps": summary.steps.len(),
    }))
}
