mod commands;
mod output;
mod run_config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::RunContext;
use output::{Header, Output};
use run_config::{parse_list, parse_selectors, parse_x0_list, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "turnpike",
    version,
    about = "Solve, analyze and exploit turnpikes of optimal control problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Solve one problem (first x0, first T).
    Solve,
    /// Solve every x0 × T pair.
    Sweep,
    /// Classify the turnpike of a sweep (runs the sweep if missing).
    Detect,
    /// Check a dissipation inequality on a grid and the value bounds.
    Certify,
    /// Split the horizon at the turnpike.
    Split,
    /// Receding-horizon closed loop.
    Mpc,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Sweep => "sweep",
            Command::Detect => "detect",
            Command::Certify => "certify",
            Command::Split => "split",
            Command::Mpc => "mpc",
        }
    }
}

#[derive(clap::Args, Debug)]
struct Flags {
    /// Run config JSON; flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Benchmark name or problem config path.
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Comma-separated scalar initial states, or `;`-separated vectors.
    #[arg(long, global = true, allow_hyphen_values = true)]
    x0_list: Option<String>,
    /// Comma-separated horizons.
    #[arg(long, global = true)]
    t_list: Option<String>,
    /// Intervals per solve.
    #[arg(long, global = true)]
    grid_n: Option<usize>,
    /// Comma-separated, strictly decreasing ball radii.
    #[arg(long, global = true)]
    eps_grid: Option<String>,
    /// Comma-separated selectors or `all`.
    #[arg(long, global = true)]
    selector: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed of the randomized initial guesses.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Relative amplitude of random input guesses; 0 uses the default guess.
    #[arg(long, global = true)]
    jitter: Option<f64>,
    /// Worker threads for sweeps.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Coarsen MPC predictions with this max/min interval ratio.
    #[arg(long, global = true)]
    coarsen_ratio: Option<f64>,
    /// Share of prediction intervals on the applied segment when coarsening.
    #[arg(long, global = true)]
    delta_fraction: Option<f64>,
    /// Control horizon δ applied per MPC step.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// MPC prediction horizon.
    #[arg(long, global = true)]
    t_opt: Option<f64>,
    /// Receding horizon without shrinking; T is the reporting window.
    #[arg(long, global = true)]
    infinite: bool,
    /// Split: time to reach the turnpike.
    #[arg(long, global = true)]
    t1: Option<f64>,
    /// Split: time to leave the turnpike; 0 stays to the end.
    #[arg(long, global = true)]
    t2: Option<f64>,
    /// `zero` or `costate`.
    #[arg(long, global = true)]
    storage: Option<String>,
    /// Coefficient c of α(r) = c·rᵖ.
    #[arg(long, global = true)]
    alpha_coeff: Option<f64>,
    /// Exponent p of α(r) = c·rᵖ.
    #[arg(long, global = true)]
    alpha_exponent: Option<f64>,
}

fn effective_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &flags.$field {
                cfg.$field = v.clone();
            }
        };
    }
    set!(problem);
    set!(out);
    set!(seed);
    set!(jitter);
    set!(delta_fraction);
    set!(delta);
    set!(t_opt);
    set!(t1);
    set!(t2);
    set!(storage);
    if let Some(v) = flags.grid_n {
        cfg.grid_n = Some(v);
    }
    if let Some(v) = flags.workers {
        cfg.workers = Some(v);
    }
    if let Some(v) = flags.coarsen_ratio {
        cfg.coarsen_ratio = Some(v);
    }
    if let Some(s) = &flags.x0_list {
        cfg.x0_list = parse_x0_list(s)?;
    }
    if let Some(s) = &flags.t_list {
        cfg.t_list = parse_list(s)?;
    }
    if let Some(s) = &flags.eps_grid {
        cfg.eps_grid = parse_list(s)?;
    }
    if let Some(s) = &flags.selector {
        cfg.selectors = parse_selectors(s)?;
    }
    if flags.infinite {
        cfg.infinite = true;
    }
    if let Some(c) = flags.alpha_coeff {
        cfg.alpha.coefficient = c;
    }
    if let Some(p) = flags.alpha_exponent {
        cfg.alpha.exponent = p;
    }
    cfg.alpha = turnpike::ocp::KFunction::new(cfg.alpha.coefficient, cfg.alpha.exponent)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let cfg = effective_config(&cli.flags)?;
    let problem = cfg.problem_config()?.build()?;
    let header = Header {
        command: cli.command.name().into(),
        config_hash: cfg.hash()?,
    };
    let out = Output::new(&cfg.out, header)?;
    let ctx = RunContext { cfg, problem, out };
    match cli.command {
        Command::Solve => commands::solve(&ctx),
        Command::Sweep => commands::sweep(&ctx),
        Command::Detect => commands::detect(&ctx),
        Command::Certify => commands::certify(&ctx),
        Command::Split => commands::split(&ctx),
        Command::Mpc => commands::mpc(&ctx),
    }
}

/// The error chain, skipping causes whose text is already included.
fn message(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn print(doc: &serde_json::Value) {
    use std::io::Write;
    // a closed pipe is not worth a panic
    let _ = writeln!(
        std::io::stdout(),
        "{}",
        serde_json::to_string_pretty(doc).unwrap()
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TURNPIKE_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            print(&summary);
            ExitCode::SUCCESS
        }
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<turnpike::Error>())
                .map_or("runtime", turnpike::Error::kind);
            print(&json!({ "error": { "kind": kind, "message": message(&e) } }));
            ExitCode::FAILURE
        }
    }
}
