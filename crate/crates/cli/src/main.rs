//! `cpl`: train, verify and sweep conservation-constrained networks, and
//! build reference solutions.

mod config;
mod run;
mod sweep;

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use cpl_core::pde::{make_problem_with, ProblemOptions};
use cpl_core::refsolve::{default_resolution, load_or_solve, solve_reference};
use cpl_core::sdifp::{projection_jacobians, AffineParams, MomentEstimate, ProjectionJacobians};
use cpl_core::verify::{self, VerifyOptions};
use log::info;

use config::{parse_count, Overrides, RunFile};
use sweep::Axis;

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "cpl", version, about = "Conservation-projected PINN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train one configuration and write metrics, checkpoint and tables
    Train {
        #[command(flatten)]
        o: Overrides,
        /// Skip training; evaluate the initialised network
        #[arg(long, hide = true)]
        eval_only: bool,
    },
    /// Run the built-in self-checks
    Verify {
        #[arg(long)]
        seed: Option<u64>,
        /// Flip the sign of one projection Jacobian entry (self-test of the checks)
        #[arg(long, hide = true)]
        mutate_jacobian: bool,
    },
    /// Train along one axis and collect a sweep.csv
    Sweep {
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated values (2^k and 1e4 forms accepted)
        #[arg(long, value_delimiter = ',', value_parser = parse_count, required = true)]
        values: Vec<usize>,
        /// Child processes to run at once
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Evaluate freshly initialised networks instead of training
        #[arg(long)]
        no_train: bool,
        #[command(flatten)]
        o: Overrides,
    },
    /// Solve (or load from the cache) a reference solution
    Reference {
        #[arg(long)]
        problem: String,
        #[arg(long)]
        nx: Option<usize>,
        #[arg(long)]
        dt: Option<f64>,
        /// Cache and output directory
        #[arg(long)]
        out: Option<PathBuf>,
        /// Solve without reading or writing the cache
        #[arg(long)]
        no_cache: bool,
    },
}

#[derive(Debug)]
struct VerifyFailed(usize);

impl fmt::Display for VerifyFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} verification check(s) failed", self.0)
    }
}

impl std::error::Error for VerifyFailed {}

fn mutated_jacobians(m: &MomentEstimate<f64>, a: &AffineParams<f64>, eps: f64) -> ProjectionJacobians<f64> {
    let mut j = projection_jacobians(m, a, eps);
    j.da_dmu2 = -j.da_dmu2;
    j
}

fn cmd_train(o: &Overrides, eval_only: bool) -> anyhow::Result<()> {
    let file = RunFile::from_overrides(o)?;
    let resolved = file.resolve()?;
    let out = file.out_dir(o.out.as_deref());
    let s = run::execute(&file, &resolved, &out, !eval_only)?;
    println!("{}", run::SUMMARY_HEADER);
    println!("{}", s.csv_row(&resolved));
    Ok(())
}

fn cmd_verify(seed: Option<u64>, mutate: bool) -> anyhow::Result<()> {
    let mut opts = VerifyOptions::default();
    if let Some(s) = seed {
        opts.seed = s;
    }
    if mutate {
        opts.jacobians = mutated_jacobians;
    }
    let report = verify::run(&opts);
    print!("{}", report.render());
    let failed = report.failures().len();
    if failed > 0 {
        return Err(VerifyFailed(failed).into());
    }
    Ok(())
}

fn cmd_sweep(axis: Axis, values: &[usize], parallel: usize, no_train: bool, o: &Overrides) -> anyhow::Result<()> {
    let file = RunFile::from_overrides(o)?;
    let out = file.out_dir(o.out.as_deref());
    let results = sweep::sweep(&file, axis, values, &out, parallel, !no_train)?;
    let ok = results.iter().filter(|(_, r)| matches!(r, sweep::Outcome::Done(_))).count();
    println!("{}: {ok}/{} points completed", out.join("sweep.csv").display(), results.len());
    Ok(())
}

fn cmd_reference(
    problem: &str,
    nx: Option<usize>,
    dt: Option<f64>,
    out: Option<PathBuf>,
    no_cache: bool,
) -> anyhow::Result<()> {
    let p = make_problem_with::<f64>(problem, &ProblemOptions::default())?;
    let (dnx, ddt) = default_resolution(problem).unwrap_or((512, 1e-3));
    let (nx, dt) = (nx.unwrap_or(dnx), dt.unwrap_or(ddt));
    let t_end = p.domain.t_end();
    let dir = out
        .or_else(|| std::env::var_os(config::OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("reference"));
    fs::create_dir_all(&dir)?;
    let (sol, hit) = if no_cache {
        (solve_reference(&p, nx, dt, t_end)?, false)
    } else {
        load_or_solve(&p, nx, dt, t_end, &dir)?
    };
    let csv = dir.join(format!("{}_invariants.csv", p.name));
    let mut f = fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?;
    writeln!(f, "t,c1,c2")?;
    for ((t, c1), c2) in sol.stamps.iter().zip(&sol.c1).zip(&sol.c2) {
        writeln!(f, "{t},{c1},{c2}")?;
    }
    info!("wrote {}", csv.display());
    println!("{} nx={nx} dt={dt:e} {}", p.name, if hit { "cache hit" } else { "solved" });
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.chain().any(|e| e.is::<VerifyFailed>()) {
        return EXIT_VERIFY;
    }
    match err.chain().find_map(|e| e.downcast_ref::<cpl_core::Error>()) {
        Some(cpl_core::Error::Io(_)) => EXIT_CONFIG,
        Some(e) if e.is_config() => EXIT_CONFIG,
        Some(_) => EXIT_NUMERICAL,
        None => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Cmd::Train { o, eval_only } => cmd_train(o, *eval_only),
        Cmd::Verify { seed, mutate_jacobian } => cmd_verify(*seed, *mutate_jacobian),
        Cmd::Sweep { axis, values, parallel, no_train, o } => cmd_sweep(*axis, values, *parallel, *no_train, o),
        Cmd::Reference { problem, nx, dt, out, no_cache } => cmd_reference(problem, *nx, *dt, out.clone(), *no_cache),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
