//! Step assembly, optimization and metrics for all training methods.

mod adam;
mod config;
mod eval;
mod field;
mod step;

pub use adam::{adam_update, learning_rate, OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use config::{Estimator, Method, ProjCloud, ProjMode, TrainConfig};
pub use eval::{
    affine_table, conservation_errors, ConservationErrors, error_u, evaluate, heldout_cloud, projected_integrals, time_grid, EvalConfig,
    EvalReport, MetricsRecord, Projector,
};
pub use field::NetField;
pub use step::{
    detached_cloud, memory_account, sample_step, step, step_baseline, step_sdifp, step_soo, SliceBatch, StepBatch,
    StepDiagnostics, StepOutput,
};

use std::path::PathBuf;
use std::sync::Arc;

use crate::adcore::Tape;
use crate::baselines::{preflight, GridSpec};
use crate::error::Result;
use crate::net::{init_params, MLPParams, NetworkConfig};
use crate::pde::{make_problem_with, residual_full, PDEProblem, ProblemOptions};
use crate::refsolve::{self, invariant_table, ReferenceSolution};
use crate::sampler::SeededRng;
use crate::scalar::Scalar;

/// Bytes per recorded node assumed by the grid preflight (node record,
/// value and an amortized share of the side tables).
pub const BYTES_PER_NODE: usize = 64;

const SAMPLING_STREAM: u64 = 1;

/// Where and how to compute the reference solution.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSettings {
    pub nx: usize,
    pub dt: f64,
    pub cache_dir: Option<PathBuf>,
}

impl ReferenceSettings {
    pub fn default_for(problem: &str) -> Option<Self> {
        refsolve::default_resolution(problem).map(|(nx, dt)| Self { nx, dt, cache_dir: None })
    }
}

/// Build the configured problem, solving (or loading) its reference when
/// the solver supports it, and attaching the reference table when the
/// targets need one.
pub fn prepare_problem<S: Scalar>(
    cfg: &TrainConfig,
    reference: Option<&ReferenceSettings>,
) -> Result<(PDEProblem<S>, Option<ReferenceSolution>)> {
    let opts = ProblemOptions { dim: cfg.dim, fp_split: cfg.fp_split };
    let mut problem = make_problem_with::<S>(&cfg.problem, &opts)?;
    cfg.validate_for(&problem)?;
    let solution = match reference {
        Some(r) if refsolve::supports(&problem) => {
            let t_end = problem.domain.t_end().as_f64();
            Some(match &r.cache_dir {
                Some(dir) => refsolve::load_or_solve(&problem, r.nx, r.dt, t_end, dir)?.0,
                None => refsolve::solve_reference(&problem, r.nx, r.dt, t_end)?,
            })
        }
        _ => None,
    };
    if problem.needs_reference() {
        let sol = solution.as_ref().ok_or_else(|| {
            crate::Error::Config(format!("{} needs reference settings for its invariant targets", problem.name))
        })?;
        problem = problem.with_reference(Arc::new(invariant_table(sol)?));
    }
    Ok((problem, solution))
}

/// Network configuration of a run; inputs are rescaled to `[-1, 1]`.
pub fn network_config<S: Scalar>(cfg: &TrainConfig, problem: &PDEProblem<S>) -> NetworkConfig {
    let d = problem.dim();
    let mut bounds: Vec<(f64, f64)> =
        (0..d).map(|k| (problem.domain.lower()[k].as_f64(), problem.domain.upper()[k].as_f64())).collect();
    bounds.push((0.0, problem.domain.t_end().as_f64()));
    let mut net = NetworkConfig::new(d + 1, cfg.seed).with_width(cfg.width).with_hidden_layers(cfg.hidden_layers);
    net.input_bounds = Some(bounds);
    net
}

/// Tape nodes recorded for one full residual at one point.
pub fn nodes_per_point<S: Scalar>(params: &MLPParams<S>, problem: &PDEProblem<S>) -> Result<usize> {
    let mut tape = Tape::with_params(&params.data);
    let mut field = NetField::raw(params);
    let x: Vec<S> = (0..problem.dim()).map(|k| problem.domain.lower()[k] + problem.domain.width(k) * S::lit(0.5)).collect();
    residual_full(problem, &mut tape, &mut field, &x, problem.domain.t_end() * S::lit(0.5))?;
    Ok(tape.len())
}

/// A training run: parameters, optimizer state and the sampling stream.
#[derive(Debug)]
pub struct Trainer<S: Scalar> {
    pub config: TrainConfig,
    pub problem: PDEProblem<S>,
    pub params: MLPParams<S>,
    pub optimizer: OptimizerState<S>,
    rng: SeededRng,
    epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig, problem: PDEProblem<S>) -> Result<Self> {
        config.validate_for(&problem)?;
        let params = init_params::<S>(&network_config(&config, &problem))?;
        if config.method == Method::DiscreteProj && config.proj_cloud == ProjCloud::Grid {
            let d = problem.dim();
            let per = (config.batch as f64).powf(1.0 / d as f64).round().max(2.0) as usize;
            let n = per.checked_pow(d as u32).unwrap_or(usize::MAX);
            preflight(n, nodes_per_point(&params, &problem)?, BYTES_PER_NODE)?;
            GridSpec::cell_centered(&problem.domain, &vec![per; d])?;
        }
        let optimizer = OptimizerState::new(params.len());
        let rng = SeededRng::new(config.seed).substream(SAMPLING_STREAM);
        Ok(Self { config, problem, params, optimizer, rng, epoch: 0 })
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn sample(&mut self) -> Result<StepBatch<S>> {
        sample_step(&self.problem, &self.config, self.epoch, &mut self.rng)
    }

    /// Sample, compute the gradient and apply one Adam update.
    pub fn step(&mut self) -> Result<StepOutput<S>> {
        let data = self.sample()?;
        self.step_on(&data)
    }

    /// One update on an explicit batch.
    pub fn step_on(&mut self, data: &StepBatch<S>) -> Result<StepOutput<S>> {
        let out = step(&self.params, &self.problem, &self.config, data)?;
        let lr = S::lit(learning_rate(self.config.lr0, self.epoch, self.config.epochs));
        adam_update(&mut self.params, &mut self.optimizer, &out.grad, lr)?;
        self.epoch += 1;
        Ok(out)
    }

    pub fn projector(&self) -> Result<Projector<S>> {
        Projector::for_config(&self.problem, &self.config)
    }
}
