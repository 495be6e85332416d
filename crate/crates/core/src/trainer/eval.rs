use super::config::{Method, ProjCloud, TrainConfig};
use super::step::detached_cloud;
use crate::baselines::{combined_affine, GridSpec};
use crate::error::{Error, Result};
use crate::net::{forward_batch, MLPParams};
use crate::pde::PDEProblem;
use crate::refsolve::ReferenceSolution;
use crate::sampler::{map_to_domain, quasi_points, uniform_points, PointCloud, SeededRng};
use crate::scalar::{pairwise_sum, Scalar};
use crate::sdifp::{estimate_moments, solve_affine, AffineParams, TargetInvariants};

const EVAL_STREAM: u64 = 0xe7a1;

/// How a trained model maps `u_raw` to its prediction at time `t`.
#[derive(Debug, Clone)]
pub enum Projector<S> {
    Identity,
    /// Closed-form projection from moments over a detached cloud.
    Sdifp { cloud: PointCloud<S>, eps: S },
    /// Discrete projection over a fixed batch of `n` points with `ΔV = |X|/n`.
    Discrete { points: PointCloud<S> },
}

impl<S: Scalar> Projector<S> {
    /// Inference-time projector of a run: SDIFP uses the unshifted
    /// training cloud, discrete projection its grid or a fixed random
    /// batch of the training size.
    pub fn for_config(problem: &PDEProblem<S>, cfg: &TrainConfig) -> Result<Self> {
        let mut rng = SeededRng::new(cfg.seed).substream(EVAL_STREAM);
        Ok(match cfg.method {
            Method::Vanilla | Method::Soft => Projector::Identity,
            Method::Sdifp => Projector::Sdifp {
                cloud: detached_cloud(problem, cfg.cloud, 0, true, &mut rng)?,
                eps: S::lit(cfg.eps),
            },
            Method::DiscreteProj => {
                let d = problem.dim();
                let points = match cfg.proj_cloud {
                    ProjCloud::Grid => {
                        let per = (cfg.batch as f64).powf(1.0 / d as f64).round().max(2.0) as usize;
                        GridSpec::cell_centered(&problem.domain, &vec![per; d])?.points(&problem.domain)?
                    }
                    ProjCloud::Random => map_to_domain(&uniform_points(cfg.batch, d, &mut rng), &problem.domain)?,
                };
                Projector::Discrete { points }
            }
        })
    }

    pub fn affine_at(&self, params: &MLPParams<S>, problem: &PDEProblem<S>, t: S) -> Result<AffineParams<S>> {
        match self {
            Projector::Identity => Ok(AffineParams::identity(t)),
            Projector::Sdifp { cloud, eps } => {
                let (c1, c2) = problem.invariant_targets(t)?;
                let moments = estimate_moments(params, cloud, t)?;
                solve_affine(&moments, &TargetInvariants::from_integrals(c1, c2, problem.domain.volume()), *eps)
            }
            Projector::Discrete { points } => {
                let (c1, c2) = problem.invariant_targets(t)?;
                let values = forward_batch(params, points, t)?;
                let dv = problem.domain.volume() / S::from_count(values.len());
                let (alpha, beta) = combined_affine(&values, dv, c1, c2)?;
                Ok(AffineParams { alpha, beta, t })
            }
        }
    }
}

/// Settings of the periodic evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub time_points: usize,
    pub heldout_points: usize,
    pub heldout_skip: u64,
    /// Use every `stamp_stride`-th reference snapshot for `Error_u`.
    pub stamp_stride: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { time_points: 64, heldout_points: 1 << 14, heldout_skip: 1 << 28, stamp_stride: 10 }
    }
}

/// Mean invariant errors over a set of times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservationErrors<S> {
    /// `mean_t |ĉ1 − c1|`
    pub abs_c1: S,
    pub abs_c2: S,
    /// `mean_t |ĉ1 − c1| / |c1|`
    pub rel_c1: S,
    pub rel_c2: S,
}

impl<S: Scalar> ConservationErrors<S> {
    /// Larger relative error; comparable across dimensions and volumes.
    pub fn relative(&self) -> S {
        self.rel_c1.max(self.rel_c2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport<S> {
    /// `None` when the problem has no reference.
    pub error_u: Option<S>,
    pub error_c1: S,
    pub error_c2: S,
    pub conservation: ConservationErrors<S>,
}

impl<S: Scalar> EvalReport<S> {
    /// Larger of the two relative invariant errors.
    pub fn conservation_error(&self) -> S {
        self.conservation.relative()
    }
}

/// One logged row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub loss: f64,
    pub error_u: Option<f64>,
    pub error_c1: f64,
    pub error_c2: f64,
    pub tape_nodes: usize,
    pub seconds: f64,
}

/// `n` equispaced times over `[0, T]`, both ends included.
pub fn time_grid<S: Scalar>(t_end: S, n: usize) -> Vec<S> {
    if n <= 1 {
        return vec![S::zero()];
    }
    (0..n).map(|i| if i + 1 == n { t_end } else { t_end * S::from_count(i) / S::from_count(n - 1) }).collect()
}

pub fn affine_table<S: Scalar>(
    projector: &Projector<S>,
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    times: &[S],
) -> Result<Vec<AffineParams<S>>> {
    times.iter().map(|&t| projector.affine_at(params, problem, t)).collect()
}

/// Held-out Sobol cloud, disjoint from training clouds by its skip.
pub fn heldout_cloud<S: Scalar>(problem: &PDEProblem<S>, eval: &EvalConfig) -> Result<PointCloud<S>> {
    let mut rng = SeededRng::new(eval.heldout_skip).substream(EVAL_STREAM);
    map_to_domain(&quasi_points(eval.heldout_points, problem.dim(), eval.heldout_skip, &mut rng)?, &problem.domain)
}

/// Integrals `(V·mean ũ, V·mean ũ²)` over `cloud`.
pub fn projected_integrals<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cloud: &PointCloud<S>,
    affine: &AffineParams<S>,
) -> Result<(S, S)> {
    if cloud.is_empty() {
        return Err(Error::Input("empty evaluation cloud".into()));
    }
    let u: Vec<S> = forward_batch(params, cloud, affine.t)?.into_iter().map(|v| affine.apply(v)).collect();
    let sq: Vec<S> = u.iter().map(|&v| v * v).collect();
    let k = problem.domain.volume() / S::from_count(u.len());
    Ok((pairwise_sum(&u) * k, pairwise_sum(&sq) * k))
}

/// Mean invariant errors over the table's times, measured on `cloud`.
pub fn conservation_errors<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    table: &[AffineParams<S>],
    cloud: &PointCloud<S>,
) -> Result<ConservationErrors<S>> {
    if table.is_empty() {
        return Err(Error::Input("empty affine table".into()));
    }
    let mut cols: [Vec<S>; 4] = Default::default();
    for a in table {
        let (c1, c2) = problem.invariant_targets(a.t)?;
        let (h1, h2) = projected_integrals(params, problem, cloud, a)?;
        let (e1, e2) = ((h1 - c1).abs(), (h2 - c2).abs());
        cols[0].push(e1);
        cols[1].push(e2);
        cols[2].push(e1 / c1.abs());
        cols[3].push(e2 / c2.abs());
    }
    let n = S::from_count(table.len());
    let m = |v: &[S]| pairwise_sum(v) / n;
    Ok(ConservationErrors { abs_c1: m(&cols[0]), abs_c2: m(&cols[1]), rel_c1: m(&cols[2]), rel_c2: m(&cols[3]) })
}

/// `‖ũ − u_ref‖₂ / ‖u_ref‖₂` over the reference grid at every
/// `stride`-th stamp.
pub fn error_u<S: Scalar>(
    params: &MLPParams<S>,
    projector: &Projector<S>,
    problem: &PDEProblem<S>,
    reference: &ReferenceSolution,
    stride: usize,
) -> Result<S> {
    if reference.dim != problem.dim() {
        return Err(Error::Contract("reference dimension differs from the problem".into()));
    }
    let grid = reference.grid_points::<S>();
    let (mut num, mut den) = (Vec::new(), Vec::new());
    for k in (0..reference.stamps.len()).step_by(stride.max(1)) {
        let t = S::lit(reference.stamps[k]);
        let a = projector.affine_at(params, problem, t)?;
        let pred = forward_batch(params, &grid, t)?;
        for (p, &r) in pred.iter().zip(&reference.snapshots[k]) {
            let r = S::lit(r);
            let e = a.apply(*p) - r;
            num.push(e * e);
            den.push(r * r);
        }
    }
    Ok((pairwise_sum(&num) / pairwise_sum(&den)).sqrt())
}

/// `Error_u` (when a reference exists) and `Error_c1`, `Error_c2` on a
/// held-out cloud over the evaluation time grid.
pub fn evaluate<S: Scalar>(
    params: &MLPParams<S>,
    projector: &Projector<S>,
    problem: &PDEProblem<S>,
    reference: Option<&ReferenceSolution>,
    eval: &EvalConfig,
) -> Result<EvalReport<S>> {
    let times = time_grid(problem.domain.t_end(), eval.time_points);
    let table = affine_table(projector, params, problem, &times)?;
    let cloud = heldout_cloud(problem, eval)?;
    let conservation = conservation_errors(params, problem, &table, &cloud)?;
    let error_u = match reference {
        Some(r) => Some(error_u(params, projector, problem, r, eval.stamp_stride)?),
        None => None,
    };
    Ok(EvalReport { error_u, error_c1: conservation.abs_c1, error_c2: conservation.abs_c2, conservation })
}
