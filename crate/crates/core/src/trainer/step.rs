use super::config::{Estimator, Method, ProjCloud, ProjMode, TrainConfig};
use super::field::NetField;
use crate::adcore::{Backend, GradVector, Tape, Var};
use crate::baselines::{combined_affine, combined_affine_on, soft_constraint_on, GridSpec};
use crate::error::{Error, Result};
use crate::net::{trace, MLPParams};
use crate::pde::{ic_bc_loss, residual_sampled, sample_boundary, BoundaryPoint, PDEProblem};
use crate::sampler::{draw, map_to_domain, quasi_points, sample_subsets, uniform_points, CloudSource, PointCloud, SeededRng};
use crate::scalar::Scalar;
use crate::sdifp::{estimate_moments, projection_jacobians, solve_affine, AffineParams, MomentEstimate, TargetInvariants};

/// Residual and boundary samples at one time.
#[derive(Debug, Clone)]
pub struct SliceBatch<S> {
    pub t: S,
    pub points: PointCloud<S>,
    pub boundary: Vec<BoundaryPoint<S>>,
}

/// All random draws of one step. Steps are pure functions of the
/// parameters and this batch.
#[derive(Debug, Clone)]
pub struct StepBatch<S> {
    pub slices: Vec<SliceBatch<S>>,
    /// Initial-condition points (spatial only, `t = 0`).
    pub ic: PointCloud<S>,
    /// Detached cloud `S_MC` (spatial only); empty unless SDIFP.
    pub cloud: PointCloud<S>,
    pub terms_i: Vec<usize>,
    pub terms_j: Vec<usize>,
}

/// Per-step bookkeeping.
#[derive(Debug, Clone, Default)]
pub struct StepDiagnostics<S> {
    /// Recorded nodes per tape (one tape per slice, the IC tape last).
    pub tape_nodes: Vec<usize>,
    /// Projection per slice (IC slice last) for projected methods.
    pub affine: Vec<AffineParams<S>>,
    /// Detached moments per slice, SDIFP only.
    pub moments: Vec<MomentEstimate<S>>,
    pub residual_loss: f64,
    pub ic_loss: f64,
    pub bc_loss: f64,
    pub soft_loss: f64,
}

impl<S> StepDiagnostics<S> {
    pub fn max_tape_nodes(&self) -> usize {
        self.tape_nodes.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub grad: GradVector<S>,
    /// Monitored loss: the J-sampled squared residual plus weighted
    /// IC/BC and penalty terms.
    pub loss: S,
    pub diag: StepDiagnostics<S>,
}

/// Maximum concurrent tape size of a step.
pub fn memory_account<S>(diag: &StepDiagnostics<S>) -> usize {
    diag.max_tape_nodes()
}

fn grid_counts(batch: usize, d: usize) -> Vec<usize> {
    let per = (batch as f64).powf(1.0 / d as f64).round().max(1.0) as usize;
    vec![per.max(2); d]
}

fn spatial_points<S: Scalar>(problem: &PDEProblem<S>, cfg: &TrainConfig, n: usize, rng: &mut SeededRng) -> Result<PointCloud<S>> {
    let d = problem.dim();
    if cfg.method == Method::DiscreteProj && cfg.proj_cloud == ProjCloud::Grid {
        GridSpec::cell_centered(&problem.domain, &grid_counts(n, d))?.points(&problem.domain)
    } else {
        map_to_domain(&uniform_points(n, d, rng), &problem.domain)
    }
}

/// Detached cloud for `epoch`: Sobol points with skip `epoch·M`, or skip
/// 0 when the cloud is frozen.
pub fn detached_cloud<S: Scalar>(
    problem: &PDEProblem<S>,
    m: usize,
    epoch: usize,
    frozen: bool,
    rng: &mut SeededRng,
) -> Result<PointCloud<S>> {
    let skip = if frozen { 0 } else { epoch as u64 * m as u64 };
    map_to_domain(&quasi_points(m, problem.dim(), skip, rng)?, &problem.domain)
}

/// Draw everything a step needs, in a fixed order.
pub fn sample_step<S: Scalar>(
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    epoch: usize,
    rng: &mut SeededRng,
) -> Result<StepBatch<S>> {
    let d = problem.dim();
    let cloud = if cfg.method == Method::Sdifp {
        detached_cloud(problem, cfg.cloud, epoch, cfg.frozen_cloud, rng)?
    } else {
        PointCloud::new(d, Vec::new(), CloudSource::Grid)?
    };
    let t_end = problem.domain.t_end();
    let mut slices = Vec::with_capacity(cfg.n_t);
    for s in 0..cfg.n_t {
        let t = t_end * (S::from_count(s) + S::lit(rng.unit())) / S::from_count(cfg.n_t);
        let points = spatial_points(problem, cfg, cfg.batch, rng)?;
        let mut boundary = sample_boundary(problem, cfg.bc_points, rng);
        for b in &mut boundary {
            b.t = t;
        }
        slices.push(SliceBatch { t, points, boundary });
    }
    let ic = spatial_points(problem, cfg, cfg.ic_points, rng)?;
    let nl = problem.n_terms();
    let all: Vec<usize> = (0..nl).collect();
    let (terms_i, terms_j) = match (cfg.method, cfg.estimator) {
        (Method::Sdifp, Estimator::DsUge) => sample_subsets(nl, cfg.size_i(nl), cfg.size_j(nl), rng)?,
        (Method::Sdifp, Estimator::Soo) => {
            let i = draw(nl, cfg.size_i(nl), rng);
            (i.clone(), i)
        }
        _ => (all.clone(), all),
    };
    Ok(StepBatch { slices, ic, cloud, terms_i, terms_j })
}

// Affine projection of the raw batch values on the tape, if the method
// projects.
#[allow(clippy::too_many_arguments)]
fn projection_nodes<S: Scalar>(
    tape: &mut Tape<'_, S>,
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    raw: &[Var<S>],
    cloud: &PointCloud<S>,
    t: S,
    diag: &mut StepDiagnostics<S>,
) -> Result<Option<(Var<S>, Var<S>)>> {
    let (c1, c2) = problem.invariant_targets(t)?;
    match cfg.method {
        Method::Vanilla | Method::Soft => Ok(None),
        Method::Sdifp => {
            let eps = S::lit(cfg.eps);
            let moments = estimate_moments(params, cloud, t)?;
            let targets = TargetInvariants::from_integrals(c1, c2, problem.domain.volume());
            let affine = solve_affine(&moments, &targets, eps)?;
            let jac = projection_jacobians(&moments, &affine, eps);
            let inv_n = S::one() / S::from_count(raw.len());
            let d1 = vec![inv_n; raw.len()];
            let d2: Vec<S> = raw.iter().map(|&u| (tape.value(u) + tape.value(u)) * inv_n).collect();
            let m1 = tape.implicit(moments.mu1, raw, &d1);
            let m2 = tape.implicit(moments.mu2, raw, &d2);
            let a = tape.implicit(affine.alpha, &[m1, m2], &[jac.da_dmu1, jac.da_dmu2]);
            let b = tape.implicit(affine.beta, &[m1, m2], &[jac.db_dmu1, jac.db_dmu2]);
            diag.affine.push(affine);
            diag.moments.push(moments);
            Ok(Some((a, b)))
        }
        Method::DiscreteProj => {
            let dv = problem.domain.volume() / S::from_count(raw.len());
            let (a, b) = match cfg.proj_mode {
                ProjMode::Through => combined_affine_on(tape, raw, dv, c1, c2)?,
                ProjMode::PostHoc => {
                    let values: Vec<S> = raw.iter().map(|&u| tape.value(u)).collect();
                    let (s, beta) = combined_affine(&values, dv, c1, c2)?;
                    (tape.constant(s), tape.constant(beta))
                }
            };
            diag.affine.push(AffineParams { alpha: tape.value(a), beta: tape.value(b), t });
            Ok(Some((a, b)))
        }
    }
}

fn check_subset(subset: &[usize], n: usize) -> Result<()> {
    if subset.is_empty() || subset.iter().any(|&k| k >= n) {
        return Err(Error::Contract(format!("invalid term subset {subset:?} for {n} terms")));
    }
    Ok(())
}

/// Loss and gradient of one step for any method.
///
/// Each time slice gets its own tape. The residual gradient is assembled
/// in gradient form: `2/(n_t N) Σ_x r_J(x) ∇̂ r_I(x)`, where `r_S` is the
/// residual with the linear part estimated from terms `S`, both factors
/// are recorded on the slice tape, and one seeded backward pass applies
/// the `r_J` weights. Baselines and the full estimator use all terms, in
/// which case this is the exact gradient of the logged loss.
pub fn step<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    data: &StepBatch<S>,
) -> Result<StepOutput<S>> {
    let nl = problem.n_terms();
    let all: Vec<usize> = (0..nl).collect();
    let (terms_i, terms_j): (&[usize], &[usize]) = match (cfg.method, cfg.estimator) {
        (Method::Sdifp, Estimator::DsUge) => (&data.terms_i, &data.terms_j),
        (Method::Sdifp, Estimator::Soo) => (&data.terms_i, &data.terms_i),
        _ => (&all, &all),
    };
    check_subset(terms_i, nl)?;
    check_subset(terms_j, nl)?;
    // DS-UGE keeps both factors on the tape even when the draws coincide,
    // so its footprint depends only on |I| and |J|
    let ds_uge = cfg.method == Method::Sdifp && cfg.estimator == Estimator::DsUge;
    let shared = terms_i == terms_j && !ds_uge;
    if data.slices.is_empty() {
        return Err(Error::Input("step needs at least one time slice".into()));
    }
    let d = problem.dim();
    let empty = PointCloud::new(d, Vec::new(), CloudSource::Grid)?;
    let ns = S::from_count(data.slices.len());
    let mut diag = StepDiagnostics::default();
    let mut grad = GradVector::zeros(params.len());
    let mut loss = S::zero();

    for slice in &data.slices {
        if slice.points.is_empty() {
            return Err(Error::Input("empty residual batch".into()));
        }
        let t = slice.t;
        let mut tape = Tape::with_params(&params.data);
        let mut traces = Vec::with_capacity(slice.points.len());
        for x in slice.points.iter() {
            traces.push(trace(&mut tape, params, x, t)?);
        }
        let raw: Vec<Var<S>> = traces.iter().map(|tr| tr.output).collect();
        let affine = projection_nodes(&mut tape, params, problem, cfg, &raw, &data.cloud, t, &mut diag)?;
        let mut field = NetField::with_affine(params, affine);
        for (x, tr) in slice.points.iter().zip(traces) {
            field.preload(x, t, tr);
        }
        let w = S::one() / (ns * S::from_count(slice.points.len()));
        let mut seeds = Vec::with_capacity(slice.points.len() + 2);
        let mut res = S::zero();
        for x in slice.points.iter() {
            let rj = residual_sampled(problem, &mut tape, &mut field, x, t, terms_j)?;
            let gi = if shared { rj } else { residual_sampled(problem, &mut tape, &mut field, x, t, terms_i)? };
            let r = tape.value(rj);
            res = res + r * r * w;
            seeds.push((gi, (r + r) * w));
        }
        loss = loss + res;
        diag.residual_loss += res.as_f64();
        if !slice.boundary.is_empty() && cfg.bc_weight > 0.0 {
            let l = ic_bc_loss(problem, &mut tape, &mut field, &empty, &slice.boundary)?;
            let wb = S::lit(cfg.bc_weight) / ns;
            let v = tape.value(l.bc) * wb;
            loss = loss + v;
            diag.bc_loss += v.as_f64();
            seeds.push((l.bc, wb));
        }
        if cfg.method == Method::Soft && cfg.lambda > 0.0 {
            let (c1, c2) = problem.invariant_targets(t)?;
            let vn = problem.domain.volume() / S::from_count(raw.len());
            let c1_hat = tape.lincomb(&raw, &vec![vn; raw.len()]);
            let sq: Vec<Var<S>> = raw.iter().map(|&u| tape.pow2(u)).collect();
            let c2_hat = tape.lincomb(&sq, &vec![vn; sq.len()]);
            let pen = soft_constraint_on(&mut tape, &[c1_hat, c2_hat], &[c1, c2], S::lit(cfg.lambda))?;
            let v = tape.value(pen) / ns;
            loss = loss + v;
            diag.soft_loss += v.as_f64();
            seeds.push((pen, S::one() / ns));
        }
        diag.tape_nodes.push(tape.len());
        grad.axpy(S::one(), &tape.backward_seeded(&seeds).params);
    }

    if !data.ic.is_empty() && cfg.ic_weight > 0.0 {
        let t = S::zero();
        let mut tape = Tape::with_params(&params.data);
        let mut traces = Vec::with_capacity(data.ic.len());
        for x in data.ic.iter() {
            traces.push(trace(&mut tape, params, x, t)?);
        }
        let raw: Vec<Var<S>> = traces.iter().map(|tr| tr.output).collect();
        let affine = projection_nodes(&mut tape, params, problem, cfg, &raw, &data.cloud, t, &mut diag)?;
        let mut field = NetField::with_affine(params, affine);
        for (x, tr) in data.ic.iter().zip(traces) {
            field.preload(x, t, tr);
        }
        let l = ic_bc_loss(problem, &mut tape, &mut field, &data.ic, &[])?;
        let wi = S::lit(cfg.ic_weight);
        let v = tape.value(l.ic) * wi;
        loss = loss + v;
        diag.ic_loss = v.as_f64();
        diag.tape_nodes.push(tape.len());
        grad.axpy(S::one(), &tape.backward_seeded(&[(l.ic, wi)]).params);
    }

    if !grad.is_finite() || !loss.is_finite() {
        return Err(Error::NonFinite("gradient or loss is not finite".into()));
    }
    Ok(StepOutput { grad, loss, diag })
}

fn expect_method(cfg: &TrainConfig, ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} called with method {}", cfg.method)))
    }
}

/// SDIFP step with the configured estimator (`full` or `ds_uge`).
pub fn step_sdifp<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    data: &StepBatch<S>,
) -> Result<StepOutput<S>> {
    expect_method(cfg, cfg.method == Method::Sdifp, "step_sdifp")?;
    step(params, problem, cfg, data)
}

/// SDIFP step with one index set `I` used in both factors.
pub fn step_soo<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    data: &StepBatch<S>,
) -> Result<StepOutput<S>> {
    expect_method(cfg, cfg.method == Method::Sdifp, "step_soo")?;
    let cfg = TrainConfig { estimator: Estimator::Soo, ..cfg.clone() };
    step(params, problem, &cfg, data)
}

/// Full-tape step for `vanilla`, `soft` or `discrete_proj`.
pub fn step_baseline<S: Scalar>(
    params: &MLPParams<S>,
    problem: &PDEProblem<S>,
    cfg: &TrainConfig,
    data: &StepBatch<S>,
) -> Result<StepOutput<S>> {
    expect_method(cfg, cfg.method != Method::Sdifp, "step_baseline")?;
    step(params, problem, cfg, data)
}
