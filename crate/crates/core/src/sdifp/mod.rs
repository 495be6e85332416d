//! Affine functional projection onto one linear and one quadratic
//! integral constraint.
//!
//! At a time slice `t` the raw network is corrected to
//! `ũ = α u_raw + β`, where `(α, β)` solve
//!
//! ```text
//! α μ1 + β          = c̄1
//! α² μ2 + 2αβ μ1 + β² = c̄2
//! ```
//!
//! with `μ1`, `μ2` the mean and mean square of `u_raw` over a large
//! detached cloud. The positive root is `α = √(V / σ²)`, `β = c̄1 − α μ1`
//! with `V = c̄2 − c̄1²` and `σ² = μ2 − μ1²` floored at [`EPS_FLOOR`].
//! Parameter gradients of `α`, `β` come from the analytic Jacobians and
//! mini-batch estimates of `∇μ1`, `∇μ2`.

use crate::adcore::{Backend, GradVector, Jet, Tape};
use crate::error::{Error, Result};
use crate::net::{forward_batch, trace, MLPParams};
use crate::sampler::PointCloud;
use crate::scalar::{pairwise_sum, Scalar};

/// Default variance floor.
pub const EPS_FLOOR: f64 = 1e-8;

/// Domain-averaged targets `c̄1 = c1/|X|`, `c̄2 = c2/|X|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetInvariants<S> {
    pub c1_bar: S,
    pub c2_bar: S,
}

impl<S: Scalar> TargetInvariants<S> {
    pub fn new(c1_bar: S, c2_bar: S) -> Self {
        Self { c1_bar, c2_bar }
    }

    /// From the integrals `c1 = ∫u`, `c2 = ∫u²` over a domain of `volume`.
    pub fn from_integrals(c1: S, c2: S, volume: S) -> Self {
        Self { c1_bar: c1 / volume, c2_bar: c2 / volume }
    }

    /// `V = c̄2 − c̄1²`
    pub fn variance(&self) -> S {
        self.c2_bar - self.c1_bar * self.c1_bar
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate<S> {
    pub mu1: S,
    pub mu2: S,
    pub sigma2: S,
    pub m: usize,
    pub t: S,
}

impl<S: Scalar> MomentEstimate<S> {
    pub fn from_values(values: &[S], t: S) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Input(format!("need at least 2 points for moments, got {}", values.len())));
        }
        let n = S::from_count(values.len());
        let mu1 = pairwise_sum(values) / n;
        let sq: Vec<S> = values.iter().map(|&u| u * u).collect();
        let mu2 = pairwise_sum(&sq) / n;
        Ok(Self { mu1, mu2, sigma2: mu2 - mu1 * mu1, m: values.len(), t })
    }

    /// `max(σ², ε)`
    pub fn floored_variance(&self, eps: S) -> S {
        self.sigma2.max(eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams<S> {
    pub alpha: S,
    pub beta: S,
    pub t: S,
}

impl<S: Scalar> AffineParams<S> {
    pub fn identity(t: S) -> Self {
        Self { alpha: S::one(), beta: S::zero(), t }
    }

    pub fn apply(&self, u: S) -> S {
        self.alpha * u + self.beta
    }
}

/// Sensitivities of `(α, β)` to `(μ1, μ2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionJacobians<S> {
    pub da_dmu1: S,
    pub da_dmu2: S,
    pub db_dmu1: S,
    pub db_dmu2: S,
}

/// Moments of `u_raw(·, t)` over `cloud`; never touches a tape.
pub fn estimate_moments<S: Scalar>(params: &MLPParams<S>, cloud: &PointCloud<S>, t: S) -> Result<MomentEstimate<S>> {
    if cloud.len() < 2 {
        return Err(Error::Input(format!("need at least 2 points for moments, got {}", cloud.len())));
    }
    MomentEstimate::from_values(&forward_batch(params, cloud, t)?, t)
}

/// Closed-form positive root of the constraint system.
pub fn solve_affine<S: Scalar>(
    moments: &MomentEstimate<S>,
    targets: &TargetInvariants<S>,
    eps: S,
) -> Result<AffineParams<S>> {
    let v = targets.variance();
    if !(moments.mu1.is_finite() && moments.mu2.is_finite()) {
        return Err(Error::Input("non-finite moments".into()));
    }
    if !targets.c1_bar.is_finite() || !targets.c2_bar.is_finite() {
        return Err(Error::Input("non-finite targets".into()));
    }
    if !(v > S::zero()) {
        return Err(Error::IllPosedTargets { t: moments.t.as_f64(), variance: v.as_f64() });
    }
    let alpha = (v / moments.floored_variance(eps)).sqrt();
    let beta = targets.c1_bar - alpha * moments.mu1;
    Ok(AffineParams { alpha, beta, t: moments.t })
}

/// Analytic Jacobians of [`solve_affine`], using the same floored
/// variance as the forward map.
pub fn projection_jacobians<S: Scalar>(
    moments: &MomentEstimate<S>,
    affine: &AffineParams<S>,
    eps: S,
) -> ProjectionJacobians<S> {
    let s2 = moments.floored_variance(eps);
    let a = affine.alpha;
    let mu1 = moments.mu1;
    let da_dmu1 = a * mu1 / s2;
    let da_dmu2 = -a / (s2 + s2);
    ProjectionJacobians { da_dmu1, da_dmu2, db_dmu1: -a - mu1 * da_dmu1, db_dmu2: -mu1 * da_dmu2 }
}

/// Mini-batch estimates `(1/N) Σ ∇u_j` and `(2/N) Σ u_j ∇u_j`.
pub fn moment_grad_estimates<S: Scalar>(
    params: &MLPParams<S>,
    batch: &PointCloud<S>,
    t: S,
) -> Result<(GradVector<S>, GradVector<S>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch for moment gradients".into()));
    }
    let mut tape = Tape::with_params(&params.data);
    let mut outs = Vec::with_capacity(batch.len());
    for x in batch.iter() {
        outs.push(trace(&mut tape, params, x, t)?.output);
    }
    let inv_n = S::one() / S::from_count(batch.len());
    let s1: Vec<_> = outs.iter().map(|&u| (u, inv_n)).collect();
    let s2: Vec<_> = outs.iter().map(|&u| (u, (tape.value(u) + tape.value(u)) * inv_n)).collect();
    Ok((tape.backward_seeded(&s1).params, tape.backward_seeded(&s2).params))
}

/// `∇ũ = α∇u + u∇α + ∇β` with `∇α = ∂α/∂μ1 ∇μ1 + ∂α/∂μ2 ∇μ2`, likewise β.
pub fn projected_grad<S: Scalar>(
    affine: &AffineParams<S>,
    jac: &ProjectionJacobians<S>,
    moment_grads: (&GradVector<S>, &GradVector<S>),
    u_raw: S,
    grad_u: &GradVector<S>,
) -> GradVector<S> {
    let (g1, g2) = moment_grads;
    let ca1 = u_raw * jac.da_dmu1 + jac.db_dmu1;
    let ca2 = u_raw * jac.da_dmu2 + jac.db_dmu2;
    GradVector(
        grad_u
            .iter()
            .zip(g1.iter())
            .zip(g2.iter())
            .map(|((&gu, &a), &b)| affine.alpha * gu + ca1 * a + ca2 * b)
            .collect(),
    )
}

/// `α u + β` on a plain value.
pub fn apply_projection<S: Scalar>(u: S, affine: &AffineParams<S>) -> S {
    affine.apply(u)
}

/// `α u + β` on a jet whose `α`, `β` are values of backend `b`: the
/// constant coefficient is shifted, all coefficients are scaled.
pub fn apply_projection_jet<S: Scalar, B: Backend<S>>(b: &mut B, jet: &Jet<B::V>, alpha: B::V, beta: B::V) -> Jet<B::V> {
    jet.scale_by(b, alpha).shift_by(b, beta)
}

/// Shift the batch so its mean is exactly `c̄1`.
pub fn same_batch_shift<S: Scalar>(values: &[S], c1_bar: S) -> Result<(S, Vec<S>)> {
    if values.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let delta = c1_bar - pairwise_sum(values) / S::from_count(values.len());
    Ok((delta, values.iter().map(|&u| u + delta).collect()))
}
