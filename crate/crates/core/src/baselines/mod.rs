//! Comparison methods: explicit Euclidean projections of a discrete
//! field onto Riemann-sum constraints, and the soft-constraint penalty.

use crate::adcore::Backend;
use crate::error::{Error, Result};
use crate::sampler::{CloudSource, Domain, PointCloud};
use crate::scalar::{pairwise_sum, Scalar};

/// Values of a field on a grid or point cloud.
pub type DiscreteField<S> = Vec<S>;

/// Largest grid a discrete projection will be attempted on.
pub const MAX_GRID_POINTS: usize = 1 << 20;

/// Uniform tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec<S> {
    pub counts: Vec<usize>,
    pub spacing: Vec<S>,
}

impl<S: Scalar> GridSpec<S> {
    /// Cell-centred grid with `counts[k]` cells along dimension `k`.
    pub fn cell_centered(domain: &Domain<S>, counts: &[usize]) -> Result<Self> {
        if counts.len() != domain.dim() {
            return Err(Error::Config("grid needs one count per dimension".into()));
        }
        let g = Self {
            counts: counts.to_vec(),
            spacing: counts.iter().enumerate().map(|(k, &n)| domain.width(k) / S::from_count(n.max(1))).collect(),
        };
        if g.n() < 2 {
            return Err(Error::Config("grid needs at least 2 points".into()));
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.counts.iter().product()
    }

    /// `ΔV = Π Δx_k`
    pub fn cell_volume(&self) -> S {
        self.spacing.iter().fold(S::one(), |a, &h| a * h)
    }

    /// Cell centres, last dimension fastest.
    pub fn points(&self, domain: &Domain<S>) -> Result<PointCloud<S>> {
        let d = self.counts.len();
        let n = self.n();
        let mut coords = Vec::with_capacity(n * d);
        let mut idx = vec![0usize; d];
        for _ in 0..n {
            for k in 0..d {
                coords.push(domain.lower()[k] + (S::from_count(idx[k]) + S::lit(0.5)) * self.spacing[k]);
            }
            for k in (0..d).rev() {
                idx[k] += 1;
                if idx[k] < self.counts[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        PointCloud::new(d, coords, CloudSource::Grid)
    }
}

/// Refuse grids above [`MAX_GRID_POINTS`], reporting the estimated tape
/// memory `n · nodes_per_point · bytes_per_node`.
pub fn preflight(n: usize, nodes_per_point: usize, bytes_per_node: usize) -> Result<u64> {
    let estimate = n as u64 * nodes_per_point as u64 * bytes_per_node as u64;
    if n > MAX_GRID_POINTS {
        return Err(Error::Refused(format!(
            "grid of {n} points exceeds the cap of {MAX_GRID_POINTS}; estimated tape memory {:.1} GiB",
            estimate as f64 / (1u64 << 30) as f64
        )));
    }
    Ok(estimate)
}

fn mean<S: Scalar>(u: &[S]) -> S {
    pairwise_sum(u) / S::from_count(u.len())
}

/// Nearest point with `ΔV Σ y = c1`: a uniform shift.
pub fn proj_linear<S: Scalar>(field: &[S], dv: S, c1: S) -> Result<DiscreteField<S>> {
    if field.is_empty() {
        return Err(Error::Input("empty field".into()));
    }
    let shift = c1 / (S::from_count(field.len()) * dv) - mean(field);
    Ok(field.iter().map(|&u| u + shift).collect())
}

/// Nearest point with `ΔV Σ y² = c2`: a uniform rescaling.
pub fn proj_quadratic<S: Scalar>(field: &[S], dv: S, c2: S) -> Result<DiscreteField<S>> {
    let ss = pairwise_sum(&field.iter().map(|&u| u * u).collect::<Vec<_>>());
    if !(ss > S::zero()) {
        return Err(Error::Degenerate("field has zero norm".into()));
    }
    if !(c2 > S::zero()) {
        return Err(Error::Infeasible(format!("quadratic target {c2} must be positive")));
    }
    let s = (c2 / (dv * ss)).sqrt();
    Ok(field.iter().map(|&u| u * s).collect())
}

/// `(α, β)` with `y = α u + β` the nearest point satisfying both sums.
pub fn combined_affine<S: Scalar>(field: &[S], dv: S, c1: S, c2: S) -> Result<(S, S)> {
    if field.len() < 2 {
        return Err(Error::Input("combined projection needs at least 2 values".into()));
    }
    let n = S::from_count(field.len());
    let level = c1 / (n * dv);
    let budget = c2 / dv - c1 * c1 / (n * dv * dv);
    if !(budget > S::zero()) {
        return Err(Error::Infeasible(format!("c2/ΔV − c1²/(nΔV²) = {budget} must be positive")));
    }
    let m = mean(field);
    let ss = pairwise_sum(&field.iter().map(|&u| (u - m) * (u - m)).collect::<Vec<_>>());
    if !(ss > S::zero()) {
        return Err(Error::Degenerate("field has zero variance".into()));
    }
    let s = (budget / ss).sqrt();
    Ok((s, level - s * m))
}

/// Nearest point satisfying `ΔV Σ y = c1` and `ΔV Σ y² = c2`.
pub fn proj_combined<S: Scalar>(field: &[S], dv: S, c1: S, c2: S) -> Result<DiscreteField<S>> {
    if field.len() < 2 {
        return Err(Error::Input("combined projection needs at least 2 values".into()));
    }
    let n = S::from_count(field.len());
    let level = c1 / (n * dv);
    let (s, _) = combined_affine(field, dv, c1, c2)?;
    let m = mean(field);
    Ok(field.iter().map(|&u| (u - m) * s + level).collect())
}

/// The grid formula applied to a random cloud with `ΔV = |X|/n`.
/// Constraints hold on this cloud only.
pub fn mc_misuse_projection<S: Scalar>(field: &[S], volume: S, c1: S, c2: S) -> Result<DiscreteField<S>> {
    let dv = volume / S::from_count(field.len().max(1));
    proj_combined(field, dv, c1, c2)
}

/// [`combined_affine`] on recorded values, so that gradients flow
/// through the batch statistics.
pub fn combined_affine_on<S: Scalar, B: Backend<S>>(
    b: &mut B,
    field: &[B::V],
    dv: S,
    c1: S,
    c2: S,
) -> Result<(B::V, B::V)> {
    let values: Vec<S> = field.iter().map(|&v| b.value(v)).collect();
    combined_affine(&values, dv, c1, c2)?;
    let n = S::from_count(field.len());
    let level = c1 / (n * dv);
    let budget = c2 / dv - c1 * c1 / (n * dv * dv);
    let coeffs = vec![S::one() / n; field.len()];
    let m = b.lincomb(field, &coeffs);
    let sq: Vec<B::V> = field
        .iter()
        .map(|&u| {
            let c = b.sub(u, m);
            b.pow2(c)
        })
        .collect();
    let ss = b.sum(&sq);
    let k = b.constant(budget);
    let ratio = b.div(k, ss)?;
    let s = b.sqrt(ratio)?;
    let sm = b.mul(s, m);
    let lv = b.constant(level);
    let beta = b.sub(lv, sm);
    Ok((s, beta))
}

/// `λ · (1/T) Σ_t (c(t) − ĉ(t))²`
pub fn soft_constraint_loss<S: Scalar>(predicted: &[S], truth: &[S], lambda: S) -> Result<S> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Input("soft constraint needs equal, nonempty sample lists".into()));
    }
    let sq: Vec<S> = predicted.iter().zip(truth).map(|(&p, &c)| (c - p) * (c - p)).collect();
    Ok(lambda * pairwise_sum(&sq) / S::from_count(sq.len()))
}

/// [`soft_constraint_loss`] on recorded predictions.
pub fn soft_constraint_on<S: Scalar, B: Backend<S>>(
    b: &mut B,
    predicted: &[B::V],
    truth: &[S],
    lambda: S,
) -> Result<B::V> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(Error::Input("soft constraint needs equal, nonempty sample lists".into()));
    }
    let sq: Vec<B::V> = predicted
        .iter()
        .zip(truth)
        .map(|(&p, &c)| {
            let d = b.add_const(p, -c);
            b.pow2(d)
        })
        .collect();
    let w = vec![lambda / S::from_count(sq.len()); sq.len()];
    Ok(b.lincomb(&sq, &w))
}
