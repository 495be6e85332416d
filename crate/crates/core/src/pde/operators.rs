use super::{BoundaryKind, Derivative, LinearTerm, Nonlinear, PDEProblem};
use crate::adcore::{Backend, Eval, Jet};
use crate::error::{Error, Result};
use crate::sampler::{PointCloud, SeededRng};
use crate::scalar::Scalar;

/// A (possibly projected) field that residual operators can query.
///
/// `jet` returns the Taylor expansion of the field along input `coord`
/// up to `order`; implementations may refuse orders they cannot supply.
pub trait Field<S: Scalar, B: Backend<S>> {
    fn value(&mut self, b: &mut B, x: &[S], t: S) -> Result<B::V>;
    fn jet(&mut self, b: &mut B, x: &[S], t: S, coord: usize, order: usize) -> Result<Jet<B::V>>;
}

/// Field given by a closure over input jets, evaluated on plain values.
pub struct JetFnField<F> {
    f: F,
}

impl<F> JetFnField<F> {
    pub fn new(f: F) -> Self {
        Self { f }
    }
}

impl<'a, S, F> Field<S, Eval<'a, S>> for JetFnField<F>
where
    S: Scalar,
    F: FnMut(&mut Eval<'a, S>, &[Jet<S>]) -> Result<Jet<S>>,
{
    fn value(&mut self, b: &mut Eval<'a, S>, x: &[S], t: S) -> Result<S> {
        let inputs: Vec<Jet<S>> =
            x.iter().chain(Some(&t)).map(|&v| Jet::constant(b, v, 0)).collect::<Result<_>>()?;
        Ok((self.f)(b, &inputs)?.coeffs[0])
    }

    fn jet(&mut self, b: &mut Eval<'a, S>, x: &[S], t: S, coord: usize, order: usize) -> Result<Jet<S>> {
        let inputs: Vec<Jet<S>> = x
            .iter()
            .chain(Some(&t))
            .enumerate()
            .map(|(k, &v)| if k == coord { Jet::variable(b, v, order) } else { Jet::constant(b, v, order) })
            .collect::<Result<_>>()?;
        (self.f)(b, &inputs)
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

impl<S: Scalar> LinearTerm<S> {
    /// `L_k[u]` at `(x, t)`. Monomials on the same coordinate share one
    /// jet of the highest order they need.
    pub fn apply<B: Backend<S>, F: Field<S, B>>(&self, b: &mut B, field: &mut F, x: &[S], t: S) -> Result<B::V> {
        let mut vals = Vec::with_capacity(self.monomials.len());
        let mut coeffs = Vec::with_capacity(self.monomials.len());
        let mut done = vec![false; self.monomials.len()];
        for i in 0..self.monomials.len() {
            if done[i] {
                continue;
            }
            match self.monomials[i].deriv {
                Derivative::Identity => {
                    vals.push(field.value(b, x, t)?);
                    coeffs.push(self.monomials[i].coeff);
                    done[i] = true;
                }
                Derivative::Partial { coord, .. } => {
                    let group: Vec<usize> = (i..self.monomials.len())
                        .filter(|&j| matches!(self.monomials[j].deriv, Derivative::Partial { coord: c, .. } if c == coord))
                        .collect();
                    let order = group
                        .iter()
                        .map(|&j| match self.monomials[j].deriv {
                            Derivative::Partial { order, .. } => order,
                            Derivative::Identity => 0,
                        })
                        .max()
                        .unwrap_or(0);
                    let jet = field.jet(b, x, t, coord, order)?;
                    for j in group {
                        if let Derivative::Partial { order: o, .. } = self.monomials[j].deriv {
                            vals.push(jet.coeffs[o]);
                            coeffs.push(self.monomials[j].coeff * S::lit(factorial(o)));
                        }
                        done[j] = true;
                    }
                }
            }
        }
        Ok(b.lincomb(&vals, &coeffs))
    }
}

impl<S: Scalar> Nonlinear<S> {
    pub fn apply<B: Backend<S>, F: Field<S, B>>(&self, b: &mut B, field: &mut F, x: &[S], t: S) -> Result<Option<B::V>> {
        Ok(match *self {
            Nonlinear::None => None,
            Nonlinear::Convective { a } => {
                let j = field.jet(b, x, t, 0, 1)?;
                let p = b.mul(j.coeffs[0], j.coeffs[1]);
                Some(b.scale(p, a))
            }
            Nonlinear::Sine => {
                let u = field.value(b, x, t)?;
                Some(b.sin(u))
            }
        })
    }
}

impl<S: Scalar> PDEProblem<S> {
    /// `N[u] − R` at a point: the part of the residual that is never
    /// index-sampled.
    pub fn remainder<B: Backend<S>, F: Field<S, B>>(
        &self,
        b: &mut B,
        field: &mut F,
        x: &[S],
        t: S,
    ) -> Result<Option<B::V>> {
        let n = self.nonlinear.apply(b, field, x, t)?;
        let r = self.forcing.as_ref().map(|f| f(x, t));
        Ok(match (n, r) {
            (n, None) => n,
            (Some(v), Some(r)) => Some(b.add_const(v, -r)),
            (None, Some(r)) => Some(b.constant(-r)),
        })
    }

    /// `(N_L/|S|) Σ_{k∈S} L_k[u]`
    pub fn sampled_linear<B: Backend<S>, F: Field<S, B>>(
        &self,
        b: &mut B,
        field: &mut F,
        x: &[S],
        t: S,
        subset: &[usize],
    ) -> Result<B::V> {
        if subset.is_empty() {
            return Err(Error::Contract("empty term subset".into()));
        }
        if let Some(&k) = subset.iter().find(|&&k| k >= self.n_terms()) {
            return Err(Error::Contract(format!("term index {k} out of range for {} terms", self.n_terms())));
        }
        let mut vals = Vec::with_capacity(subset.len());
        for &k in subset {
            vals.push(self.terms[k].apply(b, field, x, t)?);
        }
        let w = S::from_count(self.n_terms()) / S::from_count(subset.len());
        Ok(b.lincomb(&vals, &vec![w; vals.len()]))
    }
}

/// `Σ_k L_k[u] + N[u] − R` at `(x, t)`.
pub fn residual_full<S: Scalar, B: Backend<S>, F: Field<S, B>>(
    problem: &PDEProblem<S>,
    b: &mut B,
    field: &mut F,
    x: &[S],
    t: S,
) -> Result<B::V> {
    let all: Vec<usize> = (0..problem.n_terms()).collect();
    residual_sampled(problem, b, field, x, t, &all)
}

/// `(N_L/|S|) Σ_{k∈S} L_k[u] + N[u] − R` at `(x, t)`.
pub fn residual_sampled<S: Scalar, B: Backend<S>, F: Field<S, B>>(
    problem: &PDEProblem<S>,
    b: &mut B,
    field: &mut F,
    x: &[S],
    t: S,
    subset: &[usize],
) -> Result<B::V> {
    let lin = problem.sampled_linear(b, field, x, t, subset)?;
    Ok(match problem.remainder(b, field, x, t)? {
        Some(r) => b.add(lin, r),
        None => lin,
    })
}

/// A boundary sample. For periodic problems `partner` is the image of
/// `x` on the opposite face.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPoint<S> {
    pub x: Vec<S>,
    pub t: S,
    pub coord: usize,
    pub partner: Option<Vec<S>>,
}

/// `n` boundary samples with uniform face, position and time.
pub fn sample_boundary<S: Scalar>(problem: &PDEProblem<S>, n: usize, rng: &mut SeededRng) -> Vec<BoundaryPoint<S>> {
    let dom = &problem.domain;
    let d = dom.dim();
    (0..n)
        .map(|_| {
            let coord = rng.below(d);
            let upper = rng.below(2) == 1;
            let mut x: Vec<S> = (0..d).map(|k| dom.lower()[k] + dom.width(k) * S::lit(rng.unit())).collect();
            let t = dom.t_end() * S::lit(rng.unit());
            match problem.boundary {
                BoundaryKind::Neumann => {
                    x[coord] = if upper { dom.upper()[coord] } else { dom.lower()[coord] };
                    BoundaryPoint { x, t, coord, partner: None }
                }
                BoundaryKind::Periodic => {
                    x[coord] = dom.lower()[coord];
                    let mut y = x.clone();
                    y[coord] = dom.upper()[coord];
                    BoundaryPoint { x, t, coord, partner: Some(y) }
                }
            }
        })
        .collect()
}

/// Mean squared initial and boundary mismatches.
#[derive(Debug, Clone, Copy)]
pub struct IcBcLoss<V> {
    pub ic: V,
    pub bc: V,
}

impl<V: Copy> IcBcLoss<V> {
    pub fn weighted<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, w_ic: S, w_bc: S) -> V {
        b.lin2(self.ic, w_ic, self.bc, w_bc)
    }
}

/// IC term `mean (u(x,0) − u0(x))²` (plus `(∂t u)²` for second order in
/// time) and BC term: `(∂_n u)²` for Neumann, value and slope mismatch
/// across opposite faces for periodic problems.
pub fn ic_bc_loss<S: Scalar, B: Backend<S>, F: Field<S, B>>(
    problem: &PDEProblem<S>,
    b: &mut B,
    field: &mut F,
    ic_points: &PointCloud<S>,
    bc_points: &[BoundaryPoint<S>],
) -> Result<IcBcLoss<B::V>> {
    let tc = problem.time_coord();
    let mut ic_terms = Vec::with_capacity(ic_points.len() * 2);
    for x in ic_points.iter() {
        let u = if problem.time_order >= 2 {
            let j = field.jet(b, x, S::zero(), tc, 1)?;
            ic_terms.push(b.pow2(j.coeffs[1]));
            j.coeffs[0]
        } else {
            field.value(b, x, S::zero())?
        };
        let e = b.add_const(u, -problem.initial_value(x));
        ic_terms.push(b.pow2(e));
    }
    let mut bc_terms = Vec::with_capacity(bc_points.len() * 2);
    for p in bc_points {
        let j = field.jet(b, &p.x, p.t, p.coord, 1)?;
        match &p.partner {
            None => bc_terms.push(b.pow2(j.coeffs[1])),
            Some(y) => {
                let k = field.jet(b, y, p.t, p.coord, 1)?;
                let dv = b.sub(j.coeffs[0], k.coeffs[0]);
                let ds = b.sub(j.coeffs[1], k.coeffs[1]);
                bc_terms.push(b.pow2(dv));
                bc_terms.push(b.pow2(ds));
            }
        }
    }
    let mean = |b: &mut B, terms: &[B::V], count: usize| {
        if count == 0 {
            b.zero()
        } else {
            b.lincomb(terms, &vec![S::one() / S::from_count(count); terms.len()])
        }
    };
    let ic = mean(b, &ic_terms, ic_points.len());
    let bc = mean(b, &bc_terms, bc_points.len());
    Ok(IcBcLoss { ic, bc })
}
