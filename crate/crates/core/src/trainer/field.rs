use crate::adcore::{Backend, Jet};
use crate::error::Result;
use crate::net::{jet_from_trace, trace, MLPParams, Trace};
use crate::pde::Field;
use crate::scalar::Scalar;
use crate::sdifp::apply_projection_jet;

/// The network, optionally behind an affine map `α u + β` whose
/// coefficients are values of the backend.
///
/// Order-0 traces are cached per point (preloaded or recorded on first
/// use), so all terms of a residual at one point share one trace. Jets are not cached: each linear term records its own,
/// which keeps the tape proportional to the number of terms evaluated.
pub struct NetField<'p, S, V> {
    params: &'p MLPParams<S>,
    affine: Option<(V, V)>,
    cached: Vec<(Vec<S>, S, Trace<V>)>,
    cursor: usize,
}

impl<'p, S: Scalar, V: Copy> NetField<'p, S, V> {
    pub fn raw(params: &'p MLPParams<S>) -> Self {
        Self { params, affine: None, cached: Vec::new(), cursor: 0 }
    }

    pub fn projected(params: &'p MLPParams<S>, alpha: V, beta: V) -> Self {
        Self { params, affine: Some((alpha, beta)), cached: Vec::new(), cursor: 0 }
    }

    pub fn with_affine(params: &'p MLPParams<S>, affine: Option<(V, V)>) -> Self {
        Self { params, affine, cached: Vec::new(), cursor: 0 }
    }

    /// Reuse a trace already recorded at `(x, t)`.
    pub fn preload(&mut self, x: &[S], t: S, tr: Trace<V>) {
        self.cached.push((x.to_vec(), t, tr));
    }

    fn trace_at<B: Backend<S, V = V>>(&mut self, b: &mut B, x: &[S], t: S) -> Result<&mut Trace<V>> {
        // lookups are usually sequential, so scan from the last hit
        let n = self.cached.len();
        let hit = (0..n)
            .map(|k| (self.cursor + k) % n)
            .find(|&i| self.cached[i].1 == t && self.cached[i].0.as_slice() == x);
        let i = match hit {
            Some(i) => i,
            None => {
                let tr = trace(b, self.params, x, t)?;
                self.cached.push((x.to_vec(), t, tr));
                n
            }
        };
        self.cursor = i;
        Ok(&mut self.cached[i].2)
    }
}

impl<'p, S: Scalar, B: Backend<S>> Field<S, B> for NetField<'p, S, B::V> {
    fn value(&mut self, b: &mut B, x: &[S], t: S) -> Result<B::V> {
        let affine = self.affine;
        let u = self.trace_at(b, x, t)?.output;
        Ok(match affine {
            Some((a, c)) => {
                let au = b.mul(a, u);
                b.add(au, c)
            }
            None => u,
        })
    }

    fn jet(&mut self, b: &mut B, x: &[S], t: S, coord: usize, order: usize) -> Result<Jet<B::V>> {
        let (params, affine) = (self.params, self.affine);
        let tr = self.trace_at(b, x, t)?;
        let j = jet_from_trace(b, params, tr, coord, order)?;
        Ok(match affine {
            Some((a, c)) => apply_projection_jet(b, &j, a, c),
            None => j,
        })
    }
}
