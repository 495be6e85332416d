use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Invariant integrals at increasing time stamps, linearly interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantTable<S> {
    pub t: Vec<S>,
    pub c1: Vec<S>,
    pub c2: Vec<S>,
}

impl<S: Scalar> InvariantTable<S> {
    pub fn new(t: Vec<S>, c1: Vec<S>, c2: Vec<S>) -> Result<Self> {
        if t.is_empty() || t.len() != c1.len() || t.len() != c2.len() {
            return Err(Error::Input("invariant table columns must be nonempty and equally long".into()));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Input("invariant table stamps must increase".into()));
        }
        Ok(Self { t, c1, c2 })
    }

    pub fn t_range(&self) -> (S, S) {
        (self.t[0], *self.t.last().unwrap())
    }

    /// `(c1(t), c2(t))`; exact on stamps.
    pub fn at(&self, t: S) -> Result<(S, S)> {
        let (lo, hi) = self.t_range();
        if !(t >= lo && t <= hi) {
            return Err(Error::Range(format!("t = {t} outside table range [{lo}, {hi}]")));
        }
        let i = self.t.partition_point(|&s| s <= t);
        if i == 0 {
            return Ok((self.c1[0], self.c2[0]));
        }
        let i = i - 1;
        if self.t[i] == t || i + 1 == self.t.len() {
            return Ok((self.c1[i], self.c2[i]));
        }
        let w = (t - self.t[i]) / (self.t[i + 1] - self.t[i]);
        let lerp = |c: &[S]| c[i] + w * (c[i + 1] - c[i]);
        Ok((lerp(&self.c1), lerp(&self.c2)))
    }
}
