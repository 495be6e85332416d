use std::fmt::Debug;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Elementary operations that can be recorded one node at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Tanh,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Pow2,
}

impl Primitive {
    pub const ALL: [Primitive; 10] = [
        Primitive::Add,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::Div,
        Primitive::Tanh,
        Primitive::Sin,
        Primitive::Cos,
        Primitive::Exp,
        Primitive::Sqrt,
        Primitive::Pow2,
    ];

    pub fn arity(self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => 2,
            _ => 1,
        }
    }
}

/// Inner product of a parameter row with `inputs`, plus an optional bias.
///
/// Every backend computes dense-layer pre-activations through this
/// function so that plain and recorded evaluation agree bit for bit.
#[inline]
pub fn dot_value<S: Scalar>(weights: &[S], inputs: impl Iterator<Item = S>, bias: Option<S>) -> S {
    let mut acc = [S::zero(); 4];
    for (j, (w, x)) in weights.iter().zip(inputs).enumerate() {
        acc[j & 3] += *w * x;
    }
    let s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    match bias {
        Some(b) => s + b,
        None => s,
    }
}

/// Arithmetic over either plain scalars or tape-recorded values.
///
/// Implementations hold a read-only view of the flat parameter vector so
/// that [`Backend::dot`] can address weight rows by offset.
pub trait Backend<S: Scalar> {
    type V: Copy + Debug;

    fn constant(&mut self, c: S) -> Self::V;
    fn value(&self, v: Self::V) -> S;
    fn params(&self) -> &[S];

    /// A parameter entry as a differentiable value.
    fn param(&mut self, index: usize) -> Self::V;

    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn div(&mut self, a: Self::V, b: Self::V) -> Result<Self::V>;
    fn neg(&mut self, a: Self::V) -> Self::V;
    fn scale(&mut self, a: Self::V, c: S) -> Self::V;
    fn add_const(&mut self, a: Self::V, c: S) -> Self::V;
    /// `ca * a + cb * b`
    fn lin2(&mut self, a: Self::V, ca: S, b: Self::V, cb: S) -> Self::V;
    fn tanh(&mut self, a: Self::V) -> Self::V;
    fn sin(&mut self, a: Self::V) -> Self::V;
    fn cos(&mut self, a: Self::V) -> Self::V;
    fn exp(&mut self, a: Self::V) -> Self::V;
    fn sqrt(&mut self, a: Self::V) -> Result<Self::V>;
    fn pow2(&mut self, a: Self::V) -> Self::V;

    /// `Σ_j θ[weights + j] · inputs[j] (+ θ[bias])`.
    fn dot(&mut self, weights: usize, inputs: &[Self::V], bias: Option<usize>) -> Self::V;

    /// `Σ_i coeffs[i] · xs[i]` as a single operation.
    fn lincomb(&mut self, xs: &[Self::V], coeffs: &[S]) -> Self::V;

    /// A value whose derivative with respect to `parents` is supplied by
    /// the caller instead of being derived from recorded operations.
    /// Used for quantities computed outside the tape (detached quadrature)
    /// whose parameter sensitivity is estimated from tape values.
    fn implicit(&mut self, value: S, parents: &[Self::V], partials: &[S]) -> Self::V;

    fn sum(&mut self, xs: &[Self::V]) -> Self::V {
        let ones = vec![S::one(); xs.len()];
        self.lincomb(xs, &ones)
    }

    /// True when `v` is structurally zero, so products with it can be
    /// skipped. Plain evaluation cannot tell and always answers false.
    fn known_zero(&self, _v: Self::V) -> bool {
        false
    }

    fn zero(&mut self) -> Self::V {
        self.constant(S::zero())
    }

    /// Apply a primitive by name. `args.len()` must equal its arity.
    fn record(&mut self, op: Primitive, args: &[Self::V]) -> Result<Self::V> {
        if args.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{op:?} takes {} argument(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        Ok(match op {
            Primitive::Add => self.add(args[0], args[1]),
            Primitive::Sub => self.sub(args[0], args[1]),
            Primitive::Mul => self.mul(args[0], args[1]),
            Primitive::Div => self.div(args[0], args[1])?,
            Primitive::Tanh => self.tanh(args[0]),
            Primitive::Sin => self.sin(args[0]),
            Primitive::Cos => self.cos(args[0]),
            Primitive::Exp => self.exp(args[0]),
            Primitive::Sqrt => self.sqrt(args[0])?,
            Primitive::Pow2 => self.pow2(args[0]),
        })
    }
}

pub(crate) fn check_div<S: Scalar>(b: S) -> Result<()> {
    if b == S::zero() {
        Err(Error::Domain("division by zero".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn check_sqrt<S: Scalar>(a: S) -> Result<()> {
    if a < S::zero() {
        Err(Error::Domain(format!("sqrt of negative value {a}")))
    } else {
        Ok(())
    }
}

/// Plain evaluation: values are scalars, nothing is recorded.
#[derive(Debug, Clone, Copy)]
pub struct Eval<'a, S> {
    params: &'a [S],
}

impl<'a, S: Scalar> Eval<'a, S> {
    pub fn new(params: &'a [S]) -> Self {
        Self { params }
    }

    pub fn without_params() -> Self {
        Self { params: &[] }
    }
}

impl<S: Scalar> Backend<S> for Eval<'_, S> {
    type V = S;

    #[inline]
    fn constant(&mut self, c: S) -> S {
        c
    }
    #[inline]
    fn value(&self, v: S) -> S {
        v
    }
    fn params(&self) -> &[S] {
        self.params
    }
    #[inline]
    fn param(&mut self, index: usize) -> S {
        self.params[index]
    }
    #[inline]
    fn add(&mut self, a: S, b: S) -> S {
        a + b
    }
    #[inline]
    fn sub(&mut self, a: S, b: S) -> S {
        a - b
    }
    #[inline]
    fn mul(&mut self, a: S, b: S) -> S {
        a * b
    }
    fn div(&mut self, a: S, b: S) -> Result<S> {
        check_div(b)?;
        Ok(a / b)
    }
    #[inline]
    fn neg(&mut self, a: S) -> S {
        -a
    }
    #[inline]
    fn scale(&mut self, a: S, c: S) -> S {
        a * c
    }
    #[inline]
    fn add_const(&mut self, a: S, c: S) -> S {
        a + c
    }
    #[inline]
    fn lin2(&mut self, a: S, ca: S, b: S, cb: S) -> S {
        ca * a + cb * b
    }
    #[inline]
    fn tanh(&mut self, a: S) -> S {
        a.tanh()
    }
    #[inline]
    fn sin(&mut self, a: S) -> S {
        a.sin()
    }
    #[inline]
    fn cos(&mut self, a: S) -> S {
        a.cos()
    }
    #[inline]
    fn exp(&mut self, a: S) -> S {
        a.exp()
    }
    fn sqrt(&mut self, a: S) -> Result<S> {
        check_sqrt(a)?;
        Ok(a.sqrt())
    }
    #[inline]
    fn pow2(&mut self, a: S) -> S {
        a * a
    }
    fn dot(&mut self, weights: usize, inputs: &[S], bias: Option<usize>) -> S {
        let w = &self.params[weights..weights + inputs.len()];
        dot_value(w, inputs.iter().copied(), bias.map(|b| self.params[b]))
    }
    fn lincomb(&mut self, xs: &[S], coeffs: &[S]) -> S {
        let mut acc = S::zero();
        for (&x, &c) in xs.iter().zip(coeffs) {
            acc += c * x;
        }
        acc
    }
    fn implicit(&mut self, value: S, _parents: &[S], _partials: &[S]) -> S {
        value
    }
}
