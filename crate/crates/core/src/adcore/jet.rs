use super::backend::{Backend, Primitive};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Highest supported Taylor order.
pub const MAX_ORDER: usize = 3;

/// Truncated Taylor expansion along one input direction.
///
/// `coeffs[k]` holds `f^(k)/k!`. Entries above `order` are unused and
/// kept at zero.
#[derive(Debug, Clone, Copy)]
pub struct Jet<V> {
    pub coeffs: [V; MAX_ORDER + 1],
    pub order: usize,
}

fn check_order(order: usize) -> Result<()> {
    if order > MAX_ORDER {
        Err(Error::Unsupported(format!("jet order {order} exceeds {MAX_ORDER}")))
    } else {
        Ok(())
    }
}

/// Sum of products `Σ a_i · b_i`, skipping structural zeros.
fn dot_pairs<S: Scalar, B: Backend<S>>(b: &mut B, pairs: &[(B::V, B::V)]) -> B::V {
    let mut acc: Option<B::V> = None;
    for &(x, y) in pairs {
        if b.known_zero(x) || b.known_zero(y) {
            continue;
        }
        let p = b.mul(x, y);
        acc = Some(match acc {
            None => p,
            Some(a) => b.add(a, p),
        });
    }
    acc.unwrap_or_else(|| b.zero())
}

impl<V: Copy> Jet<V> {
    pub fn coeff(&self, k: usize) -> V {
        self.coeffs[k]
    }

    /// Jet of a quantity constant along the direction.
    pub fn constant<S: Scalar, B: Backend<S, V = V>>(b: &mut B, c: V, order: usize) -> Result<Self> {
        check_order(order)?;
        let z = b.zero();
        let mut coeffs = [z; MAX_ORDER + 1];
        coeffs[0] = c;
        Ok(Self { coeffs, order })
    }

    /// Jet of the seed coordinate itself: `(x, 1, 0, ...)`.
    pub fn variable<S: Scalar, B: Backend<S, V = V>>(b: &mut B, x: V, order: usize) -> Result<Self> {
        let mut j = Self::constant(b, x, order)?;
        if order >= 1 {
            j.coeffs[1] = b.constant(S::one());
        }
        Ok(j)
    }

    /// Build from explicit coefficients; the slice length sets the order.
    pub fn from_coeffs<S: Scalar, B: Backend<S, V = V>>(b: &mut B, cs: &[V]) -> Result<Self> {
        if cs.is_empty() {
            return Err(Error::Contract("jet needs at least one coefficient".into()));
        }
        let mut j = Self::constant(b, cs[0], cs.len() - 1)?;
        j.coeffs[..cs.len()].copy_from_slice(cs);
        Ok(j)
    }

    /// `k!·c_k`, the k-th derivative.
    pub fn derivative<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, k: usize) -> V {
        let f: f64 = (1..=k).map(|i| i as f64).product();
        b.scale(self.coeffs[k], S::lit(f))
    }

    fn map<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, mut f: impl FnMut(&mut B, V) -> V) -> Self {
        let mut out = *self;
        for k in 0..=self.order {
            out.coeffs[k] = f(b, self.coeffs[k]);
        }
        out
    }

    pub fn add<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, o: &Self) -> Self {
        let mut out = *self;
        out.order = self.order.min(o.order);
        for k in 0..=out.order {
            out.coeffs[k] = b.add(self.coeffs[k], o.coeffs[k]);
        }
        out
    }

    pub fn sub<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, o: &Self) -> Self {
        let mut out = *self;
        out.order = self.order.min(o.order);
        for k in 0..=out.order {
            out.coeffs[k] = b.sub(self.coeffs[k], o.coeffs[k]);
        }
        out
    }

    pub fn neg<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        self.map(b, |b, v| b.neg(v))
    }

    pub fn scale<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, c: S) -> Self {
        self.map(b, |b, v| b.scale(v, c))
    }

    /// Multiply every coefficient by a recorded value.
    pub fn scale_by<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, c: V) -> Self {
        self.map(b, |b, v| if b.known_zero(v) { v } else { b.mul(v, c) })
    }

    pub fn add_const<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, c: S) -> Self {
        let mut out = *self;
        out.coeffs[0] = b.add_const(self.coeffs[0], c);
        out
    }

    /// Add a recorded value to the constant coefficient.
    pub fn shift_by<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, c: V) -> Self {
        let mut out = *self;
        out.coeffs[0] = b.add(self.coeffs[0], c);
        out
    }

    /// Leibniz product `(f·g)_k = Σ_j f_j g_{k−j}`.
    pub fn mul<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, o: &Self) -> Self {
        let mut out = *self;
        out.order = self.order.min(o.order);
        let mut pairs = Vec::with_capacity(MAX_ORDER + 1);
        for k in 0..=out.order {
            pairs.clear();
            pairs.extend((0..=k).map(|j| (self.coeffs[j], o.coeffs[k - j])));
            out.coeffs[k] = dot_pairs(b, &pairs);
        }
        out
    }

    pub fn pow2<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        self.mul(b, self)
    }

    pub fn div<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, o: &Self) -> Result<Self> {
        let mut out = *self;
        out.order = self.order.min(o.order);
        let b0 = o.coeffs[0];
        out.coeffs[0] = b.div(self.coeffs[0], b0)?;
        for k in 1..=out.order {
            let pairs: Vec<_> = (0..k).map(|i| (out.coeffs[i], o.coeffs[k - i])).collect();
            let s = dot_pairs(b, &pairs);
            let num = b.sub(self.coeffs[k], s);
            out.coeffs[k] = b.div(num, b0)?;
        }
        Ok(out)
    }

    /// `tanh` through `y' = (1 − y²) z'`, given the value `y0 = tanh(z0)`
    /// and `p0 = 1 − y0²` computed by the caller.
    pub fn tanh_from<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B, y0: V, p0: V) -> Self {
        let mut y = *self;
        let mut p = *self;
        y.coeffs[0] = y0;
        p.coeffs[0] = p0;
        let mut pairs = Vec::with_capacity(MAX_ORDER + 1);
        for k in 1..=self.order {
            pairs.clear();
            for j in 1..=k {
                let zj = self.coeffs[j];
                let w = if j == 1 { zj } else { b.scale(zj, S::from_count(j)) };
                pairs.push((w, p.coeffs[k - j]));
            }
            let s = dot_pairs(b, &pairs);
            y.coeffs[k] = if k == 1 { s } else { b.scale(s, S::one() / S::from_count(k)) };
            if k < self.order {
                pairs.clear();
                pairs.extend((0..=k).map(|i| (y.coeffs[i], y.coeffs[k - i])));
                let q = dot_pairs(b, &pairs);
                p.coeffs[k] = b.neg(q);
            }
        }
        y
    }

    pub fn tanh<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        let y0 = b.tanh(self.coeffs[0]);
        let sq = b.pow2(y0);
        let one = b.constant(S::one());
        let p0 = b.sub(one, sq);
        self.tanh_from(b, y0, p0)
    }

    /// Coupled recurrence for `(sin z, cos z)`.
    pub fn sin_cos<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> (Self, Self) {
        let mut s = *self;
        let mut c = *self;
        s.coeffs[0] = b.sin(self.coeffs[0]);
        c.coeffs[0] = b.cos(self.coeffs[0]);
        for k in 1..=self.order {
            let w: Vec<V> = (1..=k)
                .map(|j| {
                    let zj = self.coeffs[j];
                    if j == 1 { zj } else { b.scale(zj, S::from_count(j)) }
                })
                .collect();
            let inv_k = S::one() / S::from_count(k);
            let ps: Vec<_> = (1..=k).map(|j| (w[j - 1], c.coeffs[k - j])).collect();
            let pc: Vec<_> = (1..=k).map(|j| (w[j - 1], s.coeffs[k - j])).collect();
            let ss = dot_pairs(b, &ps);
            let cc = dot_pairs(b, &pc);
            s.coeffs[k] = b.scale(ss, inv_k);
            c.coeffs[k] = b.scale(cc, -inv_k);
        }
        (s, c)
    }

    pub fn sin<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        self.sin_cos(b).0
    }

    pub fn cos<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        self.sin_cos(b).1
    }

    pub fn exp<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Self {
        let mut e = *self;
        e.coeffs[0] = b.exp(self.coeffs[0]);
        for k in 1..=self.order {
            let pairs: Vec<_> = (1..=k)
                .map(|j| {
                    let zj = self.coeffs[j];
                    let w = if j == 1 { zj } else { b.scale(zj, S::from_count(j)) };
                    (w, e.coeffs[k - j])
                })
                .collect();
            let s = dot_pairs(b, &pairs);
            e.coeffs[k] = b.scale(s, S::one() / S::from_count(k));
        }
        e
    }

    pub fn sqrt<S: Scalar, B: Backend<S, V = V>>(&self, b: &mut B) -> Result<Self> {
        let mut y = *self;
        y.coeffs[0] = b.sqrt(self.coeffs[0])?;
        if self.order == 0 {
            return Ok(y);
        }
        let two_y0 = b.scale(y.coeffs[0], S::lit(2.0));
        for k in 1..=self.order {
            let pairs: Vec<_> = (1..k).map(|i| (y.coeffs[i], y.coeffs[k - i])).collect();
            let s = dot_pairs(b, &pairs);
            let num = b.sub(self.coeffs[k], s);
            y.coeffs[k] = b.div(num, two_y0)?;
        }
        Ok(y)
    }

    /// Apply a primitive under jets.
    pub fn apply<S: Scalar, B: Backend<S, V = V>>(b: &mut B, op: Primitive, args: &[Self]) -> Result<Self> {
        if args.len() != op.arity() {
            return Err(Error::Contract(format!(
                "{op:?} takes {} argument(s), got {}",
                op.arity(),
                args.len()
            )));
        }
        let a = &args[0];
        Ok(match op {
            Primitive::Add => a.add(b, &args[1]),
            Primitive::Sub => a.sub(b, &args[1]),
            Primitive::Mul => a.mul(b, &args[1]),
            Primitive::Div => a.div(b, &args[1])?,
            Primitive::Tanh => a.tanh(b),
            Primitive::Sin => a.sin(b),
            Primitive::Cos => a.cos(b),
            Primitive::Exp => a.exp(b),
            Primitive::Sqrt => a.sqrt(b)?,
            Primitive::Pow2 => a.pow2(b),
        })
    }
}

/// A straight-line program over primitives.
///
/// Slots `0..inputs` hold the inputs; instruction `i` writes slot
/// `inputs + i`. The last slot is the output.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub inputs: usize,
    pub instrs: Vec<(Primitive, Vec<usize>)>,
}

impl Program {
    pub fn new(inputs: usize) -> Self {
        Self { inputs, instrs: Vec::new() }
    }

    /// Append an instruction and return its slot.
    pub fn push(&mut self, op: Primitive, args: &[usize]) -> usize {
        self.instrs.push((op, args.to_vec()));
        self.inputs + self.instrs.len() - 1
    }

    /// Single-primitive program over fresh inputs.
    pub fn single(op: Primitive) -> Self {
        let mut p = Self::new(op.arity());
        let args: Vec<usize> = (0..op.arity()).collect();
        p.push(op, &args);
        p
    }

    pub fn eval<S: Scalar, B: Backend<S>>(&self, b: &mut B, point: &[B::V]) -> Result<B::V> {
        let mut slots = self.check(point.len())?;
        slots.extend_from_slice(point);
        for (op, args) in &self.instrs {
            let xs: Vec<B::V> = args.iter().map(|&a| slots[a]).collect();
            let y = b.record(*op, &xs)?;
            slots.push(y);
        }
        Ok(*slots.last().unwrap())
    }

    fn check<T>(&self, n: usize) -> Result<Vec<T>> {
        if n != self.inputs {
            return Err(Error::Contract(format!("program takes {} inputs, got {n}", self.inputs)));
        }
        for (i, (_, args)) in self.instrs.iter().enumerate() {
            if args.iter().any(|&a| a >= self.inputs + i) {
                return Err(Error::Contract(format!("instruction {i} reads a later slot")));
            }
        }
        if self.inputs + self.instrs.len() == 0 {
            return Err(Error::Contract("empty program".into()));
        }
        Ok(Vec::with_capacity(self.inputs + self.instrs.len()))
    }
}

/// Taylor expansion of `f` at `point` along input `direction`.
pub fn jet_eval<S: Scalar, B: Backend<S>>(
    b: &mut B,
    f: &Program,
    point: &[B::V],
    direction: usize,
    order: usize,
) -> Result<Jet<B::V>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::Unsupported(format!("jet order must be in 1..={MAX_ORDER}, got {order}")));
    }
    if direction >= point.len() {
        return Err(Error::Contract(format!("direction {direction} out of range")));
    }
    let mut slots = f.check(point.len())?;
    for (i, &x) in point.iter().enumerate() {
        slots.push(if i == direction {
            Jet::variable(b, x, order)?
        } else {
            Jet::constant(b, x, order)?
        });
    }
    for (op, args) in &f.instrs {
        let xs: Vec<Jet<B::V>> = args.iter().map(|&a| slots[a]).collect();
        let y = Jet::apply(b, *op, &xs)?;
        slots.push(y);
    }
    Ok(*slots.last().unwrap())
}
