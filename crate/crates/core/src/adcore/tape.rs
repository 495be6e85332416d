use std::ops::{Deref, DerefMut};

use super::backend::{check_div, check_sqrt, dot_value, Backend};
use crate::error::Result;
use crate::scalar::Scalar;

const NONE: u32 = u32::MAX;

/// Index of a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u32);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A value seen by recorded code: either a constant that never reaches
/// the tape, or a recorded node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Var<S> {
    Const(S),
    Node(NodeId),
}

impl<S> Var<S> {
    pub fn node(self) -> Option<NodeId> {
        match self {
            Var::Node(id) => Some(id),
            Var::Const(_) => None,
        }
    }
}

/// Operation that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OpCode {
    Leaf,
    Param,
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    AddConst,
    Lin2,
    Tanh,
    Sin,
    Cos,
    Exp,
    Sqrt,
    Pow2,
    Dot,
    Lincomb,
    Implicit,
}

#[derive(Debug, Clone, Copy)]
struct Node<S> {
    op: OpCode,
    args: [u32; 2],
    partials: [S; 2],
}

#[derive(Debug, Clone, Copy)]
enum DotInputs {
    /// Consecutive nodes starting at this index.
    Range(u32),
    /// Constants stored in the constant pool.
    Consts(u32),
    /// Arbitrary mix stored in the mixed pool.
    Mixed(u32),
}

#[derive(Debug, Clone, Copy)]
struct DotRecord {
    weights: u32,
    len: u32,
    bias: u32,
    inputs: DotInputs,
}

#[derive(Debug, Clone, Copy)]
struct Multi {
    start: u32,
    len: u32,
}

/// Flat per-parameter gradient, laid out like the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradVector<S>(pub Vec<S>);

impl<S: Scalar> GradVector<S> {
    pub fn zeros(len: usize) -> Self {
        Self(vec![S::zero(); len])
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|g| g.is_finite())
    }

    /// `self += c · other`
    pub fn axpy(&mut self, c: S, other: &GradVector<S>) {
        for (a, &b) in self.0.iter_mut().zip(&other.0) {
            *a += c * b;
        }
    }

    pub fn scaled(&self, c: S) -> Self {
        Self(self.0.iter().map(|&g| g * c).collect())
    }

    pub fn norm(&self) -> S {
        self.0.iter().map(|&g| g * g).sum::<S>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &GradVector<S>) -> S {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b).abs())
            .fold(S::zero(), S::max)
    }
}

impl<S> Deref for GradVector<S> {
    type Target = [S];
    fn deref(&self) -> &[S] {
        &self.0
    }
}

impl<S> DerefMut for GradVector<S> {
    fn deref_mut(&mut self) -> &mut [S] {
        &mut self.0
    }
}

/// Result of a reverse sweep.
#[derive(Debug, Clone)]
pub struct Gradients<S> {
    adjoints: Vec<S>,
    pub params: GradVector<S>,
}

impl<S: Scalar> Gradients<S> {
    /// Adjoint of a recorded value; zero for constants.
    pub fn wrt(&self, v: Var<S>) -> S {
        match v {
            Var::Node(id) => self.adjoints[id.index()],
            Var::Const(_) => S::zero(),
        }
    }
}

/// Reverse-mode record of scalar operations.
///
/// Nodes are appended in evaluation order, so every parent index is
/// smaller than its child's. Dense-layer rows are recorded as a single
/// [`OpCode::Dot`] node that refers to the parameter vector by offset;
/// their parameter adjoints land in [`Gradients::params`].
#[derive(Debug, Clone)]
pub struct Tape<'a, S> {
    params: &'a [S],
    nodes: Vec<Node<S>>,
    values: Vec<S>,
    dots: Vec<DotRecord>,
    const_pool: Vec<S>,
    mixed_pool: Vec<Var<S>>,
    multis: Vec<Multi>,
    multi_parents: Vec<u32>,
    multi_partials: Vec<S>,
}

impl<'a, S: Scalar> Tape<'a, S> {
    pub fn new() -> Self {
        Self::with_params(&[])
    }

    pub fn with_params(params: &'a [S]) -> Self {
        Self {
            params,
            nodes: Vec::new(),
            values: Vec::new(),
            dots: Vec::new(),
            const_pool: Vec::new(),
            mixed_pool: Vec::new(),
            multis: Vec::new(),
            multi_parents: Vec::new(),
            multi_partials: Vec::new(),
        }
    }

    /// Number of recorded nodes; used as the memory-accounting proxy.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Register an independent variable.
    pub fn var(&mut self, value: S) -> Var<S> {
        self.push(OpCode::Leaf, [NONE, NONE], [S::zero(); 2], value)
    }

    pub fn op(&self, id: NodeId) -> OpCode {
        self.nodes[id.index()].op
    }

    /// Stored local partials of a single- or two-parent node.
    pub fn local_partials(&self, id: NodeId) -> Vec<(NodeId, S)> {
        let n = &self.nodes[id.index()];
        match n.op {
            OpCode::Lincomb | OpCode::Implicit => {
                let m = self.multis[n.args[0] as usize];
                let r = m.start as usize..(m.start + m.len) as usize;
                self.multi_parents[r.clone()]
                    .iter()
                    .zip(&self.multi_partials[r])
                    .map(|(&p, &d)| (NodeId(p), d))
                    .collect()
            }
            OpCode::Dot | OpCode::Param | OpCode::Leaf => Vec::new(),
            _ => n
                .args
                .iter()
                .zip(n.partials)
                .filter(|(&a, _)| a != NONE)
                .map(|(&a, d)| (NodeId(a), d))
                .collect(),
        }
    }

    #[inline]
    fn push(&mut self, op: OpCode, args: [u32; 2], partials: [S; 2], value: S) -> Var<S> {
        let id = u32::try_from(self.nodes.len()).expect("tape exceeds u32 nodes");
        self.nodes.push(Node { op, args, partials });
        self.values.push(value);
        Var::Node(NodeId(id))
    }

    #[inline]
    fn unary(&mut self, op: OpCode, a: NodeId, da: S, value: S) -> Var<S> {
        self.push(op, [a.0, NONE], [da, S::zero()], value)
    }

    fn multi(&mut self, op: OpCode, parents: &[(NodeId, S)], value: S) -> Var<S> {
        let start = self.multi_parents.len() as u32;
        for &(p, d) in parents {
            self.multi_parents.push(p.0);
            self.multi_partials.push(d);
        }
        let idx = self.multis.len() as u32;
        self.multis.push(Multi { start, len: parents.len() as u32 });
        self.push(op, [idx, NONE], [S::zero(); 2], value)
    }

    /// Reverse sweep from a scalar output with unit seed.
    pub fn backward(&self, output: Var<S>) -> Gradients<S> {
        self.backward_seeded(&[(output, S::one())])
    }

    /// Reverse sweep with arbitrary seeds, i.e. the gradient of
    /// `Σ seed_i · v_i`.
    pub fn backward_seeded(&self, seeds: &[(Var<S>, S)]) -> Gradients<S> {
        let n = self.nodes.len();
        let mut adj = vec![S::zero(); n];
        let mut pg = vec![S::zero(); self.params.len()];
        for &(v, s) in seeds {
            if let Var::Node(id) = v {
                adj[id.index()] += s;
            }
        }
        for i in (0..n).rev() {
            let a = adj[i];
            if a == S::zero() {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                OpCode::Leaf => {}
                OpCode::Param => pg[node.args[0] as usize] += a,
                OpCode::Dot => {
                    let rec = self.dots[node.args[0] as usize];
                    let w0 = rec.weights as usize;
                    let len = rec.len as usize;
                    let w = &self.params[w0..w0 + len];
                    let g = &mut pg[w0..w0 + len];
                    match rec.inputs {
                        DotInputs::Range(start) => {
                            let s = start as usize;
                            let xs = &self.values[s..s + len];
                            for j in 0..len {
                                g[j] += a * xs[j];
                            }
                            let ad = &mut adj[s..s + len];
                            for j in 0..len {
                                ad[j] += a * w[j];
                            }
                        }
                        DotInputs::Consts(start) => {
                            let s = start as usize;
                            let xs = &self.const_pool[s..s + len];
                            for j in 0..len {
                                g[j] += a * xs[j];
                            }
                        }
                        DotInputs::Mixed(start) => {
                            let s = start as usize;
                            for j in 0..len {
                                match self.mixed_pool[s + j] {
                                    Var::Const(c) => g[j] += a * c,
                                    Var::Node(id) => {
                                        g[j] += a * self.values[id.index()];
                                        adj[id.index()] += a * w[j];
                                    }
                                }
                            }
                        }
                    }
                    if rec.bias != NONE {
                        pg[rec.bias as usize] += a;
                    }
                }
                OpCode::Lincomb | OpCode::Implicit => {
                    let m = self.multis[node.args[0] as usize];
                    let r = m.start as usize..(m.start + m.len) as usize;
                    for (&p, &d) in self.multi_parents[r.clone()].iter().zip(&self.multi_partials[r]) {
                        adj[p as usize] += a * d;
                    }
                }
                _ => {
                    if node.args[0] != NONE {
                        adj[node.args[0] as usize] += a * node.partials[0];
                    }
                    if node.args[1] != NONE {
                        adj[node.args[1] as usize] += a * node.partials[1];
                    }
                }
            }
        }
        Gradients { adjoints: adj, params: GradVector(pg) }
    }
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Backend<S> for Tape<'_, S> {
    type V = Var<S>;

    #[inline]
    fn constant(&mut self, c: S) -> Var<S> {
        Var::Const(c)
    }

    #[inline]
    fn value(&self, v: Var<S>) -> S {
        match v {
            Var::Const(c) => c,
            Var::Node(id) => self.values[id.index()],
        }
    }

    fn params(&self) -> &[S] {
        self.params
    }

    fn known_zero(&self, v: Var<S>) -> bool {
        matches!(v, Var::Const(c) if c == S::zero())
    }

    fn param(&mut self, index: usize) -> Var<S> {
        let value = self.params[index];
        self.push(OpCode::Param, [index as u32, NONE], [S::zero(); 2], value)
    }

    fn add(&mut self, a: Var<S>, b: Var<S>) -> Var<S> {
        match (a, b) {
            (Var::Const(x), Var::Const(y)) => Var::Const(x + y),
            (Var::Node(_), Var::Const(c)) if c == S::zero() => a,
            (Var::Const(c), Var::Node(_)) if c == S::zero() => b,
            (Var::Node(x), Var::Const(c)) => {
                let v = self.values[x.index()] + c;
                self.unary(OpCode::AddConst, x, S::one(), v)
            }
            (Var::Const(c), Var::Node(y)) => {
                let v = c + self.values[y.index()];
                self.unary(OpCode::AddConst, y, S::one(), v)
            }
            (Var::Node(x), Var::Node(y)) => {
                let v = self.values[x.index()] + self.values[y.index()];
                self.push(OpCode::Add, [x.0, y.0], [S::one(), S::one()], v)
            }
        }
    }

    fn sub(&mut self, a: Var<S>, b: Var<S>) -> Var<S> {
        match (a, b) {
            (Var::Const(x), Var::Const(y)) => Var::Const(x - y),
            (Var::Node(x), Var::Const(c)) => {
                let v = self.values[x.index()] - c;
                self.unary(OpCode::AddConst, x, S::one(), v)
            }
            (Var::Const(c), Var::Node(y)) => {
                let v = c - self.values[y.index()];
                self.unary(OpCode::Sub, y, -S::one(), v)
            }
            (Var::Node(x), Var::Node(y)) => {
                let v = self.values[x.index()] - self.values[y.index()];
                self.push(OpCode::Sub, [x.0, y.0], [S::one(), -S::one()], v)
            }
        }
    }

    fn mul(&mut self, a: Var<S>, b: Var<S>) -> Var<S> {
        match (a, b) {
            (Var::Const(x), Var::Const(y)) => Var::Const(x * y),
            (Var::Node(_), Var::Const(c)) | (Var::Const(c), Var::Node(_)) if c == S::zero() => {
                Var::Const(S::zero())
            }
            (Var::Node(x), Var::Const(c)) => {
                let v = self.values[x.index()] * c;
                self.unary(OpCode::Scale, x, c, v)
            }
            (Var::Const(c), Var::Node(y)) => {
                let v = c * self.values[y.index()];
                self.unary(OpCode::Scale, y, c, v)
            }
            (Var::Node(x), Var::Node(y)) => {
                let (vx, vy) = (self.values[x.index()], self.values[y.index()]);
                self.push(OpCode::Mul, [x.0, y.0], [vy, vx], vx * vy)
            }
        }
    }

    fn div(&mut self, a: Var<S>, b: Var<S>) -> Result<Var<S>> {
        let (va, vb) = (self.value(a), self.value(b));
        check_div(vb)?;
        let v = va / vb;
        let da = S::one() / vb;
        let db = -va / (vb * vb);
        Ok(match (a, b) {
            (Var::Const(_), Var::Const(_)) => Var::Const(v),
            (Var::Node(x), Var::Const(_)) => self.unary(OpCode::Div, x, da, v),
            (Var::Const(_), Var::Node(y)) => self.unary(OpCode::Div, y, db, v),
            (Var::Node(x), Var::Node(y)) => self.push(OpCode::Div, [x.0, y.0], [da, db], v),
        })
    }

    fn neg(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(-c),
            Var::Node(x) => {
                let v = -self.values[x.index()];
                self.unary(OpCode::Neg, x, -S::one(), v)
            }
        }
    }

    fn scale(&mut self, a: Var<S>, c: S) -> Var<S> {
        match a {
            Var::Const(x) => Var::Const(x * c),
            Var::Node(_) if c == S::zero() => Var::Const(S::zero()),
            Var::Node(x) => {
                let v = self.values[x.index()] * c;
                self.unary(OpCode::Scale, x, c, v)
            }
        }
    }

    fn add_const(&mut self, a: Var<S>, c: S) -> Var<S> {
        match a {
            Var::Const(x) => Var::Const(x + c),
            Var::Node(x) => {
                let v = self.values[x.index()] + c;
                self.unary(OpCode::AddConst, x, S::one(), v)
            }
        }
    }

    fn lin2(&mut self, a: Var<S>, ca: S, b: Var<S>, cb: S) -> Var<S> {
        let v = ca * self.value(a) + cb * self.value(b);
        match (a, b) {
            (Var::Const(_), Var::Const(_)) => Var::Const(v),
            (Var::Node(x), Var::Const(_)) => self.unary(OpCode::Lin2, x, ca, v),
            (Var::Const(_), Var::Node(y)) => self.unary(OpCode::Lin2, y, cb, v),
            (Var::Node(x), Var::Node(y)) => self.push(OpCode::Lin2, [x.0, y.0], [ca, cb], v),
        }
    }

    fn tanh(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(c.tanh()),
            Var::Node(x) => {
                let y = self.values[x.index()].tanh();
                self.unary(OpCode::Tanh, x, S::one() - y * y, y)
            }
        }
    }

    fn sin(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(c.sin()),
            Var::Node(x) => {
                let v = self.values[x.index()];
                self.unary(OpCode::Sin, x, v.cos(), v.sin())
            }
        }
    }

    fn cos(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(c.cos()),
            Var::Node(x) => {
                let v = self.values[x.index()];
                self.unary(OpCode::Cos, x, -v.sin(), v.cos())
            }
        }
    }

    fn exp(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(c.exp()),
            Var::Node(x) => {
                let e = self.values[x.index()].exp();
                self.unary(OpCode::Exp, x, e, e)
            }
        }
    }

    fn sqrt(&mut self, a: Var<S>) -> Result<Var<S>> {
        let va = self.value(a);
        check_sqrt(va)?;
        let r = va.sqrt();
        Ok(match a {
            Var::Const(_) => Var::Const(r),
            Var::Node(x) => self.unary(OpCode::Sqrt, x, S::lit(0.5) / r, r),
        })
    }

    fn pow2(&mut self, a: Var<S>) -> Var<S> {
        match a {
            Var::Const(c) => Var::Const(c * c),
            Var::Node(x) => {
                let v = self.values[x.index()];
                self.unary(OpCode::Pow2, x, v + v, v * v)
            }
        }
    }

    fn dot(&mut self, weights: usize, inputs: &[Var<S>], bias: Option<usize>) -> Var<S> {
        let len = inputs.len();
        let w = &self.params[weights..weights + len];
        let b = bias.map(|i| self.params[i]);
        let all_const = inputs.iter().all(|v| matches!(v, Var::Const(_)));
        let value;
        let rec_inputs = if all_const {
            let xs: Vec<S> = inputs.iter().map(|v| self.value(*v)).collect();
            value = dot_value(w, xs.iter().copied(), b);
            let start = self.const_pool.len() as u32;
            self.const_pool.extend_from_slice(&xs);
            DotInputs::Consts(start)
        } else {
            let contiguous = match inputs.first() {
                Some(Var::Node(first)) => inputs
                    .iter()
                    .enumerate()
                    .all(|(j, v)| matches!(v, Var::Node(id) if id.0 == first.0 + j as u32)),
                _ => false,
            };
            if contiguous {
                let s = inputs[0].node().unwrap().index();
                value = dot_value(w, self.values[s..s + len].iter().copied(), b);
                DotInputs::Range(s as u32)
            } else {
                value = dot_value(w, inputs.iter().map(|v| self.value(*v)), b);
                let start = self.mixed_pool.len() as u32;
                self.mixed_pool.extend_from_slice(inputs);
                DotInputs::Mixed(start)
            }
        };
        let idx = self.dots.len() as u32;
        self.dots.push(DotRecord {
            weights: weights as u32,
            len: len as u32,
            bias: bias.map_or(NONE, |b| b as u32),
            inputs: rec_inputs,
        });
        self.push(OpCode::Dot, [idx, NONE], [S::zero(); 2], value)
    }

    fn lincomb(&mut self, xs: &[Var<S>], coeffs: &[S]) -> Var<S> {
        let mut acc = S::zero();
        let mut parents = Vec::with_capacity(xs.len());
        for (&x, &c) in xs.iter().zip(coeffs) {
            acc += c * self.value(x);
            if let Var::Node(id) = x {
                parents.push((id, c));
            }
        }
        if parents.is_empty() {
            return Var::Const(acc);
        }
        self.multi(OpCode::Lincomb, &parents, acc)
    }

    fn implicit(&mut self, value: S, parents: &[Var<S>], partials: &[S]) -> Var<S> {
        let ps: Vec<(NodeId, S)> = parents
            .iter()
            .zip(partials)
            .filter_map(|(v, &d)| v.node().map(|id| (id, d)))
            .collect();
        if ps.is_empty() {
            return Var::Const(value);
        }
        self.multi(OpCode::Implicit, &ps, value)
    }
}
