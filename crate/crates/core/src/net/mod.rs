//! Fully connected tanh network `u_raw(x, t; θ)`.
//!
//! The same parameters can be evaluated three ways: as a plain scalar
//! ([`forward`]), recorded on any [`Backend`] ([`trace`]), or as a Taylor
//! jet along one input coordinate ([`jet_from_trace`], [`forward_jet`]).
//! Jets reuse the order-0 pass of a [`Trace`], so the constant
//! coefficient is bitwise identical to [`forward`].
//!
//! Large detached evaluations go through [`forward_batch`], which uses
//! blocked matrix products instead of per-point scalar code.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint};

use ndarray::{s, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::adcore::{Backend, Eval, Jet, MAX_ORDER};
use crate::error::{Error, Result};
use crate::sampler::{PointCloud, SeededRng};
use crate::scalar::Scalar;

/// Network shape and initialization seed.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkConfig {
    /// Spatial dimension plus one for time.
    pub input_dim: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub seed: u64,
    /// When set, input `k` is mapped from `[lo, hi]` to `[-1, 1]`.
    pub input_bounds: Option<Vec<(f64, f64)>>,
}

impl NetworkConfig {
    /// Four hidden layers of width 128.
    pub fn new(input_dim: usize, seed: u64) -> Self {
        Self { input_dim, hidden_layers: 4, width: 128, seed, input_bounds: None }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_hidden_layers(mut self, layers: usize) -> Self {
        self.hidden_layers = layers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.width == 0 || self.hidden_layers == 0 {
            return Err(Error::Config("network needs input_dim, width and layers ≥ 1".into()));
        }
        if let Some(b) = &self.input_bounds {
            if b.len() != self.input_dim || b.iter().any(|(lo, hi)| !(hi > lo)) {
                return Err(Error::Config("input bounds must give hi > lo for every input".into()));
            }
        }
        Ok(())
    }

    /// Hash of the architecture (not the seed), stored in checkpoints.
    pub fn shape_hash(&self) -> u64 {
        let mut h = Sha256::new();
        h.update(format!("mlp:{}:{}:{}", self.input_dim, self.hidden_layers, self.width));
        if let Some(b) = &self.input_bounds {
            for (lo, hi) in b {
                h.update(lo.to_le_bytes());
                h.update(hi.to_le_bytes());
            }
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().unwrap())
    }
}

/// Position of one dense layer in the flat parameter vector: a row-major
/// `rows × cols` weight block followed by `rows` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerShape {
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl LayerShape {
    pub fn weight(&self, r: usize, c: usize) -> usize {
        self.offset + r * self.cols + c
    }

    pub fn bias(&self, r: usize) -> usize {
        self.offset + self.rows * self.cols + r
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter vector with its layer table. The last layer is the
/// linear output head.
#[derive(Debug, Clone, PartialEq)]
pub struct MLPParams<S> {
    pub data: Vec<S>,
    layers: Vec<LayerShape>,
    input_scale: Vec<S>,
    input_shift: Vec<S>,
    shape_hash: u64,
}

impl<S: Scalar> MLPParams<S> {
    /// Zero parameters with the shape of `config`.
    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let mut layers = Vec::with_capacity(config.hidden_layers + 1);
        let mut offset = 0;
        let mut cols = config.input_dim;
        for l in 0..=config.hidden_layers {
            let rows = if l == config.hidden_layers { 1 } else { config.width };
            let shape = LayerShape { rows, cols, offset };
            offset += shape.len();
            layers.push(shape);
            cols = rows;
        }
        let (input_scale, input_shift) = match &config.input_bounds {
            None => (vec![S::one(); config.input_dim], vec![S::zero(); config.input_dim]),
            Some(b) => b
                .iter()
                .map(|&(lo, hi)| (S::lit(2.0 / (hi - lo)), S::lit(-(hi + lo) / (hi - lo))))
                .unzip(),
        };
        Ok(Self { data: vec![S::zero(); offset], layers, input_scale, input_shift, shape_hash: config.shape_hash() })
    }

    pub fn layers(&self) -> &[LayerShape] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn shape_hash(&self) -> u64 {
        self.shape_hash
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Derivative of the network input `k` with respect to coordinate `k`.
    pub fn input_scale(&self, k: usize) -> S {
        self.input_scale[k]
    }

    fn scaled_input(&self, x: &[S], t: S) -> Vec<S> {
        x.iter()
            .chain(std::iter::once(&t))
            .enumerate()
            .map(|(k, &v)| self.input_scale[k] * v + self.input_shift[k])
            .collect()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn init_params<S: Scalar>(config: &NetworkConfig) -> Result<MLPParams<S>> {
    let mut p = MLPParams::zeros(config)?;
    let mut rng = SeededRng::new(config.seed);
    for l in p.layers.clone() {
        let limit = (6.0 / (l.rows + l.cols) as f64).sqrt();
        for v in &mut p.data[l.offset..l.offset + l.rows * l.cols] {
            *v = S::lit((2.0 * rng.unit() - 1.0) * limit);
        }
    }
    Ok(p)
}

fn check_input<S: Scalar>(params: &MLPParams<S>, x: &[S], t: S) -> Result<()> {
    if x.len() + 1 != params.input_dim() {
        return Err(Error::Input(format!(
            "network expects {} spatial coordinates, got {}",
            params.input_dim() - 1,
            x.len()
        )));
    }
    if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite network input".into()));
    }
    Ok(())
}

/// Order-0 pass kept for later jet propagation.
#[derive(Debug, Clone)]
pub struct Trace<V> {
    /// Post-activation values per hidden layer.
    pub hidden: Vec<Vec<V>>,
    /// `1 − h²` per hidden layer, filled on first use.
    slopes: Vec<Option<Vec<V>>>,
    pub output: V,
}

/// Record the network at `(x, t)` on `b`.
pub fn trace<S: Scalar, B: Backend<S>>(b: &mut B, params: &MLPParams<S>, x: &[S], t: S) -> Result<Trace<B::V>> {
    check_input(params, x, t)?;
    if b.params().len() != params.len() {
        return Err(Error::Contract("backend parameters do not match the network".into()));
    }
    let input: Vec<B::V> = params.scaled_input(x, t).into_iter().map(|v| b.constant(v)).collect();
    let n_hidden = params.layers.len() - 1;
    let mut hidden = Vec::with_capacity(n_hidden);
    let mut prev = input;
    for l in &params.layers[..n_hidden] {
        let z: Vec<B::V> = (0..l.rows).map(|r| b.dot(l.weight(r, 0), &prev, Some(l.bias(r)))).collect();
        let h: Vec<B::V> = z.into_iter().map(|zi| b.tanh(zi)).collect();
        hidden.push(h.clone());
        prev = h;
    }
    let head = params.layers[n_hidden];
    let output = b.dot(head.weight(0, 0), &prev, Some(head.bias(0)));
    Ok(Trace { hidden, slopes: vec![None; n_hidden], output })
}

/// Plain evaluation of `u_raw(x, t)`.
pub fn forward<S: Scalar>(params: &MLPParams<S>, x: &[S], t: S) -> Result<S> {
    let mut e = Eval::new(&params.data);
    Ok(trace(&mut e, params, x, t)?.output)
}

fn slopes<S: Scalar, B: Backend<S>>(b: &mut B, tr: &mut Trace<B::V>, l: usize) -> Vec<B::V> {
    if tr.slopes[l].is_none() {
        let p: Vec<B::V> = tr.hidden[l]
            .iter()
            .map(|&h| {
                let y = b.value(h);
                b.implicit(S::one() - y * y, &[h], &[-(y + y)])
            })
            .collect();
        tr.slopes[l] = Some(p);
    }
    tr.slopes[l].clone().unwrap()
}

fn weighted<S: Scalar, B: Backend<S>>(b: &mut B, pairs: &[(B::V, B::V)]) -> B::V {
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

/// Jet of the network output along input `coord` (spatial `0..d`, time
/// `d`), built on top of an existing order-0 trace.
pub fn jet_from_trace<S: Scalar, B: Backend<S>>(
    b: &mut B,
    params: &MLPParams<S>,
    tr: &mut Trace<B::V>,
    coord: usize,
    order: usize,
) -> Result<Jet<B::V>> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::Unsupported(format!("jet order must be in 1..={MAX_ORDER}, got {order}")));
    }
    if coord >= params.input_dim() {
        return Err(Error::Contract(format!("input coordinate {coord} out of range")));
    }
    let zero = b.zero();
    let n_hidden = params.layers.len() - 1;
    // z[k][r]: coefficient k of the pre-activation of unit r
    let first = params.layers[0];
    let scale = params.input_scale(coord);
    let mut z: Vec<Vec<B::V>> = vec![vec![zero; first.rows]; order + 1];
    for r in 0..first.rows {
        let w = b.param(first.weight(r, coord));
        z[1][r] = if scale == S::one() { w } else { b.scale(w, scale) };
    }
    let mut h: Vec<Vec<B::V>> = Vec::new();
    let mut pairs = Vec::with_capacity(MAX_ORDER + 1);
    for l in 0..n_hidden {
        let rows = params.layers[l].rows;
        if l > 0 {
            let shape = params.layers[l];
            for k in 1..=order {
                z[k] = (0..rows).map(|r| b.dot(shape.weight(r, 0), &h[k], None)).collect();
            }
        }
        let p0 = slopes(b, tr, l);
        let mut y = vec![tr.hidden[l].clone()];
        let mut p = vec![p0];
        for k in 1..=order {
            let inv_k = S::one() / S::from_count(k);
            let sums: Vec<B::V> = (0..rows)
                .map(|r| {
                    pairs.clear();
                    for j in 1..=k {
                        let zj = z[j][r];
                        let wj = if j == 1 || b.known_zero(zj) { zj } else { b.scale(zj, S::from_count(j)) };
                        pairs.push((wj, p[k - j][r]));
                    }
                    weighted(b, &pairs)
                })
                .collect();
            // final op per unit in one pass keeps the layer contiguous
            let yk: Vec<B::V> =
                if k == 1 { sums } else { sums.into_iter().map(|s| b.scale(s, inv_k)).collect() };
            y.push(yk);
            if k < order {
                let pk = (0..rows)
                    .map(|r| {
                        pairs.clear();
                        pairs.extend((0..=k).map(|i| (y[i][r], y[k - i][r])));
                        let q = weighted(b, &pairs);
                        b.neg(q)
                    })
                    .collect();
                p.push(pk);
            }
        }
        h = y;
    }
    let head = params.layers[n_hidden];
    let mut coeffs = [zero; MAX_ORDER + 1];
    coeffs[0] = tr.output;
    for k in 1..=order {
        coeffs[k] = b.dot(head.weight(0, 0), &h[k], None);
    }
    Ok(Jet { coeffs, order })
}

/// Jet of `u_raw` at `(x, t)` along input `coord`.
pub fn forward_jet<S: Scalar, B: Backend<S>>(
    b: &mut B,
    params: &MLPParams<S>,
    x: &[S],
    t: S,
    coord: usize,
    order: usize,
) -> Result<Jet<B::V>> {
    if order > MAX_ORDER {
        return Err(Error::Unsupported(format!("jet order {order} exceeds {MAX_ORDER}")));
    }
    let mut tr = trace(b, params, x, t)?;
    jet_from_trace(b, params, &mut tr, coord, order)
}

const CHUNK: usize = 1024;

// tanh through a single exp; a few ulp in absolute terms and several
// times cheaper than the library tanh
#[inline]
fn batch_tanh<S: Scalar>(x: S) -> S {
    let two = S::lit(2.0);
    S::one() - two / ((two * x).exp() + S::one())
}

/// `u_raw` at every cloud point for a fixed `t`, off any tape.
pub fn forward_batch<S: Scalar>(params: &MLPParams<S>, cloud: &PointCloud<S>, t: S) -> Result<Vec<S>> {
    let d = params.input_dim() - 1;
    if cloud.dim() != d {
        return Err(Error::Input(format!("cloud dimension {} vs network {d}", cloud.dim())));
    }
    if !t.is_finite() || cloud.coords().iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite network input".into()));
    }
    let mut out = Vec::with_capacity(cloud.len());
    let mut start = 0;
    while start < cloud.len() {
        let n = CHUNK.min(cloud.len() - start);
        let mut x = Array2::<S>::zeros((n, d + 1));
        for i in 0..n {
            let p = cloud.point(start + i);
            for k in 0..d {
                x[[i, k]] = params.input_scale[k] * p[k] + params.input_shift[k];
            }
            x[[i, d]] = params.input_scale[d] * t + params.input_shift[d];
        }
        let last = params.layers.len() - 1;
        for (l, shape) in params.layers.iter().enumerate() {
            let w = ArrayView2::from_shape(
                (shape.rows, shape.cols),
                &params.data[shape.offset..shape.offset + shape.rows * shape.cols],
            )
            .expect("layer shape");
            let bias = &params.data[shape.bias(0)..shape.bias(0) + shape.rows];
            let mut z = x.dot(&w.t());
            for mut row in z.axis_iter_mut(Axis(0)) {
                for (v, &bb) in row.iter_mut().zip(bias) {
                    *v = if l == last { *v + bb } else { batch_tanh(*v + bb) };
                }
            }
            x = z;
        }
        out.extend(x.slice(s![.., 0]).iter().copied());
        start += n;
    }
    Ok(out)
}
