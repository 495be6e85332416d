//! Point generation over hyper-rectangles.
//!
//! Quasi-random clouds come from an unscrambled Sobol' sequence with
//! Joe–Kuo direction numbers (index 0, the origin, is never emitted).
//! Pseudo-random clouds and index subsets come from [`SeededRng`], a
//! ChaCha8 stream that is bit-identical for a given seed.

mod sobol;

pub use sobol::DirectionTable;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Spatial box `Π [lower_k, upper_k]` together with a time horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain<S> {
    lower: Vec<S>,
    upper: Vec<S>,
    t_end: S,
}

impl<S: Scalar> Domain<S> {
    pub fn new(lower: Vec<S>, upper: Vec<S>, t_end: S) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(Error::Config("domain bounds must be nonempty and of equal length".into()));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::Config("domain needs finite bounds with upper > lower".into()));
        }
        if !(t_end > S::zero()) {
            return Err(Error::Config("time horizon must be positive".into()));
        }
        Ok(Self { lower, upper, t_end })
    }

    /// `[a, b]^d`.
    pub fn cube(a: S, b: S, d: usize, t_end: S) -> Result<Self> {
        Self::new(vec![a; d], vec![b; d], t_end)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[S] {
        &self.lower
    }

    pub fn upper(&self) -> &[S] {
        &self.upper
    }

    pub fn t_end(&self) -> S {
        self.t_end
    }

    pub fn width(&self, k: usize) -> S {
        self.upper[k] - self.lower[k]
    }

    /// `|X|`
    pub fn volume(&self) -> S {
        (0..self.dim()).map(|k| self.width(k)).fold(S::one(), |a, w| a * w)
    }

    pub fn contains(&self, x: &[S]) -> bool {
        x.len() == self.dim() && x.iter().enumerate().all(|(k, &v)| v >= self.lower[k] && v <= self.upper[k])
    }
}

/// Deterministic random stream.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// An independent stream keyed by `(seed, tag)`; does not advance `self`.
    pub fn substream(&self, tag: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(self.seed);
        inner.set_stream(tag.wrapping_add(1));
        let seed = inner.next_u64();
        Self::new(seed)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// How a cloud was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudSource {
    Sobol { skip: u64 },
    Uniform { seed: u64 },
    Grid,
}

/// Points stored row-major, `dim` coordinates each.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud<S> {
    dim: usize,
    coords: Vec<S>,
    pub source: CloudSource,
}

impl<S: Scalar> PointCloud<S> {
    pub fn new(dim: usize, coords: Vec<S>, source: CloudSource) -> Result<Self> {
        if dim == 0 && !coords.is_empty() || dim > 0 && coords.len() % dim != 0 {
            return Err(Error::Contract("coordinate count is not a multiple of the dimension".into()));
        }
        Ok(Self { dim, coords, source })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.coords.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, i: usize) -> &[S] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn coords(&self) -> &[S] {
        &self.coords
    }

    pub fn iter(&self) -> impl Iterator<Item = &[S]> {
        self.coords.chunks_exact(self.dim.max(1))
    }

    /// Sub-cloud of consecutive points.
    pub fn slice(&self, start: usize, len: usize) -> Self {
        Self {
            dim: self.dim,
            coords: self.coords[start * self.dim..(start + len) * self.dim].to_vec(),
            source: self.source,
        }
    }
}

fn to_unit<S: Scalar>(x: f64) -> S {
    let v = S::lit(x);
    if v >= S::one() {
        S::one() - S::epsilon()
    } else {
        v
    }
}

/// `m` Sobol' points in `[0,1)^d` with indices `skip+1 ..= skip+m`.
pub fn sobol_points<S: Scalar>(m: usize, d: usize, skip: u64) -> Result<PointCloud<S>> {
    let raw = DirectionTable::embedded().generate(m, d, skip + 1)?;
    let scale = 1.0 / 4294967296.0;
    let coords = raw.into_iter().map(|x| to_unit(x as f64 * scale)).collect();
    PointCloud::new(d, coords, CloudSource::Sobol { skip })
}

/// i.i.d. uniform points in `[0,1)^d`.
pub fn uniform_points<S: Scalar>(m: usize, d: usize, rng: &mut SeededRng) -> PointCloud<S> {
    let coords = (0..m * d).map(|_| to_unit(rng.unit())).collect();
    PointCloud { dim: d, coords, source: CloudSource::Uniform { seed: rng.seed() } }
}

/// Sobol' points when the table covers `d`, otherwise uniform points with
/// a warning.
pub fn quasi_points<S: Scalar>(m: usize, d: usize, skip: u64, rng: &mut SeededRng) -> Result<PointCloud<S>> {
    if d <= DirectionTable::embedded().max_dim() {
        sobol_points(m, d, skip)
    } else {
        log::warn!(
            "dimension {d} exceeds the Sobol table ({}); using uniform points",
            DirectionTable::embedded().max_dim()
        );
        Ok(uniform_points(m, d, rng))
    }
}

/// Rescale unit-cube points into the domain box.
pub fn map_to_domain<S: Scalar>(cloud: &PointCloud<S>, domain: &Domain<S>) -> Result<PointCloud<S>> {
    let d = cloud.dim();
    if d != domain.dim() {
        return Err(Error::Contract(format!("cloud dimension {d} vs domain dimension {}", domain.dim())));
    }
    let mut coords = cloud.coords.clone();
    for row in coords.chunks_exact_mut(d.max(1)) {
        for (k, x) in row.iter_mut().enumerate() {
            *x = domain.lower[k] + domain.width(k) * *x;
        }
    }
    Ok(PointCloud { dim: d, coords, source: cloud.source })
}

/// Two independent without-replacement draws from `0..n_total`.
///
/// `I` and `J` use separate sub-streams of `rng`, which is then advanced
/// so successive calls give fresh pairs.
pub fn sample_subsets(
    n_total: usize,
    size_i: usize,
    size_j: usize,
    rng: &mut SeededRng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if size_i > n_total || size_j > n_total {
        return Err(Error::Config(format!(
            "subset sizes ({size_i}, {size_j}) exceed the term count {n_total}"
        )));
    }
    let key = rng.next_u64();
    let mut ri = SeededRng::new(key).substream(1);
    let mut rj = SeededRng::new(key).substream(2);
    Ok((draw(n_total, size_i, &mut ri), draw(n_total, size_j, &mut rj)))
}

/// Sorted uniform subset of `0..n` with `k` elements.
pub fn draw(n: usize, k: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut v = index::sample(rng, n, k).into_vec();
    v.sort_unstable();
    v
}
