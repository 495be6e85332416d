//! Finite-difference reference solutions.
//!
//! Method of lines on a uniform node grid: second-order central
//! differences, a five-point stencil for `∂xxx`, ghost-node reflection for
//! Neumann walls, wrap-around for periodic problems, classical RK4 in
//! time. The solver reads only the physical constants of a problem and
//! implements its own stencils and quadrature, so it can serve as an
//! independent check on the network pipeline. Everything here is `f64`.

mod cache;

pub use cache::{cache_key, cache_path, load_or_solve, read_cache, write_cache};

use crate::error::{Error, Result};
use crate::pde::{InvariantTable, PDEProblem, ProblemKind};
use crate::sampler::{CloudSource, PointCloud};
use crate::scalar::Scalar;

/// Blow-up threshold.
pub const DIVERGENCE_LIMIT: f64 = 1e6;
/// Fraction of the RK4 stability radius that `dt` may use.
pub const CFL_SAFETY: f64 = 0.9;
/// Snapshots stored over `[0, T]`, not counting `t = 0`.
pub const DEFAULT_STAMPS: usize = 100;
// RK4 stability interval on the imaginary axis
const RK4_RADIUS: f64 = 2.8;
// max |symbol| · dx³ of the five-point third-derivative stencil
const D3_SYMBOL: f64 = 2.598;

/// Snapshots on a uniform grid with trapezoid invariant tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub problem: String,
    pub dim: usize,
    /// Nodes per dimension.
    pub nx: usize,
    pub dx: f64,
    pub lower: f64,
    pub periodic: bool,
    pub stamps: Vec<f64>,
    /// Row-major snapshots (last dimension fastest), one per stamp.
    pub snapshots: Vec<Vec<f64>>,
    pub c1: Vec<f64>,
    pub c2: Vec<f64>,
}

impl ReferenceSolution {
    pub fn node(&self, i: usize) -> f64 {
        self.lower + i as f64 * self.dx
    }

    /// Grid nodes as a cloud in the problem's scalar type.
    pub fn grid_points<S: Scalar>(&self) -> PointCloud<S> {
        let n = self.nx.pow(self.dim as u32);
        let mut coords = Vec::with_capacity(n * self.dim);
        for flat in 0..n {
            let mut rem = flat;
            let mut idx = vec![0; self.dim];
            for k in (0..self.dim).rev() {
                idx[k] = rem % self.nx;
                rem /= self.nx;
            }
            coords.extend(idx.iter().map(|&i| S::lit(self.node(i))));
        }
        PointCloud::new(self.dim, coords, CloudSource::Grid).expect("grid shape")
    }

    /// Index of the stamp closest to `t`.
    pub fn nearest_stamp(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.stamps.iter().enumerate() {
            if (s - t).abs() < (self.stamps[best] - t).abs() {
                best = i;
            }
        }
        best
    }
}

/// `c(t)` table of a solved reference.
pub fn invariant_table<S: Scalar>(reference: &ReferenceSolution) -> Result<InvariantTable<S>> {
    let conv = |v: &[f64]| v.iter().map(|&x| S::lit(x)).collect();
    InvariantTable::new(conv(&reference.stamps), conv(&reference.c1), conv(&reference.c2))
}

/// Physical constants the solver works from.
#[derive(Debug, Clone, Copy)]
enum Model {
    Advection { c: f64, dim: usize },
    ReactionDiffusion { d: f64, k: f64 },
    Wave { c: f64 },
    Kdv { a: f64, b: f64 },
}

fn model_of<S: Scalar>(problem: &PDEProblem<S>) -> Result<Model> {
    Ok(match problem.kind {
        ProblemKind::Advection { speed } => Model::Advection { c: speed.as_f64(), dim: 1 },
        ProblemKind::Advection2d { speed } => Model::Advection { c: speed.as_f64(), dim: 2 },
        ProblemKind::ReactionDiffusion { diffusion, rate } => {
            Model::ReactionDiffusion { d: diffusion.as_f64(), k: rate.as_f64() }
        }
        ProblemKind::Wave { speed } => Model::Wave { c: speed.as_f64() },
        ProblemKind::Kdv { a, b } => Model::Kdv { a: a.as_f64(), b: b.as_f64() },
        ProblemKind::SineGordon | ProblemKind::FokkerPlanck { .. } => {
            return Err(Error::Unsupported(format!("no reference solver for {}", problem.name)))
        }
    })
}

/// Whether [`solve_reference`] handles this problem.
pub fn supports<S: Scalar>(problem: &PDEProblem<S>) -> bool {
    model_of(problem).is_ok()
}

/// Default `(nx, dt)` per problem, chosen inside the stability limits.
pub fn default_resolution(name: &str) -> Option<(usize, f64)> {
    Some(match name {
        "advection1d" => (1024, 1e-3),
        "advection2d" => (128, 1e-3),
        "reaction_diffusion1d" => (512, 1e-4),
        "wave1d" => (512, 1e-3),
        "kdv1d" => (512, 2e-5),
        _ => return None,
    })
}

/// Largest stable `dt` for the problem on spacing `dx` with peak
/// amplitude `umax`.
fn dt_limit(model: Model, dx: f64, umax: f64) -> f64 {
    let rate = match model {
        Model::Advection { c, dim } => c.abs() * dim as f64 / dx,
        Model::ReactionDiffusion { d, k } => 4.0 * d / (dx * dx) + k.abs(),
        Model::Wave { c } => 2.0 * c.abs() / dx,
        Model::Kdv { a, b } => b.abs() * D3_SYMBOL / (dx * dx * dx) + a.abs() * umax / dx,
    };
    CFL_SAFETY * RK4_RADIUS / rate
}

struct Grid {
    n: usize,
    dx: f64,
    periodic: bool,
}

impl Grid {
    // index with reflection (Neumann ghost nodes) or wrap-around
    #[inline]
    fn at(&self, i: isize) -> usize {
        let n = self.n as isize;
        if self.periodic {
            i.rem_euclid(n) as usize
        } else if i < 0 {
            (-i) as usize
        } else if i >= n {
            (2 * (n - 1) - i) as usize
        } else {
            i as usize
        }
    }
}

/// Time derivative of the semi-discrete system.
fn rhs(model: Model, g: &Grid, u: &[f64], out: &mut [f64]) {
    let n = g.n;
    let dx = g.dx;
    match model {
        Model::Advection { c, dim: 1 } => {
            for i in 0..n {
                let ii = i as isize;
                out[i] = -c * (u[g.at(ii + 1)] - u[g.at(ii - 1)]) / (2.0 * dx);
            }
        }
        Model::Advection { c, .. } => {
            for i in 0..n {
                for j in 0..n {
                    let (ii, jj) = (i as isize, j as isize);
                    let ux = (u[g.at(ii + 1) * n + j] - u[g.at(ii - 1) * n + j]) / (2.0 * dx);
                    let uy = (u[i * n + g.at(jj + 1)] - u[i * n + g.at(jj - 1)]) / (2.0 * dx);
                    out[i * n + j] = -c * (ux + uy);
                }
            }
        }
        Model::ReactionDiffusion { d, k } => {
            for i in 0..n {
                let ii = i as isize;
                let lap = (u[g.at(ii + 1)] - 2.0 * u[i] + u[g.at(ii - 1)]) / (dx * dx);
                out[i] = d * lap + k * u[i];
            }
        }
        Model::Wave { c } => {
            let (pos, vel) = u.split_at(n);
            let (dpos, dvel) = out.split_at_mut(n);
            for i in 0..n {
                let ii = i as isize;
                dpos[i] = vel[i];
                dvel[i] = c * c * (pos[g.at(ii + 1)] - 2.0 * pos[i] + pos[g.at(ii - 1)]) / (dx * dx);
            }
        }
        Model::Kdv { a, b } => {
            for i in 0..n {
                let ii = i as isize;
                let (up, um) = (u[g.at(ii + 1)], u[g.at(ii - 1)]);
                let (upp, umm) = (u[g.at(ii + 2)], u[g.at(ii - 2)]);
                // skew-symmetric convection conserves Σu and Σu²
                let conv = (a / 3.0) * ((up * up - um * um) + u[i] * (up - um)) / (2.0 * dx);
                let disp = b * (upp - 2.0 * up + 2.0 * um - umm) / (2.0 * dx * dx * dx);
                out[i] = -conv - disp;
            }
        }
    }
}

fn trapezoid_weights(n: usize, dx: f64, periodic: bool) -> Vec<f64> {
    (0..n).map(|i| if !periodic && (i == 0 || i == n - 1) { 0.5 * dx } else { dx }).collect()
}

fn integrals(u: &[f64], w: &[f64], dim: usize) -> (f64, f64) {
    let n = w.len();
    let (mut c1, mut c2) = (0.0, 0.0);
    if dim == 1 {
        for i in 0..n {
            c1 += w[i] * u[i];
            c2 += w[i] * u[i] * u[i];
        }
    } else {
        for i in 0..n {
            for j in 0..n {
                let v = u[i * n + j];
                c1 += w[i] * w[j] * v;
                c2 += w[i] * w[j] * v * v;
            }
        }
    }
    (c1, c2)
}

/// Solve `problem` on `nx` nodes per dimension up to `t_end`, storing
/// [`DEFAULT_STAMPS`] snapshots after the initial one.
pub fn solve_reference<S: Scalar>(problem: &PDEProblem<S>, nx: usize, dt: f64, t_end: f64) -> Result<ReferenceSolution> {
    solve_reference_with(problem, nx, dt, t_end, DEFAULT_STAMPS)
}

pub fn solve_reference_with<S: Scalar>(
    problem: &PDEProblem<S>,
    nx: usize,
    dt: f64,
    t_end: f64,
    stamps: usize,
) -> Result<ReferenceSolution> {
    let model = model_of(problem)?;
    if nx < 8 {
        return Err(Error::Config(format!("reference grid needs at least 8 nodes, got {nx}")));
    }
    if !(dt > 0.0) || !(t_end > 0.0) || stamps == 0 {
        return Err(Error::Config("dt, T and the stamp count must be positive".into()));
    }
    if t_end > problem.domain.t_end().as_f64() * (1.0 + 1e-12) {
        return Err(Error::Config(format!("T = {t_end} exceeds the problem horizon")));
    }
    let dim = problem.dim();
    let lower = problem.domain.lower()[0].as_f64();
    let width = problem.domain.width(0).as_f64();
    let periodic = problem.boundary == crate::pde::BoundaryKind::Periodic;
    let dx = if periodic { width / nx as f64 } else { width / (nx - 1) as f64 };
    let grid = Grid { n: nx, dx, periodic };
    let cells = nx.pow(dim as u32);
    let mut u0 = vec![0.0; cells];
    let (kappa, center, amp) =
        (problem.initial.kappa.as_f64(), problem.initial.center.as_f64(), problem.initial.amplitude.as_f64());
    for (flat, v) in u0.iter_mut().enumerate() {
        let (mut rem, mut r2) = (flat, 0.0);
        for _ in 0..dim {
            let x = lower + (rem % nx) as f64 * dx;
            r2 += (x - center) * (x - center);
            rem /= nx;
        }
        *v = amp * (-kappa * r2).exp();
    }
    let umax = u0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let limit = dt_limit(model, dx, umax);
    if dt > limit {
        return Err(Error::Config(format!(
            "dt = {dt:e} violates the stability limit {limit:e} for {} at dx = {dx:e}",
            problem.name
        )));
    }
    let steps_total = (t_end / dt).round().max(1.0) as usize;
    let steps_total = steps_total.div_ceil(stamps) * stamps;
    let dt = t_end / steps_total as f64;
    let every = steps_total / stamps;

    let mut state = u0.clone();
    if let Model::Wave { .. } = model {
        state.extend(std::iter::repeat(0.0).take(cells));
    }
    let len = state.len();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let w = trapezoid_weights(nx, dx, periodic);
    let mut sol = ReferenceSolution {
        problem: problem.name.clone(),
        dim,
        nx,
        dx,
        lower,
        periodic,
        stamps: Vec::with_capacity(stamps + 1),
        snapshots: Vec::with_capacity(stamps + 1),
        c1: Vec::with_capacity(stamps + 1),
        c2: Vec::with_capacity(stamps + 1),
    };
    let record = |sol: &mut ReferenceSolution, t: f64, state: &[f64]| -> Result<()> {
        let u = &state[..cells];
        if u.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Divergence(format!("reference solution for {} blew up at t = {t}", sol.problem)));
        }
        let (c1, c2) = integrals(u, &w, dim);
        sol.stamps.push(t);
        sol.snapshots.push(u.to_vec());
        sol.c1.push(c1);
        sol.c2.push(c2);
        Ok(())
    };
    record(&mut sol, 0.0, &state)?;
    for step in 1..=steps_total {
        rhs(model, &grid, &state, &mut k1);
        for i in 0..len {
            tmp[i] = state[i] + 0.5 * dt * k1[i];
        }
        rhs(model, &grid, &tmp, &mut k2);
        for i in 0..len {
            tmp[i] = state[i] + 0.5 * dt * k2[i];
        }
        rhs(model, &grid, &tmp, &mut k3);
        for i in 0..len {
            tmp[i] = state[i] + dt * k3[i];
        }
        rhs(model, &grid, &tmp, &mut k4);
        for i in 0..len {
            state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if step % every == 0 {
            let t = if step == steps_total { t_end } else { step as f64 * dt };
            record(&mut sol, t, &state)?;
        }
    }
    Ok(sol)
}
