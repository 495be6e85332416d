use cpl_core::baselines::*;
use cpl_core::sampler::{uniform_points, Domain, SeededRng};
use cpl_core::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Solve the KKT system of `min ‖y − u‖²` s.t. `ΔV 1ᵀy = c1`.
fn linear_kkt(u: &[f64], dv: f64, c1: f64) -> Vec<f64> {
    let n = u.len();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    let mut rhs = DVector::zeros(n + 1);
    for i in 0..n {
        a[(i, i)] = 1.0;
        a[(i, n)] = dv;
        a[(n, i)] = dv;
        rhs[i] = u[i];
    }
    rhs[n] = c1;
    let z = a.lu().solve(&rhs).unwrap();
    z.rows(0, n).iter().copied().collect()
}

/// Newton on the Lagrange system of `min ‖y − u‖²` subject to both sums,
/// started from several points; keeps the closest converged root.
fn combined_kkt(u: &[f64], dv: f64, c1: f64, c2: f64) -> Vec<f64> {
    let n = u.len();
    let run = |y0: Vec<f64>| -> Option<Vec<f64>> {
        let mut z = DVector::from_iterator(n + 2, y0.into_iter().chain([0.0, 0.0]));
        for _ in 0..100 {
            let (l1, l2) = (z[n], z[n + 1]);
            let y = z.rows(0, n).into_owned();
            let mut r = DVector::zeros(n + 2);
            let mut j = DMatrix::zeros(n + 2, n + 2);
            for i in 0..n {
                r[i] = y[i] - u[i] + l1 * dv + 2.0 * l2 * dv * y[i];
                j[(i, i)] = 1.0 + 2.0 * l2 * dv;
                j[(i, n)] = dv;
                j[(i, n + 1)] = 2.0 * dv * y[i];
                j[(n, i)] = dv;
                j[(n + 1, i)] = 2.0 * dv * y[i];
            }
            r[n] = dv * y.sum() - c1;
            r[n + 1] = dv * y.dot(&y) - c2;
            if r.amax() < 1e-14 {
                return Some(y.iter().copied().collect());
            }
            z -= j.lu().solve(&r)?;
        }
        None
    };
    let starts = [u.to_vec(), u.iter().map(|v| 2.0 * v - 0.3).collect(), u.iter().map(|v| -v).collect()];
    starts
        .into_iter()
        .filter_map(run)
        .min_by(|a, b| {
            let da: f64 = a.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum();
            let db: f64 = b.iter().zip(u).map(|(x, y)| (x - y).powi(2)).sum();
            da.total_cmp(&db)
        })
        .expect("oracle did not converge")
}

#[test]
fn linear_examples() {
    assert_eq!(proj_linear(&[0.0, 0.0], 1.0, 2.0).unwrap(), vec![1.0, 1.0]);
    let u = [0.3, 1.1, -0.4];
    let y = proj_linear(&u, 0.5, 0.5).unwrap();
    assert!(max_diff(&y, &u) < 1e-15);
}

#[test]
fn linear_matches_kkt_solve() {
    let mut rng = SeededRng::new(7);
    for _ in 0..20 {
        let u: Vec<f64> = (0..7).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (dv, c1) = (rng.gen_range(0.05..1.0), rng.gen_range(-3.0..3.0));
        let d = max_diff(&proj_linear(&u, dv, c1).unwrap(), &linear_kkt(&u, dv, c1));
        assert!(d <= 1e-10, "{d}");
    }
}

#[test]
fn quadratic_examples() {
    let y = proj_quadratic(&[3.0, 4.0], 1.0, 1.0).unwrap();
    assert!(max_diff(&y, &[0.6, 0.8]) < 1e-15);
    assert!((y.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
    let sphere = [0.6, 0.8];
    assert!(max_diff(&proj_quadratic(&sphere, 1.0, 1.0).unwrap(), &sphere) < 1e-15);
    assert!(matches!(proj_quadratic(&[0.0, 0.0], 1.0, 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn combined_examples() {
    let y = proj_combined(&[0.0, 2.0], 1.0, 2.0, 4.0).unwrap();
    assert!(max_diff(&y, &[0.0, 2.0]) < 1e-15);
    assert!(matches!(proj_combined(&[0.0, 1.0], 1.0, 2.0, 1.0), Err(Error::Infeasible(_))));
    assert!(matches!(proj_combined(&[1.0, 1.0], 1.0, 0.0, 1.0), Err(Error::Degenerate(_))));
}

#[test]
fn combined_matches_constrained_oracle() {
    let mut rng = SeededRng::new(606);
    for case in 0..30 {
        let n = rng.gen_range(3..=10);
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let dv = 2.0 / n as f64;
        let c1 = rng.gen_range(-1.0..1.0);
        let c2 = c1 * c1 / 2.0 + rng.gen_range(0.2..2.0);
        let y = proj_combined(&u, dv, c1, c2).unwrap();
        let o = combined_kkt(&u, dv, c1, c2);
        assert!(max_diff(&y, &o) <= 1e-9, "case {case}: {}", max_diff(&y, &o));
        assert!((dv * y.iter().sum::<f64>() - c1).abs() <= 1e-12 * (1.0 + c1.abs()));
        assert!((dv * y.iter().map(|v| v * v).sum::<f64>() - c2).abs() <= 1e-12 * (1.0 + c2));
    }
}

fn field(x: f64) -> f64 {
    (3.0 * x).sin() + 0.5 * x * x
}

#[test]
fn misuse_constraints_hold_on_own_cloud_only() {
    let dom = Domain::new(vec![0.0], vec![2.0], 1.0).unwrap();
    let (vol, n, c1, c2) = (dom.volume(), 100, 1.0, 2.0);
    let mut rng = SeededRng::new(11);
    let trials = 2000;
    let (mut abs_dev, mut var_acc) = (0.0, 0.0);
    for _ in 0..trials {
        let a: Vec<f64> = uniform_points::<f64>(n, 1, &mut rng).iter().map(|p| field(2.0 * p[0])).collect();
        let y = mc_misuse_projection(&a, vol, c1, c2).unwrap();
        let dv = vol / n as f64;
        assert!((dv * y.iter().sum::<f64>() - c1).abs() <= 1e-12);
        assert!((dv * y.iter().map(|v| v * v).sum::<f64>() - c2).abs() <= 1e-12 * 3.0);
        let (s, beta) = combined_affine(&a, dv, c1, c2).unwrap();
        let b: Vec<f64> = uniform_points::<f64>(n, 1, &mut rng).iter().map(|p| s * field(2.0 * p[0]) + beta).collect();
        abs_dev += (vol * b.iter().sum::<f64>() / n as f64 - c1).abs();
        let mb = b.iter().sum::<f64>() / n as f64;
        var_acc += b.iter().map(|v| (v - mb).powi(2)).sum::<f64>() / (n - 1) as f64;
    }
    let mean_dev = abs_dev / trials as f64;
    let sigma_u = (var_acc / trials as f64).sqrt();
    let scale = sigma_u * vol / (n as f64).sqrt();
    let ratio = mean_dev / scale;
    assert!((0.5..=1.5).contains(&ratio), "{ratio}");
}

#[test]
fn misuse_deviation_decays_at_the_monte_carlo_rate() {
    let vol = 2.0;
    let mut rng = SeededRng::new(12);
    let sizes = [100usize, 1_000, 10_000, 100_000, 1_000_000];
    let mut pts = Vec::new();
    for &n in &sizes {
        let trials = 30;
        let mut dev = 0.0;
        for _ in 0..trials {
            let a: Vec<f64> = uniform_points::<f64>(n, 1, &mut rng).iter().map(|p| field(2.0 * p[0])).collect();
            let (s, beta) = combined_affine(&a, vol / n as f64, 1.0, 2.0).unwrap();
            let b = uniform_points::<f64>(n, 1, &mut rng);
            let mean_b = b.iter().map(|p| s * field(2.0 * p[0]) + beta).sum::<f64>() / n as f64;
            dev += (vol * mean_b - 1.0).abs();
        }
        pts.push(((n as f64).ln(), (dev / trials as f64).ln()));
    }
    let k = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / k, pts.iter().map(|p| p.1).sum::<f64>() / k);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    assert!((slope + 0.5).abs() <= 0.1, "{slope}");
}

#[test]
fn soft_loss_examples() {
    let c = [1.0, 2.0, 3.0, 4.0, 5.0];
    assert_eq!(soft_constraint_loss(&c, &c, 3.0).unwrap(), 0.0);
    assert_eq!(soft_constraint_loss(&[9.0; 5], &c, 0.0).unwrap(), 0.0);
    let p: Vec<f64> = c.iter().map(|v| v + 2.0).collect();
    assert_eq!(soft_constraint_loss(&p, &c, 0.5).unwrap(), 2.0);
    assert!(soft_constraint_loss(&p[..2], &c, 0.5).is_err());
}

#[test]
fn grid_spec_and_preflight() {
    let dom = Domain::new(vec![0.0, 0.0], vec![2.0, 1.0], 1.0).unwrap();
    let g = GridSpec::<f64>::cell_centered(&dom, &[4, 5]).unwrap();
    assert_eq!(g.n(), 20);
    assert!((g.cell_volume() - 0.1).abs() < 1e-15);
    let pts = g.points(&dom).unwrap();
    assert_eq!(pts.point(0), &[0.25, 0.1]);
    assert!(pts.iter().all(|p| dom.contains(p)));
    assert_eq!(preflight(MAX_GRID_POINTS, 10, 64).unwrap(), (MAX_GRID_POINTS * 640) as u64);
    assert!(matches!(preflight(MAX_GRID_POINTS + 1, 10, 64), Err(Error::Refused(_))));
}

proptest! {
    #[test]
    fn projections_are_idempotent(u in prop::collection::vec(-3.0..3.0f64, 2..12), c1 in -1.0..1.0f64, extra in 0.1..3.0f64) {
        let dv = 1.0 / u.len() as f64;
        let c2 = c1 * c1 + extra;
        let l = proj_linear(&u, dv, c1).unwrap();
        prop_assert!(max_diff(&proj_linear(&l, dv, c1).unwrap(), &l) <= 1e-12);
        let q = proj_quadratic(&u, dv, c2).unwrap();
        prop_assert!(max_diff(&proj_quadratic(&q, dv, c2).unwrap(), &q) <= 1e-12);
        let m = u.iter().sum::<f64>() / u.len() as f64;
        prop_assume!(u.iter().map(|v| (v - m).powi(2)).sum::<f64>() > 1e-6);
        let c = proj_combined(&u, dv, c1, c2).unwrap();
        prop_assert!(max_diff(&proj_combined(&c, dv, c1, c2).unwrap(), &c) <= 1e-12);
    }

    #[test]
    fn linear_is_translation_equivariant(u in prop::collection::vec(-3.0..3.0f64, 1..12), shift in -5.0..5.0f64, c1 in -2.0..2.0f64) {
        let moved: Vec<f64> = u.iter().map(|v| v + shift).collect();
        prop_assert!(max_diff(&proj_linear(&moved, 0.1, c1).unwrap(), &proj_linear(&u, 0.1, c1).unwrap()) <= 1e-12);
    }

    #[test]
    fn quadratic_is_scale_invariant(u in prop::collection::vec(0.1..3.0f64, 1..12), lambda in 0.01..100.0f64) {
        let scaled: Vec<f64> = u.iter().map(|v| v * lambda).collect();
        prop_assert!(max_diff(&proj_quadratic(&scaled, 0.2, 1.5).unwrap(), &proj_quadratic(&u, 0.2, 1.5).unwrap()) <= 1e-12);
    }
}
