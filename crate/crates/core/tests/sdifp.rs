use cpl_core::adcore::{Backend, Eval, GradVector, Jet, Tape};
use cpl_core::net::{forward, forward_batch, forward_jet, init_params, trace, MLPParams, NetworkConfig};
use cpl_core::sampler::{draw, sobol_points, uniform_points, PointCloud, SeededRng};
use cpl_core::sdifp::*;
use proptest::prelude::*;

fn net(seed: u64, width: usize) -> MLPParams<f64> {
    init_params(&NetworkConfig::new(2, seed).with_width(width).with_hidden_layers(2)).unwrap()
}

fn moments(mu1: f64, mu2: f64) -> MomentEstimate<f64> {
    MomentEstimate { mu1, mu2, sigma2: mu2 - mu1 * mu1, m: 100, t: 0.0 }
}

fn constant_net(c: f64) -> MLPParams<f64> {
    let mut p = MLPParams::zeros(&NetworkConfig::new(2, 0).with_width(4)).unwrap();
    let head = *p.layers().last().unwrap();
    p.data[head.bias(0)] = c;
    p
}

#[test]
fn moments_of_trivial_networks() {
    let cloud = sobol_points::<f64>(256, 1, 0).unwrap();
    let z = estimate_moments(&constant_net(0.0), &cloud, 0.3).unwrap();
    assert_eq!((z.mu1, z.mu2), (0.0, 0.0));
    let c = estimate_moments(&constant_net(1.5), &cloud, 0.3).unwrap();
    assert!((c.mu1 - 1.5).abs() < 1e-14 && (c.mu2 - 2.25).abs() < 1e-13 && c.sigma2.abs() < 1e-13);
    assert!(estimate_moments(&constant_net(1.0), &sobol_points(1, 1, 0).unwrap(), 0.0).is_err());
}

#[test]
fn qmc_moments_are_self_consistent() {
    let p = net(31, 32);
    let a = estimate_moments(&p, &sobol_points(100_000, 1, 0).unwrap(), 0.4).unwrap();
    let b = estimate_moments(&p, &sobol_points(1_000_000, 1, 0).unwrap(), 0.4).unwrap();
    assert!((a.mu1 - b.mu1).abs() <= 1e-4 * (1.0 + b.mu1.abs()), "{} vs {}", a.mu1, b.mu1);
    assert!((a.mu2 - b.mu2).abs() <= 1e-4 * (1.0 + b.mu2.abs()));
}

#[test]
fn moment_estimation_leaves_tapes_alone() {
    let p = net(1, 8);
    let mut tape = Tape::with_params(&p.data);
    trace(&mut tape, &p, &[0.2], 0.1).unwrap();
    let before = tape.len();
    estimate_moments(&p, &sobol_points(512, 1, 0).unwrap(), 0.1).unwrap();
    assert_eq!(tape.len(), before);
}

#[test]
fn spec_roots() {
    let a = solve_affine(&moments(2.0, 5.0), &TargetInvariants::new(0.0, 4.0), EPS_FLOOR).unwrap();
    assert_eq!((a.alpha, a.beta), (2.0, -4.0));
    assert_eq!(4.0 * 5.0 + 2.0 * 2.0 * (-4.0) * 2.0 + 16.0, 4.0);
    let flat = solve_affine(&moments(0.5, 0.25), &TargetInvariants::new(0.0, 1.0), EPS_FLOOR).unwrap();
    assert!((flat.alpha - 1e4).abs() <= 1e-8 && flat.beta.is_finite());
}

fn jac_fd(m: &MomentEstimate<f64>, tg: &TargetInvariants<f64>) -> [f64; 4] {
    let solve = |mu1: f64, mu2: f64| {
        let a = solve_affine(&moments(mu1, mu2), tg, EPS_FLOOR).unwrap();
        (a.alpha, a.beta)
    };
    let h1 = 1e-6 * (1.0 + m.mu1.abs());
    let h2 = 1e-6 * m.sigma2;
    let (ap, bp) = solve(m.mu1 + h1, m.mu2);
    let (am, bm) = solve(m.mu1 - h1, m.mu2);
    let (aq, bq) = solve(m.mu1, m.mu2 + h2);
    let (ar, br) = solve(m.mu1, m.mu2 - h2);
    [(ap - am) / (2.0 * h1), (aq - ar) / (2.0 * h2), (bp - bm) / (2.0 * h1), (bq - br) / (2.0 * h2)]
}

#[test]
fn jacobians_match_fd_on_random_draws() {
    let mut rng = SeededRng::new(50);
    for _ in 0..50 {
        let mu1 = 4.0 * rng.unit() - 2.0;
        let sigma2 = 0.05 + 2.0 * rng.unit();
        let m = moments(mu1, sigma2 + mu1 * mu1);
        let c1 = 2.0 * rng.unit() - 1.0;
        let tg = TargetInvariants::new(c1, c1 * c1 + 0.1 + rng.unit());
        let a = solve_affine(&m, &tg, EPS_FLOOR).unwrap();
        let j = projection_jacobians(&m, &a, EPS_FLOOR);
        let fd = jac_fd(&m, &tg);
        let scale = [j.da_dmu1, j.da_dmu2, j.db_dmu1, j.db_dmu2].iter().fold(0.0f64, |s, v| s.max(v.abs()));
        for (an, f) in [j.da_dmu1, j.da_dmu2, j.db_dmu1, j.db_dmu2].into_iter().zip(fd) {
            assert!((an - f).abs() <= 1e-6 * scale, "{an} vs {f}");
        }
    }
}

fn coupled(p: &MLPParams<f64>, cloud: &PointCloud<f64>, tg: &TargetInvariants<f64>, x: f64, t: f64) -> f64 {
    let m = estimate_moments(p, cloud, t).unwrap();
    let a = solve_affine(&m, tg, EPS_FLOOR).unwrap();
    apply_projection(forward(p, &[x], t).unwrap(), &a)
}

fn grad_of_output(p: &MLPParams<f64>, x: f64, t: f64) -> (f64, GradVector<f64>) {
    let mut tape = Tape::with_params(&p.data);
    let u = trace(&mut tape, p, &[x], t).unwrap().output;
    (tape.value(u), tape.backward(u).params)
}

#[test]
fn full_cloud_moment_gradients_match_fd() {
    let p = net(4, 6);
    let cloud = sobol_points::<f64>(64, 1, 0).unwrap();
    let t = 0.35;
    let (g1, g2) = moment_grad_estimates(&p, &cloud, t).unwrap();
    for k in 0..p.len() {
        let h = 1e-6;
        let (mut a, mut b) = (p.clone(), p.clone());
        a.data[k] += h;
        b.data[k] -= h;
        let (ma, mb) = (estimate_moments(&a, &cloud, t).unwrap(), estimate_moments(&b, &cloud, t).unwrap());
        let f1 = (ma.mu1 - mb.mu1) / (2.0 * h);
        let f2 = (ma.mu2 - mb.mu2) / (2.0 * h);
        assert!((g1[k] - f1).abs() <= 1e-7 * (1.0 + f1.abs()));
        assert!((g2[k] - f2).abs() <= 1e-7 * (1.0 + f2.abs()));
    }
}

#[test]
fn zero_network_has_zero_second_moment_gradient() {
    let p = MLPParams::<f64>::zeros(&NetworkConfig::new(2, 0).with_width(5)).unwrap();
    let (_, g2) = moment_grad_estimates(&p, &sobol_points(16, 1, 0).unwrap(), 0.2).unwrap();
    assert!(g2.iter().all(|&v| v == 0.0));
    assert!(moment_grad_estimates(&p, &sobol_points(0, 1, 0).unwrap(), 0.2).is_err());
}

#[test]
fn mini_batch_moment_gradients_are_unbiased() {
    let p = net(12, 8);
    let t = 0.6;
    let big = uniform_points::<f64>(20_000, 1, &mut SeededRng::new(3));
    let (full1, full2) = moment_grad_estimates(&p, &big, t).unwrap();
    let mut rng = SeededRng::new(8);
    let reps = 200;
    let n = p.len();
    let (mut sum1, mut sq1) = (vec![0.0; n], vec![0.0; n]);
    let (mut sum2, mut sq2) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..reps {
        let idx = draw(big.len(), 32, &mut rng);
        let coords: Vec<f64> = idx.iter().flat_map(|&i| big.point(i).to_vec()).collect();
        let batch = PointCloud::new(1, coords, big.source).unwrap();
        let (g1, g2) = moment_grad_estimates(&p, &batch, t).unwrap();
        for k in 0..n {
            sum1[k] += g1[k];
            sq1[k] += g1[k] * g1[k];
            sum2[k] += g2[k];
            sq2[k] += g2[k] * g2[k];
        }
    }
    for (sum, sq, full) in [(&sum1, &sq1, &full1), (&sum2, &sq2, &full2)] {
        let r = reps as f64;
        let dev: f64 = (0..n).map(|k| (sum[k] / r - full[k]).powi(2)).sum::<f64>().sqrt();
        let var: f64 = (0..n).map(|k| sq[k] / r - (sum[k] / r).powi(2)).sum();
        let norm = full.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dev <= 3.0 * (var / r).sqrt(), "deviation {dev:e}, bound {:e}", 3.0 * (var / r).sqrt());
        assert!(dev / norm < 0.5);
    }
}

#[test]
fn projected_gradient_identity_cases() {
    let p = net(2, 5);
    let (u, gu) = grad_of_output(&p, 0.4, 0.2);
    let zero = GradVector(vec![0.0; p.len()]);
    let id = AffineParams::identity(0.2);
    let j = projection_jacobians(&moments(0.0, 1.0), &id, EPS_FLOOR);
    assert_eq!(projected_grad(&id, &j, (&zero, &zero), u, &gu).0, gu.0);

    let a = AffineParams { alpha: 1.7, beta: -0.3, t: 0.2 };
    let j = projection_jacobians(&moments(0.4, 1.0), &a, EPS_FLOOR);
    let g = projected_grad(&a, &j, (&zero, &zero), u, &gu);
    for (x, y) in g.iter().zip(gu.iter()) {
        assert_eq!(*x, 1.7 * y);
    }
}

#[test]
fn projected_gradient_matches_fd_of_coupled_map() {
    let p = net(21, 6);
    let cloud = sobol_points::<f64>(128, 1, 0).unwrap();
    let tg = TargetInvariants::new(0.2, 0.5);
    let (x, t) = (0.7, 0.45);
    let m = estimate_moments(&p, &cloud, t).unwrap();
    let a = solve_affine(&m, &tg, EPS_FLOOR).unwrap();
    let j = projection_jacobians(&m, &a, EPS_FLOOR);
    let (g1, g2) = moment_grad_estimates(&p, &cloud, t).unwrap();
    let (u, gu) = grad_of_output(&p, x, t);
    let g = projected_grad(&a, &j, (&g1, &g2), u, &gu);
    let scale = g.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    for k in 0..p.len() {
        let h = 1e-6;
        let (mut pa, mut pb) = (p.clone(), p.clone());
        pa.data[k] += h;
        pb.data[k] -= h;
        let fd = (coupled(&pa, &cloud, &tg, x, t) - coupled(&pb, &cloud, &tg, x, t)) / (2.0 * h);
        assert!((g[k] - fd).abs() <= 1e-5 * scale, "param {k}: {} vs {fd}", g[k]);
    }
}

#[test]
fn projection_on_jets() {
    let mut e = Eval::<f64>::without_params();
    let j = Jet::from_coeffs(&mut e, &[1.0, 0.5, 0.2]).unwrap();
    let p = apply_projection_jet(&mut e, &j, 2.0, 1.0);
    assert_eq!([p.coeff(0), p.coeff(1), p.coeff(2)], [3.0, 1.0, 0.4]);
    assert_eq!(apply_projection(3.0, &AffineParams { alpha: 2.0, beta: -1.0, t: 0.0 }), 5.0);
}

#[test]
fn spatial_derivatives_scale_by_alpha() {
    let p = net(6, 10);
    let mut rng = SeededRng::new(20);
    let (alpha, beta) = (1.37, -0.82);
    for _ in 0..20 {
        let (x, t) = (2.0 * rng.unit(), rng.unit());
        let mut e = Eval::new(&p.data);
        let raw = forward_jet(&mut e, &p, &[x], t, 0, 3).unwrap();
        let proj = apply_projection_jet(&mut e, &raw, alpha, beta);
        for k in 1..=3 {
            assert_eq!(proj.coeff(k), alpha * raw.coeff(k));
        }
    }
}

#[test]
fn shift_residual_variance_matches_two_sigma_squared_over_n() {
    let p = net(9, 16);
    let t = 0.5;
    let sigma2 = estimate_moments(&p, &sobol_points(200_000, 1, 0).unwrap(), t).unwrap().sigma2;
    let mut rng = SeededRng::new(1234);
    let (n, trials) = (100, 5000);
    let c1_bar = 0.3;
    let mut eps = Vec::with_capacity(trials);
    for _ in 0..trials {
        let a = forward_batch(&p, &uniform_points(n, 1, &mut rng), t).unwrap();
        let b = forward_batch(&p, &uniform_points(n, 1, &mut rng), t).unwrap();
        let (delta, _) = same_batch_shift(&a, c1_bar).unwrap();
        eps.push(b.iter().map(|u| u + delta).sum::<f64>() / n as f64 - c1_bar);
    }
    let mean = eps.iter().sum::<f64>() / trials as f64;
    let var = eps.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
    let ratio = var / (2.0 * sigma2 / n as f64);
    assert!((0.7..=1.3).contains(&ratio), "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifted_batch_mean_is_exact(v in prop::collection::vec(-3.0..3.0f64, 1..200), c in -10.0..10.0f64) {
        let (_, s) = same_batch_shift(&v, c).unwrap();
        let mean = cpl_core::scalar::pairwise_sum(&s) / s.len() as f64;
        prop_assert!((mean - c).abs() <= 1e-14 * (1.0 + c.abs()));
    }

    #[test]
    fn exact_conservation_on_the_detached_set(seed in any::<u64>(), c1 in -1.0..1.0f64, v in 0.01..2.0f64, t in 0.0..1.0f64) {
        let p = net(seed, 8);
        let cloud = sobol_points::<f64>(512, 1, 0).unwrap();
        let tg = TargetInvariants::new(c1, c1 * c1 + v);
        let m = estimate_moments(&p, &cloud, t).unwrap();
        prop_assume!(m.sigma2 >= EPS_FLOOR);
        let a = solve_affine(&m, &tg, EPS_FLOOR).unwrap();
        prop_assert!(a.alpha > 0.0);
        let proj: Vec<f64> = forward_batch(&p, &cloud, t).unwrap().into_iter().map(|u| a.apply(u)).collect();
        let pm = MomentEstimate::from_values(&proj, t).unwrap();
        prop_assert!((pm.mu1 - tg.c1_bar).abs() <= 1e-10 * (1.0 + tg.c1_bar.abs()));
        prop_assert!((pm.mu2 - tg.c2_bar).abs() <= 1e-10 * (1.0 + tg.c2_bar.abs()));
    }

    #[test]
    fn alpha_is_positive(mu1 in -5.0..5.0f64, s2 in 0.0..5.0f64, c1 in -5.0..5.0f64, v in 1e-6..5.0f64) {
        let a = solve_affine(&moments(mu1, s2 + mu1 * mu1), &TargetInvariants::new(c1, c1 * c1 + v), EPS_FLOOR).unwrap();
        prop_assert!(a.alpha > 0.0 && a.alpha.is_finite() && a.beta.is_finite());
    }
}
