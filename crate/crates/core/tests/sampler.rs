use cpl_core::sampler::{
    map_to_domain, sample_subsets, sobol_points, uniform_points, CloudSource, Domain, PointCloud, SeededRng,
};
use cpl_core::Error;
use proptest::prelude::*;
use rand::Rng;

#[test]
fn sobol_golden_points() {
    let c = sobol_points::<f64>(1, 1, 0).unwrap();
    assert_eq!(c.point(0), &[0.5]);
    let c = sobol_points::<f64>(4, 2, 0).unwrap();
    assert_eq!(c.point(0), &[0.5, 0.5]);
    assert_eq!(c.point(1), &[0.75, 0.25]);
    assert_eq!(c.point(2), &[0.25, 0.75]);
    assert_eq!(c.point(3), &[0.375, 0.375]);
}

#[test]
fn sobol_skip_continues_the_sequence() {
    let all = sobol_points::<f64>(20, 5, 0).unwrap();
    let tail = sobol_points::<f64>(10, 5, 10).unwrap();
    assert_eq!(&all.coords()[50..], tail.coords());
    assert_eq!(tail.source, CloudSource::Sobol { skip: 10 });
}

#[test]
fn sobol_over_table_size_is_config_error() {
    assert!(matches!(sobol_points::<f64>(8, 65, 0), Err(Error::Config(_))));
    assert!(sobol_points::<f64>(8, 64, 0).is_ok());
}

#[test]
fn uniform_is_deterministic_and_centred() {
    let a = uniform_points::<f64>(10_000, 1, &mut SeededRng::new(9));
    let b = uniform_points::<f64>(10_000, 1, &mut SeededRng::new(9));
    assert_eq!(a.coords(), b.coords());
    let mean = a.coords().iter().sum::<f64>() / 1e4;
    assert!((mean - 0.5).abs() <= 0.02, "{mean}");
    assert!(uniform_points::<f64>(0, 3, &mut SeededRng::new(1)).is_empty());
}

#[test]
fn mapping_into_domains() {
    let dom = Domain::new(vec![0.0], vec![2.0], 1.0).unwrap();
    let c = PointCloud::new(1, vec![0.5], CloudSource::Uniform { seed: 0 }).unwrap();
    assert_eq!(map_to_domain(&c, &dom).unwrap().point(0), &[1.0]);

    let dom = Domain::new(vec![-3.0], vec![5.0], 1.0).unwrap();
    let edge = 1.0 - f64::EPSILON;
    let c = PointCloud::new(1, vec![0.0, edge], CloudSource::Uniform { seed: 0 }).unwrap();
    let m = map_to_domain(&c, &dom).unwrap();
    assert_eq!(m.point(0), &[-3.0]);
    assert!((m.point(1)[0] - 5.0).abs() < 1e-14);

    let dom = Domain::new(vec![0.0], vec![2.0], 1.0).unwrap();
    let m = map_to_domain(&sobol_points::<f64>(4096, 1, 0).unwrap(), &dom).unwrap();
    let mean = m.coords().iter().sum::<f64>() / 4096.0;
    assert!((mean - 1.0).abs() <= 1e-3, "{mean}");
}

#[test]
fn invalid_domains_rejected() {
    assert!(Domain::new(vec![1.0], vec![1.0], 1.0).is_err());
    assert!(Domain::new(vec![0.0, 2.0], vec![1.0, 1.0], 1.0).is_err());
    let d = Domain::cube(-1.0, 1.0, 3, 2.0).unwrap();
    assert_eq!(d.volume(), 8.0);
}

#[test]
fn full_subset_and_oversized_subset() {
    let (i, j) = sample_subsets(3, 3, 3, &mut SeededRng::new(4)).unwrap();
    assert_eq!(i, vec![0, 1, 2]);
    assert_eq!(j, vec![0, 1, 2]);
    assert!(matches!(sample_subsets(3, 4, 1, &mut SeededRng::new(4)), Err(Error::Config(_))));
}

#[test]
fn subset_frequencies_and_independence() {
    let mut rng = SeededRng::new(2024);
    let draws = 60_000;
    let mut freq = [0usize; 6];
    // indicator correlation between "0 ∈ I" and "0 ∈ J"
    let (mut si, mut sj, mut sij) = (0.0, 0.0, 0.0);
    for n in 0..draws {
        let (i, j) = sample_subsets(6, 2, 2, &mut rng).unwrap();
        assert_eq!(i.len(), 2);
        assert!(i[0] != i[1]);
        for &k in &i {
            freq[k] += 1;
        }
        if n < 10_000 {
            let a = i.contains(&0) as u8 as f64;
            let b = j.contains(&0) as u8 as f64;
            si += a;
            sj += b;
            sij += a * b;
        }
    }
    for f in freq {
        let p = f as f64 / draws as f64;
        assert!((p - 1.0 / 3.0).abs() <= 0.01, "{p}");
    }
    let n = 1e4;
    let cov = sij / n - (si / n) * (sj / n);
    let corr = cov / ((si / n) * (1.0 - si / n) * (sj / n) * (1.0 - sj / n)).sqrt();
    assert!(corr.abs() <= 0.02, "{corr}");
}

fn box_count_error(cloud: &PointCloud<f64>, boxes: &[[f64; 4]]) -> f64 {
    let m = cloud.len() as f64;
    boxes
        .iter()
        .map(|b| {
            let inside = cloud.iter().filter(|p| p[0] >= b[0] && p[0] < b[1] && p[1] >= b[2] && p[1] < b[3]).count();
            (inside as f64 / m - (b[1] - b[0]) * (b[3] - b[2])).abs()
        })
        .sum::<f64>()
        / boxes.len() as f64
}

#[test]
fn sobol_box_counts_beat_uniform() {
    let mut rng = SeededRng::new(77);
    let boxes: Vec<[f64; 4]> = (0..100)
        .map(|_| {
            let (a, b): (f64, f64) = (rng.gen(), rng.gen());
            let (c, d): (f64, f64) = (rng.gen(), rng.gen());
            [a.min(b), a.max(b), c.min(d), c.max(d)]
        })
        .collect();
    let sob = box_count_error(&sobol_points(4096, 2, 0).unwrap(), &boxes);
    let uni = box_count_error(&uniform_points(4096, 2, &mut SeededRng::new(5)), &boxes);
    assert!(3.0 * sob <= uni, "sobol {sob:e} uniform {uni:e}");
}

proptest! {
    #[test]
    fn sobol_coordinates_in_unit_interval(m in 1usize..300, d in 1usize..65, skip in 0u64..1_000_000) {
        let c = sobol_points::<f64>(m, d, skip).unwrap();
        prop_assert_eq!(c.len(), m);
        prop_assert!(c.coords().iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn mapped_points_stay_inside(lo in -5.0..5.0f64, w in 0.1..10.0f64, seed in any::<u64>()) {
        let dom = Domain::new(vec![lo, lo], vec![lo + w, lo + 2.0 * w], 1.0).unwrap();
        let c = map_to_domain(&uniform_points(200, 2, &mut SeededRng::new(seed)), &dom).unwrap();
        prop_assert!(c.iter().all(|p| dom.contains(p)));
    }

    #[test]
    fn same_seed_same_stream(seed in any::<u64>()) {
        let (mut a, mut b) = (SeededRng::new(seed), SeededRng::new(seed));
        for _ in 0..16 {
            prop_assert_eq!(a.unit().to_bits(), b.unit().to_bits());
        }
        prop_assert_eq!(
            sample_subsets(50, 7, 9, &mut a).unwrap(),
            sample_subsets(50, 7, 9, &mut b).unwrap()
        );
    }
}
