mod common;

use common::brute_j;
use permfield::chaining::{j_functional, orlicz_norm};
use permfield::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

#[test]
fn matches_ten_thousand_cell_grid_on_aligned_families() {
    // l1 distances between points with coordinates in (1/100) Z fall on cell edges.
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..10 {
        let n = rng.random_range(2..7);
        let pts: Vec<(i64, i64)> = (0..n).map(|_| (rng.random_range(0..40), rng.random_range(0..40))).collect();
        let dist: Vec<Vec<f64>> =
            pts.iter().map(|p| pts.iter().map(|q| ((p.0 - q.0).abs() + (p.1 - q.1).abs()) as f64 / 100.0).collect()).collect();
        let mu = weights(&mut rng, n);
        for a in [0.25, 1.0] {
            let j = j_functional(&dist, &mu, a).unwrap();
            let b = brute_j(&dist, &mu, a, 10_000);
            assert!((j - b).abs() <= 1e-6, "{j} vs {b}");
        }
    }
}

#[test]
fn matches_dense_grid_on_generic_families() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..4 {
        let n = rng.random_range(2..6);
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
        let dist: Vec<Vec<f64>> = pts.iter().map(|p| pts.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).collect()).collect();
        let mu = weights(&mut rng, n);
        let j = j_functional(&dist, &mu, 1.0).unwrap();
        let b = brute_j(&dist, &mu, 1.0, 2_000_000);
        assert!((j - b).abs() <= 1e-6, "{j} vs {b}");
    }
}

#[test]
fn closed_forms() {
    for k in 1..8usize {
        let dist: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 0.0 } else { 1.0 }).collect()).collect();
        let mu = vec![1.0 / k as f64; k];
        for a in [0.5f64, 1.0, 3.0] {
            let want = a.min(1.0) * (k as f64).ln();
            assert!((j_functional(&dist, &mu, a).unwrap() - want).abs() <= 4.0 * f64::EPSILON * want.max(1.0));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let w = weights(&mut rng, 1);
    assert_eq!(j_functional(&[vec![0.0]], &w, 2.0).unwrap(), 0.0);
    let bad = vec![vec![0.0, 1.0, 3.0], vec![1.0, 0.0, 1.0], vec![3.0, 1.0, 0.0]];
    assert!(matches!(j_functional(&bad, &[0.2, 0.3, 0.5], 1.0), Err(Error::NotAMetric(_))));
}

#[test]
fn orlicz_norm_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let xs: Vec<f64> = (0..2000).map(|_| rng.random_range(-2.0..2.0)).collect();
    let c = orlicz_norm(&xs).unwrap();
    let doubled: Vec<f64> = xs.iter().map(|v| 2.0 * v).collect();
    assert!((orlicz_norm(&doubled).unwrap() - 2.0 * c).abs() < 1e-12 * c);
    let mean: f64 = xs.iter().map(|v| (v.abs() / c).exp() - 1.0).sum::<f64>() / xs.len() as f64;
    assert!((mean - 1.0).abs() < 1e-10);
    assert_eq!(orlicz_norm(&vec![0.0; 1000]).unwrap(), 0.0);
    assert!((orlicz_norm(&vec![-1.5; 1000]).unwrap() - 1.5 / 2f64.ln()).abs() < 1e-12);
}
