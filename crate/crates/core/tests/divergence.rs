mod common;

use common::{g_plus_by_sup, random_instance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpflow_core::divergence::{f_conjugate, f_divergence, f_value, ChiSquareSpec};
use vpflow_core::mdp::{occupancy_of_policy, OccupancyMeasure};

/// Plain chi-square `sum (d - mu)^2 / mu` over joint weights.
fn chi_square(d: &[f64], mu: &[f64]) -> f64 {
    d.iter().zip(mu).map(|(x, m)| (x - m) * (x - m) / m).sum()
}

#[test]
fn fenchel_inequality_and_equality() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let x: f64 = rng.gen_range(-3.0..3.0);
        let y: f64 = rng.gen_range(-3.0..5.0);
        assert!(f_conjugate(x) >= x * y - f_value(y) - 1e-12);
        assert!((f_conjugate(x) - (x * (x + 1.0) - f_value(x + 1.0))).abs() <= 1e-12);
        // the sup over a fine grid reaches the closed form
        let sup = (0..=20_000).map(|i| -10.0 + i as f64 * 1e-3).map(|y| x * y - f_value(y)).fold(f64::MIN, f64::max);
        assert!(f_conjugate(x) - sup <= 1e-6);
    }
}

#[test]
fn scaled_conjugate_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let alpha = rng.gen_range(0.01..3.0);
        let g = ChiSquareSpec::new(alpha).unwrap();
        assert!((g.g_conjugate(-alpha) + alpha / 2.0).abs() <= 1e-15);
        for _ in 0..50 {
            let x = rng.gen_range(-5.0..5.0);
            assert!((g.g_conjugate(x) - alpha * f_conjugate(x / alpha)).abs() <= 1e-12 * (1.0 + g.g_conjugate(x).abs()));
            assert!((g.g_conjugate_plus(x) - g.g_conjugate_plus_indicator(x)).abs() <= 1e-12 * (1.0 + g.g_conjugate_plus(x)));
            assert!((g.g_conjugate_plus(x) - g_plus_by_sup(alpha, x)).abs() <= 1e-9 * (1.0 + g.g_conjugate_plus(x)));
        }
    }
}

#[test]
fn positive_part_is_convex_nondecreasing_and_clipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let alpha = rng.gen_range(0.01..3.0);
        let g = ChiSquareSpec::new(alpha).unwrap();
        let xs: Vec<f64> = (0..1000).map(|i| -3.0 * alpha + i as f64 * (6.0 * alpha) / 999.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| g.g_conjugate_plus(x)).collect();
        for (x, y) in xs.iter().zip(&ys) {
            if *x <= -alpha {
                assert_eq!(*y, 0.0);
            }
        }
        for w in ys.windows(2) {
            assert!(w[1] >= w[0]);
        }
        for w in ys.windows(3) {
            assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-12);
        }
    }
}

#[test]
fn conjugate_range_matches_grid_and_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let alpha = rng.gen_range(0.01..3.0);
        let v_max = rng.gen_range(0.5..20.0);
        let g = ChiSquareSpec::new(alpha).unwrap();
        let grid: Vec<f64> = (0..=10_000)
            .map(|i| -v_max + i as f64 * (2.0 * v_max + 1.0) / 10_000.0)
            .map(|x| g.g_conjugate(x))
            .collect();
        let range = grid.iter().cloned().fold(f64::MIN, f64::max) - grid.iter().cloned().fold(f64::MAX, f64::min);
        assert!((g.g_conjugate_range(v_max) - range).abs() <= 1e-6 * (1.0 + range));
        let low = if alpha <= v_max { -alpha / 2.0 } else { g.g_conjugate(-v_max) };
        let exact = g.g_conjugate(v_max + 1.0) - low;
        assert!((g.g_conjugate_range(v_max) - exact).abs() <= 1e-9 * exact);
        if alpha + v_max >= 1.0 + 2f64.sqrt() {
            assert!(range <= alpha * (1.0 + v_max / alpha).powi(2));
        }
    }
    // below alpha + v_max = 1 + sqrt 2 the bound alpha (1 + v_max/alpha)^2 is too small
    let g = ChiSquareSpec::new(0.1).unwrap();
    assert!(g.g_conjugate_range(1.0) > 0.1 * (1.0 + 1.0 / 0.1f64).powi(2));
}

#[test]
fn divergence_is_half_chi_square() {
    for seed in 0..10 {
        let (mdp, behavior) = random_instance(seed, 6, 3, 2, 0.9);
        let (_, other) = random_instance(seed + 100, 6, 3, 2, 0.9);
        let mu = occupancy_of_policy(&mdp, &behavior).unwrap();
        if other.n_states != mdp.n_states() || other.n_actions != mdp.n_actions() || other.n_goals != mdp.n_goals() {
            continue;
        }
        let d = occupancy_of_policy(&mdp, &other).unwrap();
        let p = mdp.goal_dist();
        let value = f_divergence(&d, &mu, p).unwrap();
        assert!((value - 0.5 * chi_square(&d.joint(p), &mu.joint(p))).abs() <= 1e-12);
        assert!(value > 0.0);
        assert_eq!(f_divergence(&mu, &mu, p).unwrap(), 0.0);
    }
}

proptest! {
    #[test]
    fn divergence_is_nonnegative(raw in prop::collection::vec(0.01f64..1.0, 8), other in prop::collection::vec(0.0f64..1.0, 8)) {
        let norm = |v: &[f64]| { let t: f64 = v.iter().sum(); v.iter().map(|x| x / t).collect::<Vec<_>>() };
        let mu = OccupancyMeasure::new(2, 4, 1, norm(&raw)).unwrap();
        prop_assume!(other.iter().sum::<f64>() > 0.0);
        let d = OccupancyMeasure::new(2, 4, 1, norm(&other)).unwrap();
        prop_assert!(f_divergence(&d, &mu, &[1.0]).unwrap() >= 0.0);
    }
}
