use lowrank_sketch::linalg::DenseMatrix;
use lowrank_sketch::theory::{
    discretize_sphere, empirical_losses, full_objective, grid_search_robust_minimizer,
    random_profiles, random_unit_vector, robust_grid, robustness_fraction, simplified_objective,
    spiked_profiles_2d, verify_stable_rank_lemma, RobustnessParams, SpectralProfile,
};
use lowrank_sketch::Error;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn objectives_in_unit_interval() {
    let profiles = random_profiles(5, 3).unwrap();
    for (i, p) in profiles.iter().enumerate() {
        let d = p.dim();
        let mut e1 = vec![0.0; d];
        e1[0] = 1.0;
        assert!((full_objective(&e1, p).unwrap() - 1.0).abs() < 1e-12);
        for seed in 0..50 {
            let s = random_unit_vector(d, seed + 100 * i as u64);
            let f = full_objective(&s, p).unwrap();
            let g = simplified_objective(&s, p).unwrap();
            assert!((0.0..=1.0 + 1e-12).contains(&f));
            assert!((0.0..=1.0 + 1e-12).contains(&g));
        }
    }
}

#[test]
fn rotated_profile_objectives() {
    let (c, s) = (0.6, 0.8);
    let u = DenseMatrix::from_rows(&[&[c, -s], &[s, c]]);
    let p = SpectralProfile::new(vec![1.0, 0.5], u).unwrap();
    assert!((full_objective(&[c, s], &p).unwrap() - 1.0).abs() < 1e-12);
    assert!((full_objective(&[-s, c], &p).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn random_vector_mean_is_near_zero() {
    let mut sum = [0.0; 3];
    let n = 100_000;
    for seed in 0..n {
        let v = random_unit_vector(3, seed);
        for (acc, x) in sum.iter_mut().zip(&v) {
            *acc += x;
        }
    }
    let norm = sum
        .iter()
        .map(|x| (x / n as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    assert!(norm < 0.02, "{norm}");
}

#[test]
fn flat_profile_mean_is_one_over_d() {
    let flat = SpectralProfile::diagonal(vec![1.0; 10]).unwrap();
    let check = verify_stable_rank_lemma(&[flat], 100_000, 7).unwrap();
    assert!((check.profiles[0].mean_simplified - 0.1).abs() < 0.02);
    assert!((check.profiles[0].stable_rank - 10.0).abs() < 1e-12);
}

#[test]
fn sphere_grid_covers_circle() {
    let eps = 0.1;
    let grid = discretize_sphere(2, eps).unwrap();
    for seed in 0..10_000 {
        let x = random_unit_vector(2, seed);
        let best = grid
            .iter()
            .map(|g| dist(g, &x))
            .fold(f64::INFINITY, f64::min);
        assert!(best <= eps, "seed {seed}: {best}");
    }
    let mut sorted = grid.clone();
    sorted.dedup();
    assert_eq!(sorted.len(), grid.len());
}

#[test]
fn sphere_grid_covers_3d() {
    let eps = 0.3;
    let grid = discretize_sphere(3, eps).unwrap();
    for seed in 0..2000 {
        let x = random_unit_vector(3, seed);
        assert!(grid.iter().any(|g| dist(g, &x) <= eps));
    }
}

#[test]
fn fragile_direction_is_flagged_and_excluded() {
    let eps: f64 = 0.01;
    let fragile = [eps, (1.0 - eps * eps).sqrt()];
    let perturbed = SpectralProfile::unnormalized(
        vec![(1.0 - 100.0 * eps * eps).sqrt(), 10.0 * eps],
        DenseMatrix::identity(2),
    )
    .unwrap();
    let expected = (1.0 - 100.0 * eps * eps) * eps * eps + 100.0 * eps * eps * (1.0 - eps * eps);
    assert!((perturbed.denominator(&fragile) - expected).abs() < 1e-15);
    assert_eq!(
        robustness_fraction(&fragile, &vec![perturbed; 4], 0.05),
        1.0
    );

    let degenerate =
        SpectralProfile::unnormalized(vec![1.0, 0.0], DenseMatrix::identity(2)).unwrap();
    let train = vec![degenerate; 10];
    assert!((full_objective(&fragile, &train[0]).unwrap() - 1.0).abs() < 1e-12);
    let params = RobustnessParams {
        rho: 0.0,
        delta: 0.05,
        eps_grid: 0.05,
        ..Default::default()
    };
    let feasible = robust_grid(&train, &params).unwrap();
    assert!(feasible.iter().all(|s| dist(s, &fragile) > 0.1));
    let s = grid_search_robust_minimizer(&train, &params).unwrap();
    assert!(dist(&s, &fragile) > 0.1);
    assert!(s[0].abs() > 0.9);
}

#[test]
fn unconstrained_search_is_plain_minimizer() {
    let train = spiked_profiles_2d(50, 3);
    let params = RobustnessParams {
        rho: 1.0,
        eps_grid: 0.05,
        ..Default::default()
    };
    let s = grid_search_robust_minimizer(&train, &params).unwrap();
    let grid = discretize_sphere(2, 0.05).unwrap();
    let best = grid
        .iter()
        .map(|g| empirical_losses(g, &train, &train).train_loss)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(empirical_losses(&s, &train, &train).train_loss, best);
}

#[test]
fn rank_one_training_keeps_only_aligned_directions() {
    let (c, s) = (0.8, 0.6);
    let u = DenseMatrix::from_rows(&[&[c, -s], &[s, c]]);
    let p = SpectralProfile::unnormalized(vec![1.0, 0.0], u).unwrap();
    let train = vec![p; 5];
    let params = RobustnessParams {
        rho: 0.0,
        delta: 0.1,
        eps_grid: 0.05,
        ..Default::default()
    };
    // Every direction with a nonzero top coordinate attains the optimum, so
    // the robust set is exactly those with squared alignment at least delta.
    let feasible = robust_grid(&train, &params).unwrap();
    assert!(!feasible.is_empty());
    for g in &feasible {
        let align = (c * g[0] + s * g[1]).powi(2);
        assert!(align >= 0.1 - 1e-12);
        assert!((empirical_losses(g, &train, &train).train_loss + 1.0).abs() < 1e-12);
    }
    let found = grid_search_robust_minimizer(&train, &params).unwrap();
    assert!((empirical_losses(&found, &train, &train).train_loss + 1.0).abs() < 1e-12);
    assert_eq!(
        &found,
        feasible
            .iter()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .unwrap()
    );
}

#[test]
fn no_robust_solution_is_reported() {
    let train = spiked_profiles_2d(10, 1);
    let params = RobustnessParams {
        rho: 0.0,
        delta: 5.0,
        ..Default::default()
    };
    assert!(matches!(
        grid_search_robust_minimizer(&train, &params),
        Err(Error::NoRobustSolution { .. })
    ));
}

#[test]
fn losses_bounded_and_gap_small_at_n200() {
    let params = RobustnessParams::default();
    let train = spiked_profiles_2d(200, 11);
    let holdout = spiked_profiles_2d(200, 12);
    let s = grid_search_robust_minimizer(&train, &params).unwrap();
    let l = empirical_losses(&s, &train, &holdout);
    assert!((-1.0..=0.0).contains(&l.train_loss) && (-1.0..=0.0).contains(&l.holdout_loss));
    assert!(l.gap.abs() <= 0.1);
    let same = empirical_losses(&s, &train, &train);
    assert_eq!(same.gap, 0.0);
}

#[test]
fn profiles_generated_in_range() {
    let profiles = random_profiles(30, 5).unwrap();
    for p in &profiles {
        let r = p.stable_rank();
        assert!((1.0 - 1e-6..=15.0 + 1e-6).contains(&r));
        assert!((16..=24).contains(&p.dim()));
    }
}
