use lowrank_sketch::diffsvd::{
    power_svd, scw_forward_with_tape, scw_loss_and_grad, scw_power_loss, PowerSvdConfig,
};
use lowrank_sketch::linalg::{matmul, reference_svd, DenseMatrix};
use lowrank_sketch::rng::rng_from_seed;
use lowrank_sketch::sketch::{concat_sketches, sparse_random_sketch, SparseSketch};

mod common;
use common::{central_differences, spectrum_with_ratios, well_conditioned_instance};

fn cfg(t: usize, seed: u64) -> PowerSvdConfig {
    PowerSvdConfig {
        t_iters: t,
        m_factors: 1,
        init_seed: seed,
    }
}

#[test]
fn power_svd_matches_reference_with_gap() {
    let mut rng = rng_from_seed(2024);
    for trial in 0..10 {
        let a = spectrum_with_ratios(6, 4, 1.5, &mut rng);
        let r = reference_svd(&a).unwrap();
        let p = power_svd(
            &a,
            &PowerSvdConfig {
                t_iters: 200,
                m_factors: 4,
                init_seed: trial,
            },
        )
        .unwrap();
        assert_eq!(p.rank(), 4);
        for i in 0..4 {
            let rel = (p.sigma[i] - r.sigma[i]).abs() / r.sigma[i];
            assert!(rel < 1e-6, "trial {trial} σ{i}: {rel}");
            let cos =
                p.v.column(i)
                    .iter()
                    .zip(r.v.column(i))
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .abs();
            let angle = cos.min(1.0).acos();
            assert!(angle < 1e-5, "trial {trial} v{i} angle {angle}");
            let cos_u =
                p.u.column(i)
                    .iter()
                    .zip(r.u.column(i))
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    .abs();
            assert!(cos_u.min(1.0).acos() < 1e-5);
        }
    }
}

#[test]
fn tape_forward_equals_eager_bitwise() {
    let mut rng = rng_from_seed(5);
    for seed in 0..5 {
        let a = DenseMatrix::random_normal(10, 7, &mut rng);
        let s = sparse_random_sketch(4, 10, seed).unwrap();
        let c = cfg(30, seed);
        let (loss, _) = scw_forward_with_tape(&a, &s, 2, &c).unwrap();
        let eager = scw_power_loss(&a, &s, 2, &c).unwrap();
        assert_eq!(loss.to_bits(), eager.to_bits());
    }
}

#[test]
fn tape_size_depends_only_on_shapes() {
    let mut rng = rng_from_seed(6);
    let a1 = DenseMatrix::random_normal(8, 6, &mut rng);
    let a2 = DenseMatrix::random_normal(8, 6, &mut rng);
    let s1 = sparse_random_sketch(3, 8, 1).unwrap();
    let s2 = sparse_random_sketch(3, 8, 2).unwrap();
    let (_, t1) = scw_forward_with_tape(&a1, &s1, 2, &cfg(10, 0)).unwrap();
    let (_, t2) = scw_forward_with_tape(&a2, &s2, 2, &cfg(10, 9)).unwrap();
    assert_eq!(t1.len(), t2.len());
    assert!(!t1.is_empty());
}

#[test]
fn exact_recovery_has_zero_loss_and_gradient() {
    let mut rng = rng_from_seed(8);
    let a = matmul(
        &DenseMatrix::random_normal(8, 2, &mut rng),
        &DenseMatrix::random_normal(2, 6, &mut rng),
    )
    .unwrap();
    let s = sparse_random_sketch(3, 8, 3).unwrap();
    let (loss, grad) = scw_loss_and_grad(&a, &s, 2, &cfg(200, 1)).unwrap();
    assert!(loss < 1e-12, "{loss}");
    assert!(grad.iter().all(|g| g.abs() < 1e-8), "{grad:?}");
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(31);
    let mut checked = 0;
    for trial in 0..6 {
        let (a, s) = well_conditioned_instance(8, 6, 3, 2, &mut rng);
        let c = cfg(60, trial);
        let (_, grad) = scw_loss_and_grad(&a, &s, 2, &c).unwrap();
        let x0 = s.values();
        let fd = central_differences(
            |x| {
                let mut t = s.clone();
                t.set_values(x).unwrap();
                scw_power_loss(&a, &t, 2, &c).unwrap()
            },
            &x0,
            1e-5,
        );
        for (i, (g, f)) in grad.iter().zip(&fd).enumerate() {
            let tol = (1e-4 * f.abs()).max(1e-6);
            assert!(
                (g - f).abs() <= tol,
                "trial {trial} coord {i}: ad {g} fd {f}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 6 * 8);
}

#[test]
fn masked_values_get_zero_gradient_but_still_matter() {
    let mut rng = rng_from_seed(41);
    let (a, s) = well_conditioned_instance(8, 6, 3, 2, &mut rng);
    let mut fixed = sparse_random_sketch(2, 8, 77).unwrap();
    fixed.set_trainable(false);
    let mixed = concat_sketches(&s, &fixed).unwrap();
    let c = cfg(60, 4);
    let (loss, grad) = scw_loss_and_grad(&a, &mixed, 2, &c).unwrap();
    assert!(grad[8..].iter().all(|&g| g == 0.0));
    assert!(grad[..8].iter().any(|&g| g != 0.0));

    let mut perturbed = mixed.clone();
    let mut v = perturbed.values();
    v[10] += 0.3;
    perturbed.set_values(&v).unwrap();
    let l2 = scw_power_loss(&a, &perturbed, 2, &c).unwrap();
    assert_ne!(loss, l2);

    let mut all_fixed = mixed.clone();
    all_fixed.set_trainable(false);
    let (_, g0) = scw_loss_and_grad(&a, &all_fixed, 2, &c).unwrap();
    assert!(g0.iter().all(|&g| g == 0.0));
}

#[test]
fn shape_errors() {
    let s = sparse_random_sketch(2, 5, 1).unwrap();
    assert!(scw_forward_with_tape(&DenseMatrix::zeros(4, 3), &s, 1, &cfg(5, 0)).is_err());
    assert!(scw_forward_with_tape(&DenseMatrix::zeros(5, 3), &s, 0, &cfg(5, 0)).is_err());
    assert!(scw_forward_with_tape(&DenseMatrix::zeros(5, 3), &s, 1, &cfg(0, 0)).is_err());
}

#[test]
fn zero_sketch_gives_full_loss() {
    let mut rng = rng_from_seed(3);
    let a = DenseMatrix::random_normal(5, 4, &mut rng);
    let mut s = SparseSketch::identity(5);
    s.set_values(&[0.0; 5]).unwrap();
    let (loss, grad) = scw_loss_and_grad(&a, &s, 2, &cfg(10, 0)).unwrap();
    let norm2: f64 = a.as_slice().iter().map(|x| x * x).sum();
    assert!((loss - norm2).abs() < 1e-12);
    assert!(grad.iter().all(|&g| g == 0.0));
}
