//! Shared oracles and generators for the integration tests.
#![allow(dead_code)]

use lowrank_sketch::linalg::{matmul, orthonormal_columns, reference_svd, DenseMatrix};
use lowrank_sketch::rng::{rng_from_seed, Rng};
use lowrank_sketch::sketch::{apply_sketch, sparse_random_sketch, SparseSketch};
use rand::Rng as _;

/// Central finite differences of `f` at `x` with step `h`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let fp = f(&p);
            p[i] = x[i] - h;
            let fm = f(&p);
            p[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

pub fn random_orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    loop {
        let q = orthonormal_columns(&DenseMatrix::random_normal(rows, cols, rng));
        if q.cols() == cols {
            return q;
        }
    }
}

/// `rows × cols` matrix with random singular vectors and singular values
/// whose consecutive ratios are all at least `ratio`.
pub fn spectrum_with_ratios(rows: usize, cols: usize, ratio: f64, rng: &mut Rng) -> DenseMatrix {
    let r = rows.min(cols);
    let u = random_orthonormal(rows, r, rng);
    let v = random_orthonormal(cols, r, rng);
    let mut sigma = vec![0.0; r];
    sigma[0] = 1.0 + rng.random::<f64>();
    for i in 1..r {
        sigma[i] = sigma[i - 1] / (ratio + rng.random::<f64>());
    }
    let mut us = u.clone();
    for row in 0..rows {
        for (x, s) in us.row_mut(row).iter_mut().zip(&sigma) {
            *x *= s;
        }
    }
    matmul(&us, &v.transpose()).unwrap()
}

fn min_gap_ratio(sigma: &[f64], upto: usize) -> f64 {
    sigma
        .windows(2)
        .take(upto)
        .map(|w| w[0] / w[1])
        .fold(f64::INFINITY, f64::min)
}

/// Random SCW instance whose two power-SVD stages both see consecutive
/// singular-value ratios of at least 1.25. Near-degenerate spectra make the
/// unrolled power iteration too sharp for finite differences.
pub fn well_conditioned_instance(
    n: usize,
    d: usize,
    m: usize,
    k: usize,
    rng: &mut Rng,
) -> (DenseMatrix, SparseSketch) {
    loop {
        let a = DenseMatrix::random_normal(n, d, rng);
        let s = sparse_random_sketch(m, n, rng.random()).unwrap();
        let sa = apply_sketch(&s, &a).unwrap();
        let svd = reference_svd(&sa).unwrap();
        if svd.rank() < m || min_gap_ratio(&svd.sigma, m) < 1.25 {
            continue;
        }
        let av = matmul(&a, &svd.v).unwrap();
        let svd2 = reference_svd(&av).unwrap();
        if min_gap_ratio(&svd2.sigma, k) < 1.25 {
            continue;
        }
        return (a, s);
    }
}

pub fn seeded(seed: u64) -> Rng {
    rng_from_seed(seed)
}
