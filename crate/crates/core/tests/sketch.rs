use lowrank_sketch::linalg::{matmul, DenseMatrix};
use lowrank_sketch::rng::rng_from_seed;
use lowrank_sketch::sketch::io::{load_sketch, read_sketch, save_sketch, write_sketch};
use lowrank_sketch::sketch::{
    apply_sketch, concat_sketches, densify, sparse_random_sketch, SparseSketch,
};
use proptest::prelude::*;

fn bits(m: &DenseMatrix) -> Vec<u64> {
    m.as_slice().iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn apply_equals_densified_matmul(m in 1usize..6, n in 1usize..12, d in 1usize..7, seed in any::<u64>()) {
        let s = sparse_random_sketch(m, n, seed).unwrap();
        let a = DenseMatrix::random_normal(n, d, &mut rng_from_seed(seed ^ 1));
        prop_assert_eq!(bits(&apply_sketch(&s, &a).unwrap()), bits(&matmul(&densify(&s), &a).unwrap()));
    }

    #[test]
    fn apply_is_linear(m in 1usize..6, n in 1usize..12, d in 1usize..7, seed in any::<u64>(), alpha in -3.0f64..3.0) {
        let s = sparse_random_sketch(m, n, seed).unwrap();
        let mut rng = rng_from_seed(seed ^ 2);
        let a = DenseMatrix::random_normal(n, d, &mut rng);
        let b = DenseMatrix::random_normal(n, d, &mut rng);
        let lhs = apply_sketch(&s, &a.scaled(alpha).add(&b).unwrap()).unwrap();
        let rhs = apply_sketch(&s, &a).unwrap().scaled(alpha).add(&apply_sketch(&s, &b).unwrap()).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
    }

    #[test]
    fn random_sketch_structure(m in 1usize..8, n in 1usize..40, seed in any::<u64>()) {
        let s = sparse_random_sketch(m, n, seed).unwrap();
        prop_assert_eq!(s.nnz(), n);
        prop_assert!(s.row_of().iter().all(|&r| r < m));
        prop_assert!(s.values().iter().all(|&v| v == 1.0 || v == -1.0));
        prop_assert!(s.trainable_mask().iter().all(|&t| t));
        let dense = densify(&s);
        for j in 0..n {
            prop_assert_eq!(dense.column(j).iter().filter(|x| **x != 0.0).count(), 1);
        }
        prop_assert_eq!(s, sparse_random_sketch(m, n, seed).unwrap());
    }

    #[test]
    fn concat_stacks_densified(m1 in 1usize..5, m2 in 1usize..5, n in 1usize..10, seed in any::<u64>()) {
        let s1 = sparse_random_sketch(m1, n, seed).unwrap();
        let mut s2 = sparse_random_sketch(m2, n, seed.wrapping_add(1)).unwrap();
        s2.set_trainable(false);
        let c = concat_sketches(&s1, &s2).unwrap();
        prop_assert_eq!(c.m(), m1 + m2);
        prop_assert_eq!(densify(&c), densify(&s1).vstack(&densify(&s2)).unwrap());
        let mask = c.trainable_mask();
        prop_assert!(mask[..n].iter().all(|&t| t) && mask[n..].iter().all(|&t| !t));
    }

    #[test]
    fn skch_round_trip(m in 1usize..6, n in 1usize..15, seed in any::<u64>()) {
        let mut s1 = sparse_random_sketch(m, n, seed).unwrap();
        let vals: Vec<f64> = s1.values().iter().enumerate().map(|(i, v)| v * (1.0 + i as f64 / 7.0)).collect();
        s1.set_values(&vals).unwrap();
        let mut s2 = sparse_random_sketch(2, n, !seed).unwrap();
        s2.set_trainable(false);
        let s = concat_sketches(&s1, &s2).unwrap();
        let mut buf = Vec::new();
        write_sketch(&mut buf, &s).unwrap();
        let back = read_sketch(buf.as_slice()).unwrap();
        let vb: Vec<u64> = back.values().iter().map(|x| x.to_bits()).collect();
        let vs: Vec<u64> = s.values().iter().map(|x| x.to_bits()).collect();
        prop_assert_eq!(vb, vs);
        prop_assert_eq!(back, s);
    }
}

#[test]
fn small_worked_examples() {
    let s = SparseSketch::single(1, vec![0, 0], vec![1.0, -1.0]).unwrap();
    let a = DenseMatrix::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
    assert_eq!(
        apply_sketch(&s, &a).unwrap(),
        DenseMatrix::from_rows(&[&[-2.0, -2.0]])
    );
    let id = SparseSketch::identity(2);
    assert_eq!(apply_sketch(&id, &a).unwrap(), a);
    let s = SparseSketch::single(2, vec![0, 1], vec![1.0, -1.0]).unwrap();
    assert_eq!(
        densify(&s),
        DenseMatrix::from_rows(&[&[1.0, 0.0], &[0.0, -1.0]])
    );
    let s1 = sparse_random_sketch(1, 50, 3).unwrap();
    assert!(s1.row_of().iter().all(|&r| r == 0));
}

#[test]
fn concat_with_empty_is_identity() {
    let s = sparse_random_sketch(3, 7, 1).unwrap();
    let c = concat_sketches(&s, &SparseSketch::empty(7)).unwrap();
    assert_eq!(densify(&c), densify(&s));
    assert_eq!(c.m(), 3);
    assert!(concat_sketches(&s, &SparseSketch::empty(6)).is_err());
}

#[test]
fn dimension_errors() {
    let s = sparse_random_sketch(2, 5, 0).unwrap();
    assert!(apply_sketch(&s, &DenseMatrix::zeros(4, 3)).is_err());
    assert!(sparse_random_sketch(0, 5, 0).is_err());
    assert!(sparse_random_sketch(2, 0, 0).is_err());
}

#[test]
fn skch_file_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.skch");
    let s = sparse_random_sketch(3, 9, 4).unwrap();
    save_sketch(&path, &s).unwrap();
    assert_eq!(load_sketch(&path).unwrap(), s);
    let bytes = std::fs::read(&path).unwrap();
    assert!(read_sketch(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(read_sketch(extra.as_slice()).is_err());
    let mut magic = bytes.clone();
    magic[0] = b'Q';
    assert!(read_sketch(magic.as_slice()).is_err());
    let mut mask = bytes;
    let last = mask.len() - 1;
    mask[last] = 7;
    assert!(read_sketch(mask.as_slice()).is_err());
}
