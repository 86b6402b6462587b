//! Dense matrices, the reference SVD, and matrix file formats.

pub mod io;
mod matrix;
mod svd;

pub use matrix::{
    deflate, dot, frobenius_norm, matmul, matmul_nt, matmul_tn, matvec, matvec_t, norm2,
    reconstruct, squared_frobenius_diff, DenseMatrix,
};
pub use svd::{best_rank_k, numerical_rank, reference_svd, SvdFactors, RANK_TOL};

/// Orthonormalizes the columns of `a` with modified Gram-Schmidt, dropping
/// columns that become numerically zero.
pub fn orthonormal_columns(a: &DenseMatrix) -> DenseMatrix {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.cols() {
        let mut c = a.column(j);
        for b in &basis {
            let p = dot(&c, b);
            c.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = norm2(&c);
        if n > 1e-12 {
            c.iter_mut().for_each(|x| *x /= n);
            basis.push(c);
        }
    }
    let refs: Vec<&[f64]> = basis.iter().map(|c| c.as_slice()).collect();
    DenseMatrix::from_columns(&refs, a.rows())
}
