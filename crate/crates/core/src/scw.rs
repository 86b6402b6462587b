//! Sketch-based rank-k approximation: SVD of `S·A`, then the best rank-k
//! approximation of `A·V` mapped back through `Vᵀ`.

use crate::error::{Error, Result};
use crate::linalg::{best_rank_k, frobenius_norm, matmul, matmul_nt, reference_svd, DenseMatrix};
use crate::sketch::{concat_sketches, SketchOperator, SparseSketch};

#[derive(Debug, Clone)]
pub struct ScwOutput {
    /// `[A·V]_k · Vᵀ`, an `n × d` matrix of rank at most `k`.
    pub approx: DenseMatrix,
    /// Right singular vectors of `S·A` (`d × r`).
    pub v_basis: DenseMatrix,
    /// `‖A − approx‖_F`.
    pub loss: f64,
}

pub fn scw_approximate<S: SketchOperator + ?Sized>(
    a: &DenseMatrix,
    s: &S,
    k: usize,
) -> Result<ScwOutput> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if s.sketch_cols() != a.rows() {
        return Err(Error::DimensionMismatch {
            op: "scw_approximate",
            left: (s.sketch_rows(), s.sketch_cols()),
            right: a.shape(),
        });
    }
    let sa = s.apply(a)?;
    let svd = reference_svd(&sa)?;
    if svd.rank() == 0 {
        return Ok(ScwOutput {
            approx: DenseMatrix::zeros(a.rows(), a.cols()),
            v_basis: svd.v,
            loss: frobenius_norm(a),
        });
    }
    let v = svd.v;
    let av = matmul(a, &v)?;
    let av_k = best_rank_k(&av, k)?;
    let approx = matmul_nt(&av_k, &v)?;
    let loss = frobenius_norm(&approx.sub(a)?);
    Ok(ScwOutput {
        approx,
        v_basis: v,
        loss,
    })
}

/// `‖A − SCW(S, A)‖_F`.
pub fn scw_loss<S: SketchOperator + ?Sized>(a: &DenseMatrix, s: &S, k: usize) -> Result<f64> {
    Ok(scw_approximate(a, s, k)?.loss)
}

/// Losses of the stacked sketch `[s1; s2]` and of `s1` alone. The first is
/// never larger than the second (up to rounding), since the row space of
/// `[s1; s2]·A` contains that of `s1·A`.
pub fn check_concat_dominance(
    a: &DenseMatrix,
    s1: &SparseSketch,
    s2: &SparseSketch,
    k: usize,
) -> Result<(f64, f64)> {
    let star = concat_sketches(s1, s2)?;
    Ok((scw_loss(a, &star, k)?, scw_loss(a, s1, k)?))
}
