//! Reference SVD by one-sided (Hestenes) Jacobi rotations.
//!
//! This is the trusted, non-differentiable decomposition. It shares no code
//! path with the power-iteration SVD in [`crate::diffsvd`], which makes it
//! usable as an oracle for that module.

use super::matrix::{dot, matmul, DenseMatrix};
use crate::error::{Error, Result};

/// Singular values below `RANK_TOL · σ₁` are treated as zero.
pub const RANK_TOL: f64 = 1e-10;

const MAX_SWEEPS: usize = 80;

/// Compact SVD `u · diag(sigma) · vᵀ` with `sigma` strictly positive and
/// nonincreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: DenseMatrix,
    pub sigma: Vec<f64>,
    pub v: DenseMatrix,
}

impl SvdFactors {
    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            u: DenseMatrix::zeros(rows, 0),
            sigma: Vec::new(),
            v: DenseMatrix::zeros(cols, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    /// Keeps the leading `k` triples.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        Self {
            u: self.u.leading_columns(k),
            sigma: self.sigma[..k].to_vec(),
            v: self.v.leading_columns(k),
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for r in 0..us.rows() {
            for (x, s) in us.row_mut(r).iter_mut().zip(&self.sigma) {
                *x *= s;
            }
        }
        matmul(&us, &self.v.transpose()).expect("factor shapes agree")
    }
}

/// Compact SVD of `a`.
pub fn reference_svd(a: &DenseMatrix) -> Result<SvdFactors> {
    if !a.is_finite() {
        return Err(Error::NonFinite("reference_svd input"));
    }
    let (rows, cols) = a.shape();
    if rows == 0 || cols == 0 {
        return Ok(SvdFactors::empty(rows, cols));
    }
    // Jacobi orthogonalizes columns, so work on the orientation with at
    // least as many rows as columns.
    let wide = rows < cols;
    let work = if wide { a.transpose() } else { a.clone() };
    let (left_cols, sigma, right_cols) = hestenes(&work);
    let (u_cols, v_cols) = if wide {
        (right_cols, left_cols)
    } else {
        (left_cols, right_cols)
    };

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let top = order.first().map_or(0.0, |&i| sigma[i]);
    if top == 0.0 {
        return Ok(SvdFactors::empty(rows, cols));
    }
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| sigma[i] > RANK_TOL * top)
        .collect();

    let mut us = Vec::with_capacity(kept.len());
    let mut vs = Vec::with_capacity(kept.len());
    let mut sig = Vec::with_capacity(kept.len());
    for &i in &kept {
        let mut u = u_cols[i].clone();
        let mut v = v_cols[i].clone();
        // Pin the sign: largest-magnitude entry of u is positive.
        let pivot = u
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (j, &x)| {
                if x.abs() > best.1 {
                    (j, x.abs())
                } else {
                    best
                }
            })
            .0;
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|x| *x = -*x);
            v.iter_mut().for_each(|x| *x = -*x);
        }
        us.push(u);
        vs.push(v);
        sig.push(sigma[i]);
    }
    let u_refs: Vec<&[f64]> = us.iter().map(|c| c.as_slice()).collect();
    let v_refs: Vec<&[f64]> = vs.iter().map(|c| c.as_slice()).collect();
    Ok(SvdFactors {
        u: DenseMatrix::from_columns(&u_refs, rows),
        sigma: sig,
        v: DenseMatrix::from_columns(&v_refs, cols),
    })
}

/// One-sided Jacobi on a tall (or square) matrix. Returns unit left columns,
/// column norms, and the accumulated right rotation columns, all unsorted.
fn hestenes(a: &DenseMatrix) -> (Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>) {
    let n = a.cols();
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut w, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }

    let sigma: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    for (col, &s) in w.iter_mut().zip(&sigma) {
        if s > 0.0 {
            col.iter_mut().for_each(|x| *x /= s);
        }
    }
    (w, sigma, v)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let cp = &mut head[p];
    let cq = &mut tail[0];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Best rank-`k` approximation of `a` in Frobenius norm (truncated SVD).
pub fn best_rank_k(a: &DenseMatrix, k: usize) -> Result<DenseMatrix> {
    if k == 0 {
        return Err(Error::invalid("best_rank_k requires k >= 1"));
    }
    let svd = reference_svd(a)?;
    if svd.rank() == 0 {
        return Ok(DenseMatrix::zeros(a.rows(), a.cols()));
    }
    Ok(svd.truncated(k).reconstruct())
}

/// Numerical rank under [`RANK_TOL`].
pub fn numerical_rank(a: &DenseMatrix) -> Result<usize> {
    Ok(reference_svd(a)?.rank())
}
