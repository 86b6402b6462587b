//! Differentiable SCW loss.
//!
//! The forward pass runs the SCW pipeline with the power-iteration SVD in
//! place of the reference SVD, recording every primitive on a [`Tape`]:
//!
//! ```text
//! S·A → power SVD (min(m, d) triples) → V → A·V → power SVD (k triples)
//!     → [A·V]_k · Vᵀ → ‖A − [A·V]_k · Vᵀ‖_F²
//! ```
//!
//! The sketch's stored values are the only leaf; [`Tape::backward`] returns
//! the gradient with respect to them. Gradients flow through every power
//! step, normalization, and deflation residual (no stop-gradient anywhere),
//! so the result is the exact derivative of the unrolled computation,
//! whether or not the iterations have converged.
//!
//! The loss is the squared Frobenius norm, which stays smooth at zero.

mod power;
mod tape;

use std::sync::Arc;

pub use power::{power_svd, PowerSvdConfig, SIGMA_FLOOR, STOP_TOL};
pub use tape::{NodeId, Tape};

use crate::error::{Error, Result};
use crate::linalg::{matmul, matmul_nt, reconstruct, squared_frobenius_diff, DenseMatrix};
use crate::rng::derive_seed;
use crate::sketch::{apply_sketch, SparseSketch};
use power::{initial_vector, power_factors, PowerFactors};

/// Seeds of the two power SVDs in one forward pass.
fn stage_seeds(init_seed: u64) -> (u64, u64) {
    (derive_seed(init_seed, 0), derive_seed(init_seed, 1))
}

fn check_shapes(a: &DenseMatrix, s: &SparseSketch, k: usize, cfg: &PowerSvdConfig) -> Result<()> {
    if s.n() != a.rows() {
        return Err(Error::DimensionMismatch {
            op: "scw_forward_with_tape",
            left: (s.m(), s.n()),
            right: a.shape(),
        });
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if cfg.t_iters == 0 {
        return Err(Error::invalid("t_iters must be at least 1"));
    }
    Ok(())
}

/// Records the power SVD of node `a` on the tape; mirrors `power_factors`.
fn record_power_svd(
    tape: &mut Tape,
    a: NodeId,
    factors: usize,
    t_iters: usize,
    seed: u64,
) -> (Vec<NodeId>, Vec<NodeId>, Vec<NodeId>) {
    let (mut us, mut sigmas, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    let mut residual = a;
    let cols = tape.value(a).cols();
    let mut top = None;
    for i in 0..factors {
        let mut v = tape.constant(DenseMatrix::column_vector(initial_vector(seed, i, cols)));
        for _ in 0..t_iters {
            let z = tape.matvec(residual, v);
            let y = tape.matvec_t(residual, z);
            v = tape.normalize(y);
        }
        let w = tape.matvec(residual, v);
        let sigma = tape.norm(w);
        let sv = tape.value(sigma).as_slice()[0];
        let t = *top.get_or_insert(sv);
        if sv == 0.0 || sv < STOP_TOL * t {
            break;
        }
        let u = tape.div_scalar(w, sigma);
        residual = tape.deflate(residual, sigma, u, v);
        us.push(u);
        sigmas.push(sigma);
        vs.push(v);
    }
    (us, sigmas, vs)
}

/// Runs the differentiable pipeline forward, returning the squared loss and
/// the tape. `cfg.m_factors` is not used: the first SVD extracts
/// `min(m, d)` triples and the second `min(k, r, n)`.
pub fn scw_forward_with_tape(
    a: &DenseMatrix,
    s: &SparseSketch,
    k: usize,
    cfg: &PowerSvdConfig,
) -> Result<(f64, Tape)> {
    check_shapes(a, s, k, cfg)?;
    let (seed_sa, seed_av) = stage_seeds(cfg.init_seed);
    let a_arc = Arc::new(a.clone());
    let (n, d) = a.shape();

    let mut tape = Tape::new();
    let p = tape.param(s);
    let sa = tape.apply_sketch(p, s, a_arc.clone());
    let (_, _, vs) = record_power_svd(&mut tape, sa, s.m().min(d), cfg.t_iters, seed_sa);

    let approx = if vs.is_empty() {
        tape.constant(DenseMatrix::zeros(n, d))
    } else {
        let r = vs.len();
        let v = tape.stack_columns(vs, d);
        let av = tape.matmul_const(a_arc.clone(), v);
        let (us2, sig2, ws2) =
            record_power_svd(&mut tape, av, k.min(r).min(n), cfg.t_iters, seed_av);
        if us2.is_empty() {
            tape.constant(DenseMatrix::zeros(n, d))
        } else {
            let rk = tape.reconstruct(us2, sig2, ws2, n, r);
            tape.matmul_nt(rk, v)
        }
    };
    let loss = tape.squared_frob_diff(a_arc, approx);
    tape.set_output(loss);
    let value = tape.output_value().expect("output set");
    Ok((value, tape))
}

/// `∂loss/∂values` of a recorded forward pass.
pub fn backward(tape: &Tape) -> Vec<f64> {
    tape.backward()
}

/// Loss and gradient in one call.
pub fn scw_loss_and_grad(
    a: &DenseMatrix,
    s: &SparseSketch,
    k: usize,
    cfg: &PowerSvdConfig,
) -> Result<(f64, Vec<f64>)> {
    let (loss, tape) = scw_forward_with_tape(a, s, k, cfg)?;
    Ok((loss, tape.backward()))
}

/// The same pipeline evaluated eagerly, without a tape. Performs the same
/// floating-point operations in the same order as
/// [`scw_forward_with_tape`], so the two agree bitwise.
pub fn scw_power_loss(
    a: &DenseMatrix,
    s: &SparseSketch,
    k: usize,
    cfg: &PowerSvdConfig,
) -> Result<f64> {
    check_shapes(a, s, k, cfg)?;
    let (seed_sa, seed_av) = stage_seeds(cfg.init_seed);
    let (n, d) = a.shape();
    let sa = apply_sketch(s, a)?;
    let f1 = power_factors(&sa, s.m().min(d), cfg.t_iters, seed_sa);
    let approx = if f1.vs.is_empty() {
        DenseMatrix::zeros(n, d)
    } else {
        let r = f1.vs.len();
        let refs: Vec<&[f64]> = f1.vs.iter().map(|c| c.as_slice()).collect();
        let v = DenseMatrix::from_columns(&refs, d);
        let av = matmul(a, &v)?;
        let f2: PowerFactors = power_factors(&av, k.min(r).min(n), cfg.t_iters, seed_av);
        if f2.us.is_empty() {
            DenseMatrix::zeros(n, d)
        } else {
            let rk = reconstruct(&f2.us, &f2.sigmas, &f2.vs, n, r);
            matmul_nt(&rk, &v)?
        }
    };
    Ok(squared_frobenius_diff(a, &approx))
}
