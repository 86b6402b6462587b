use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{deflate, matvec, matvec_t, norm2, DenseMatrix, SvdFactors};
use crate::rng::{derive_seed, rng_from_seed, unit_vector};

/// Factors whose σ falls below this fraction of σ₁ end the extraction.
pub const STOP_TOL: f64 = 1e-12;
/// Divisor floor when turning `A·v` into `u = A·v / σ`.
pub const SIGMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerSvdConfig {
    /// Power iterations per singular triple.
    pub t_iters: usize,
    /// Number of triples to extract.
    pub m_factors: usize,
    /// Seed for the random starting vectors.
    pub init_seed: u64,
}

impl Default for PowerSvdConfig {
    fn default() -> Self {
        Self {
            t_iters: 100,
            m_factors: 1,
            init_seed: 0,
        }
    }
}

impl PowerSvdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_iters == 0 {
            return Err(Error::invalid("t_iters must be at least 1"));
        }
        if self.m_factors == 0 {
            return Err(Error::invalid("m_factors must be at least 1"));
        }
        Ok(())
    }
}

/// Starting vector for factor `index` of a power SVD seeded with `seed`.
pub(crate) fn initial_vector(seed: u64, index: usize, dim: usize) -> Vec<f64> {
    let mut rng = rng_from_seed(derive_seed(seed, index as u64));
    unit_vector(&mut rng, dim)
}

pub(crate) fn normalize(x: &[f64]) -> Vec<f64> {
    let n = norm2(x).max(f64::MIN_POSITIVE);
    x.iter().map(|v| v / n).collect()
}

pub(crate) fn divide(x: &[f64], s: f64) -> Vec<f64> {
    let c = s.max(SIGMA_FLOOR);
    x.iter().map(|v| v / c).collect()
}

/// Unassembled power-SVD triples.
#[derive(Debug, Clone, Default)]
pub(crate) struct PowerFactors {
    pub us: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    pub vs: Vec<Vec<f64>>,
}

pub(crate) fn power_factors(
    a: &DenseMatrix,
    factors: usize,
    t_iters: usize,
    seed: u64,
) -> PowerFactors {
    let mut out = PowerFactors::default();
    let mut residual = a.clone();
    for i in 0..factors {
        let mut v = initial_vector(seed, i, a.cols());
        for _ in 0..t_iters {
            let z = matvec(&residual, &v);
            let y = matvec_t(&residual, &z);
            v = normalize(&y);
        }
        let w = matvec(&residual, &v);
        let sigma = norm2(&w);
        let top = out.sigmas.first().copied().unwrap_or(sigma);
        if sigma == 0.0 || sigma < STOP_TOL * top {
            break;
        }
        let u = divide(&w, sigma);
        residual = deflate(&residual, sigma, &u, &v);
        out.us.push(u);
        out.sigmas.push(sigma);
        out.vs.push(v);
    }
    out
}

/// SVD by deflated power iteration: for each triple, `T` steps of
/// `v ← AᵢᵀAᵢv / ‖AᵢᵀAᵢv‖` from a seeded random start, then
/// `σ = ‖Aᵢv‖`, `u = Aᵢv/σ` and `Aᵢ₊₁ = Aᵢ − σuvᵀ`. Extraction stops early
/// once σ drops below `1e-12·σ₁`.
pub fn power_svd(a: &DenseMatrix, cfg: &PowerSvdConfig) -> Result<SvdFactors> {
    cfg.validate()?;
    if cfg.m_factors > a.rows().min(a.cols()) {
        return Err(Error::invalid(format!(
            "m_factors {} exceeds min dimension of {}x{}",
            cfg.m_factors,
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(Error::NonFinite("power_svd input"));
    }
    let f = power_factors(a, cfg.m_factors, cfg.t_iters, cfg.init_seed);
    let urefs: Vec<&[f64]> = f.us.iter().map(|c| c.as_slice()).collect();
    let vrefs: Vec<&[f64]> = f.vs.iter().map(|c| c.as_slice()).collect();
    Ok(SvdFactors {
        u: DenseMatrix::from_columns(&urefs, a.rows()),
        sigma: f.sigmas,
        v: DenseMatrix::from_columns(&vrefs, a.cols()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{matmul, reference_svd};

    fn cfg(t: usize, m: usize) -> PowerSvdConfig {
        PowerSvdConfig {
            t_iters: t,
            m_factors: m,
            init_seed: 17,
        }
    }

    #[test]
    fn diagonal_separated() {
        let svd = power_svd(&DenseMatrix::diag(&[4.0, 1.0]), &cfg(50, 2)).unwrap();
        assert!((svd.sigma[0] - 4.0).abs() < 1e-9);
        assert!((svd.sigma[1] - 1.0).abs() < 1e-9);
        assert!((svd.v[(0, 0)].abs() - 1.0).abs() < 1e-9);
        assert!((svd.v[(1, 1)].abs() - 1.0).abs() < 1e-9);
        assert!((svd.u[(0, 0)].abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rank_one_truncates() {
        let a = matmul(
            &DenseMatrix::column_vector(vec![1.0, 2.0, -1.0]),
            &DenseMatrix::from_rows(&[&[3.0, 0.5, 1.0]]),
        )
        .unwrap();
        let svd = power_svd(&a, &cfg(30, 2)).unwrap();
        assert_eq!(svd.rank(), 1);
        let r = reference_svd(&a).unwrap();
        assert!((svd.sigma[0] - r.sigma[0]).abs() < 1e-12 * r.sigma[0]);
    }

    #[test]
    fn zero_matrix_is_rank_zero() {
        let svd = power_svd(&DenseMatrix::zeros(3, 4), &cfg(5, 3)).unwrap();
        assert_eq!(svd.rank(), 0);
    }

    #[test]
    fn config_errors() {
        let a = DenseMatrix::identity(3);
        assert!(power_svd(&a, &cfg(0, 1)).is_err());
        assert!(power_svd(&a, &cfg(5, 0)).is_err());
        assert!(power_svd(&a, &cfg(5, 4)).is_err());
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = DenseMatrix::from_rows(&[&[2.0, 1.0, 0.0], &[0.0, 1.0, 3.0]]);
        let x = power_svd(&a, &cfg(20, 2)).unwrap();
        let y = power_svd(&a, &cfg(20, 2)).unwrap();
        assert_eq!(x, y);
    }
}
