//! Property checks run by the `verify` command.

use std::fmt;

use rand::Rng as _;

use crate::config::VerifyConfig;
use crate::diffsvd::{scw_loss_and_grad, scw_power_loss, PowerSvdConfig};
use crate::error::Result;
use crate::linalg::{matmul, reference_svd, DenseMatrix};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scw::{check_concat_dominance, scw_loss};
use crate::sketch::{apply_sketch, sparse_random_sketch, SparseSketch};
use crate::theory::{
    generalization_gaps, random_profiles, verify_stable_rank_lemma, RobustnessParams,
    SpectralProfile,
};

pub const DOMINANCE_SLACK: f64 = 1e-9;
pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
pub const FD_ABS_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Random small instances: `loss([S₁; S₂]) ≤ loss(S₁) + 1e-9`.
pub fn dominance_check(trials: usize, seed: u64, broken_concat: bool) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut first_failure = None;
    for t in 0..trials {
        let n = rng.random_range(1..=12);
        let d = rng.random_range(1..=12);
        let m1 = rng.random_range(1..=4);
        let m2 = rng.random_range(1..=4);
        let k = rng.random_range(1..=3);
        let a = DenseMatrix::random_normal(n, d, &mut rng);
        let s1 = sparse_random_sketch(m1, n, rng.random())?;
        let s2 = sparse_random_sketch(m2, n, rng.random())?;
        let (star, single) = if broken_concat {
            (scw_loss(&a, &s2, k)?, scw_loss(&a, &s1, k)?)
        } else {
            check_concat_dominance(&a, &s1, &s2, k)?
        };
        let excess = star - single;
        worst = worst.max(excess);
        if excess > DOMINANCE_SLACK {
            violations += 1;
            first_failure.get_or_insert(format!(
                "trial {t}: n={n} d={d} m1={m1} m2={m2} k={k} loss*={star:.6e} loss1={single:.6e}"
            ));
        }
    }
    let mut detail = format!("{trials} trials, {violations} violations, max excess {worst:.3e}");
    if let Some(f) = first_failure {
        detail.push_str("; first failure ");
        detail.push_str(&f);
    }
    Ok(CheckResult {
        name: "dominance",
        passed: violations == 0,
        detail,
    })
}

fn min_gap_ratio(sigma: &[f64], upto: usize) -> f64 {
    sigma
        .windows(2)
        .take(upto)
        .map(|w| w[0] / w[1])
        .fold(f64::INFINITY, f64::min)
}

/// Random `n×d` instance whose sketch has full row rank and whose two power
/// SVD stages see consecutive singular-value ratios of at least 1.25.
pub fn gapped_instance(
    n: usize,
    d: usize,
    m: usize,
    k: usize,
    rng: &mut Rng,
) -> Result<(DenseMatrix, SparseSketch)> {
    loop {
        let a = DenseMatrix::random_normal(n, d, rng);
        let s = sparse_random_sketch(m, n, rng.random())?;
        let svd = reference_svd(&apply_sketch(&s, &a)?)?;
        if svd.rank() < m || min_gap_ratio(&svd.sigma, m) < 1.25 {
            continue;
        }
        let svd2 = reference_svd(&matmul(&a, &svd.v)?)?;
        if min_gap_ratio(&svd2.sigma, k) < 1.25 {
            continue;
        }
        return Ok((a, s));
    }
}

/// Reverse-mode gradients against central differences on `n=8, d=6, m=3,
/// k=2, T=60` instances.
pub fn gradient_check(instances: usize, seed: u64) -> Result<CheckResult> {
    let mut rng = rng_from_seed(seed);
    let mut worst_ratio: f64 = 0.0;
    let mut failure = None;
    for inst in 0..instances {
        let (a, s) = gapped_instance(8, 6, 3, 2, &mut rng)?;
        let cfg = PowerSvdConfig {
            t_iters: 60,
            m_factors: 1,
            init_seed: derive_seed(seed, inst as u64),
        };
        let (_, grad) = scw_loss_and_grad(&a, &s, 2, &cfg)?;
        let x0 = s.values();
        let mut probe = s.clone();
        for i in 0..x0.len() {
            let mut x = x0.clone();
            x[i] = x0[i] + FD_STEP;
            probe.set_values(&x)?;
            let fp = scw_power_loss(&a, &probe, 2, &cfg)?;
            x[i] = x0[i] - FD_STEP;
            probe.set_values(&x)?;
            let fm = scw_power_loss(&a, &probe, 2, &cfg)?;
            let fd = (fp - fm) / (2.0 * FD_STEP);
            let tol = (FD_REL_TOL * fd.abs()).max(FD_ABS_TOL);
            let ratio = (grad[i] - fd).abs() / tol;
            worst_ratio = worst_ratio.max(ratio);
            if ratio > 1.0 && failure.is_none() {
                failure = Some(format!("instance {inst} coord {i}: ad {} fd {fd}", grad[i]));
            }
        }
    }
    let mut detail = format!("{instances} instances, worst error/tolerance {worst_ratio:.3}");
    if let Some(f) = &failure {
        detail.push_str("; ");
        detail.push_str(f);
    }
    Ok(CheckResult {
        name: "gradient",
        passed: failure.is_none(),
        detail,
    })
}

/// `min E[simplified]·r′ ≥ 1/20` over random profiles, plus the flat
/// `d = 10` spectrum against its exact mean `0.1`.
pub fn stable_rank_check(profiles: usize, samples: usize, seed: u64) -> Result<CheckResult> {
    let family = random_profiles(profiles, derive_seed(seed, 0))?;
    let check = verify_stable_rank_lemma(&family, samples, derive_seed(seed, 1))?;
    let flat = SpectralProfile::diagonal(vec![1.0; 10])?;
    let flat_mean = verify_stable_rank_lemma(&[flat], samples, derive_seed(seed, 2))?.profiles[0]
        .mean_simplified;
    let flat_ok = (flat_mean - 0.1).abs() <= 0.02;
    Ok(CheckResult {
        name: "stable_rank",
        passed: check.holds() && flat_ok,
        detail: format!(
            "{profiles} profiles x {samples} samples, min product {:.4} (bound {:.4}); flat d=10 mean {flat_mean:.4} (exact 0.1)",
            check.min_product, check.bound_constant
        ),
    })
}

/// Mean `|gap|` of the robust minimizer must strictly decrease in `N`.
pub fn generalization_check(
    ns: &[usize],
    splits: usize,
    params: &RobustnessParams,
    seed: u64,
) -> Result<CheckResult> {
    let gaps = generalization_gaps(ns, splits, params, seed)?;
    let passed = gaps.windows(2).all(|w| w[1].1 < w[0].1);
    let series: Vec<String> = gaps.iter().map(|(n, g)| format!("N={n}: {g:.5}")).collect();
    Ok(CheckResult {
        name: "generalization",
        passed,
        detail: format!("{splits} splits, mean |gap| {}", series.join(", ")),
    })
}

/// Runs every check in a fixed order.
pub fn run_all(
    cfg: &VerifyConfig,
    params: &RobustnessParams,
    seed: u64,
) -> Result<Vec<CheckResult>> {
    Ok(vec![
        dominance_check(
            cfg.dominance_trials,
            derive_seed(seed, 1),
            cfg.inject_broken_concat,
        )?,
        gradient_check(cfg.gradient_instances, derive_seed(seed, 2))?,
        stable_rank_check(
            cfg.stable_rank_profiles,
            cfg.stable_rank_samples,
            derive_seed(seed, 3),
        )?,
        generalization_check(
            &cfg.generalization_ns,
            cfg.generalization_splits,
            params,
            derive_seed(seed, 4),
        )?,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dominance_and_negative_control() {
        assert!(dominance_check(30, 1, false).unwrap().passed);
        let broken = dominance_check(60, 1, true).unwrap();
        assert!(!broken.passed);
        assert!(broken.detail.contains("first failure"));
        assert!(broken.to_string().starts_with("FAIL dominance"));
    }

    #[test]
    fn small_gradient_check() {
        let r = gradient_check(2, 5).unwrap();
        assert!(r.passed, "{r}");
    }
}
