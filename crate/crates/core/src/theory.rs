//! Single-vector (m = 1) sketch objectives in spectral coordinates.
//!
//! A matrix is represented by its [`SpectralProfile`] `(λ, U)`. For a unit
//! vector `s` with coordinates `cᵢ = ⟨s, Uᵢ⟩` the two objectives are
//!
//! ```text
//! full(s)       = Σ λᵢ⁴ cᵢ² / Σ λᵢ² cᵢ²
//! simplified(s) = c₁²       / Σ λᵢ² cᵢ²
//! ```
//!
//! Both are undefined when the shared denominator vanishes; directions with
//! small denominators are what the robustness machinery guards against.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{frobenius_norm, reference_svd, DenseMatrix};
use crate::rng::{derive_seed, rng_from_seed, standard_normal, unit_vector};

/// Denominators below this are treated as degenerate.
pub const DEGENERATE_TOL: f64 = 1e-15;
/// Constant the stable-rank product is checked against.
pub const STABLE_RANK_BOUND: f64 = 1.0 / 20.0;
/// Upper bound on the number of points `discretize_sphere` returns.
pub const GRID_POINT_CAP: usize = 10_000_000;

const MC_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralProfile {
    sigma: Vec<f64>,
    u_basis: DenseMatrix,
}

impl SpectralProfile {
    /// Validated profile: `1 = λ₁ ≥ λ₂ ≥ … > 0` and orthonormal columns.
    pub fn new(sigma: Vec<f64>, u_basis: DenseMatrix) -> Result<Self> {
        if sigma.is_empty() || (sigma[0] - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("profile needs λ₁ = 1"));
        }
        if sigma.iter().any(|&l| l.is_nan() || l <= 0.0) {
            return Err(Error::invalid("profile values must be positive"));
        }
        Self::unnormalized(sigma, u_basis)
    }

    /// Like [`SpectralProfile::new`] but allows `λ₁ ≠ 1` and zero values.
    pub fn unnormalized(sigma: Vec<f64>, u_basis: DenseMatrix) -> Result<Self> {
        if sigma.len() != u_basis.cols() {
            return Err(Error::DimensionMismatch {
                op: "SpectralProfile",
                left: (sigma.len(), 1),
                right: u_basis.shape(),
            });
        }
        if sigma.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::invalid("profile values must be finite and >= 0"));
        }
        if sigma.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::invalid("profile values must be nonincreasing"));
        }
        let cols = u_basis.cols();
        for i in 0..cols {
            for j in 0..=i {
                let dot: f64 = (0..u_basis.rows())
                    .map(|r| u_basis[(r, i)] * u_basis[(r, j)])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-8 {
                    return Err(Error::invalid("profile basis is not orthonormal"));
                }
            }
        }
        Ok(Self { sigma, u_basis })
    }

    /// Profile with the standard basis as `U`.
    pub fn diagonal(sigma: Vec<f64>) -> Result<Self> {
        let d = sigma.len();
        Self::new(sigma, DenseMatrix::identity(d))
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn u_basis(&self) -> &DenseMatrix {
        &self.u_basis
    }

    /// Ambient dimension of `s`.
    pub fn dim(&self) -> usize {
        self.u_basis.rows()
    }

    /// `‖λ‖² / λ₁²`.
    pub fn stable_rank(&self) -> f64 {
        let top = self.sigma[0] * self.sigma[0];
        self.sigma.iter().map(|l| l * l).sum::<f64>() / top
    }

    fn coords(&self, s: &[f64]) -> Vec<f64> {
        (0..self.u_basis.cols())
            .map(|j| {
                s.iter()
                    .enumerate()
                    .map(|(r, x)| x * self.u_basis[(r, j)])
                    .sum()
            })
            .collect()
    }

    /// `Σ λᵢ² ⟨s,Uᵢ⟩²`.
    pub fn denominator(&self, s: &[f64]) -> f64 {
        denominator_of(&self.sigma, &self.coords(s))
    }
}

fn denominator_of(sigma: &[f64], c: &[f64]) -> f64 {
    sigma.iter().zip(c).map(|(l, x)| l * l * x * x).sum()
}

fn full_of(sigma: &[f64], c: &[f64]) -> Result<f64> {
    let den = denominator_of(sigma, c);
    if den < DEGENERATE_TOL {
        return Err(Error::DegenerateDirection(den));
    }
    let num: f64 = sigma.iter().zip(c).map(|(l, x)| l.powi(4) * x * x).sum();
    Ok(num / den)
}

fn simplified_of(sigma: &[f64], c: &[f64]) -> Result<f64> {
    let den = denominator_of(sigma, c);
    if den < DEGENERATE_TOL {
        return Err(Error::DegenerateDirection(den));
    }
    Ok(c[0] * c[0] / den)
}

/// `‖A‖_F² / σ₁²`.
pub fn stable_rank(a: &DenseMatrix) -> Result<f64> {
    let top = reference_svd(a)?
        .sigma
        .first()
        .copied()
        .ok_or(Error::ZeroMatrix("stable_rank"))?;
    let f = frobenius_norm(a);
    Ok(f * f / (top * top))
}

fn check_unit(s: &[f64], profile: &SpectralProfile) -> Result<()> {
    if s.len() != profile.dim() {
        return Err(Error::DimensionMismatch {
            op: "objective",
            left: (s.len(), 1),
            right: profile.u_basis.shape(),
        });
    }
    let norm = s.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "s must be a unit vector, has norm {norm}"
        )));
    }
    Ok(())
}

pub fn full_objective(s: &[f64], profile: &SpectralProfile) -> Result<f64> {
    check_unit(s, profile)?;
    full_of(&profile.sigma, &profile.coords(s))
}

pub fn simplified_objective(s: &[f64], profile: &SpectralProfile) -> Result<f64> {
    check_unit(s, profile)?;
    simplified_of(&profile.sigma, &profile.coords(s))
}

pub fn random_unit_vector(d: usize, seed: u64) -> Vec<f64> {
    unit_vector(&mut rng_from_seed(seed), d)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEstimate {
    pub dim: usize,
    pub stable_rank: f64,
    pub mean_simplified: f64,
    pub mean_full: f64,
    /// `mean_simplified × stable_rank`.
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StableRankCheck {
    pub profiles: Vec<ProfileEstimate>,
    /// Minimum of `product` over profiles.
    pub min_product: f64,
    pub bound_constant: f64,
}

impl StableRankCheck {
    pub fn holds(&self) -> bool {
        self.min_product >= self.bound_constant
    }
}

/// Monte Carlo means of both objectives for a uniformly random unit `s`.
///
/// `Uᵀs` is itself uniform on the sphere when `U` is square, so the
/// coordinates are sampled directly. Degenerate draws (probability zero)
/// are skipped.
fn estimate(profile: &SpectralProfile, samples: usize, seed: u64) -> ProfileEstimate {
    let d = profile.sigma.len();
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64, usize)> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = rng_from_seed(derive_seed(seed, ci as u64));
            let count = MC_CHUNK.min(samples - ci * MC_CHUNK);
            let (mut simp, mut full, mut used) = (0.0, 0.0, 0);
            for _ in 0..count {
                let c = unit_vector(&mut rng, d);
                if let (Ok(a), Ok(b)) = (
                    simplified_of(&profile.sigma, &c),
                    full_of(&profile.sigma, &c),
                ) {
                    simp += a;
                    full += b;
                    used += 1;
                }
            }
            (simp, full, used)
        })
        .collect();
    let (simp, full, used) = partial.iter().fold((0.0, 0.0, 0), |acc, p| {
        (acc.0 + p.0, acc.1 + p.1, acc.2 + p.2)
    });
    let used = used.max(1) as f64;
    let r = profile.stable_rank();
    ProfileEstimate {
        dim: profile.dim(),
        stable_rank: r,
        mean_simplified: simp / used,
        mean_full: full / used,
        product: simp / used * r,
    }
}

/// Checks that a random direction is an `Ω(1/r′)` approximation: returns
/// per-profile estimates and the minimum of `E[simplified] × r′`.
pub fn verify_stable_rank_lemma(
    profiles: &[SpectralProfile],
    samples: usize,
    seed: u64,
) -> Result<StableRankCheck> {
    if profiles.is_empty() || samples == 0 {
        return Err(Error::invalid("need at least one profile and one sample"));
    }
    let est: Vec<ProfileEstimate> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| estimate(p, samples, derive_seed(seed, i as u64)))
        .collect();
    let min_product = est.iter().map(|e| e.product).fold(f64::INFINITY, f64::min);
    Ok(StableRankCheck {
        profiles: est,
        min_product,
        bound_constant: STABLE_RANK_BOUND,
    })
}

/// `λᵢ = i^(-p)` with `p` chosen by bisection so the stable rank is
/// `target` (clamped to what `d` values can reach).
pub fn power_law_profile(d: usize, target: f64) -> Result<SpectralProfile> {
    if d == 0 || target.is_nan() || target < 1.0 || target > d as f64 {
        return Err(Error::invalid(format!(
            "stable rank {target} unreachable in dimension {d}"
        )));
    }
    let sr = |p: f64| (1..=d).map(|i| (i as f64).powf(-2.0 * p)).sum::<f64>();
    let (mut lo, mut hi) = (0.0_f64, 64.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sr(mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = (1..=d).map(|i| (i as f64).powf(-hi)).collect();
    SpectralProfile::diagonal(sigma)
}

/// `count` power-law profiles with stable rank uniform in `[1, 15]` and
/// dimension uniform in `16..=24`.
pub fn random_profiles(count: usize, seed: u64) -> Result<Vec<SpectralProfile>> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let d = rng.random_range(16..=24);
            let r = rng.random_range(1.0..=15.0);
            power_law_profile(d, r)
        })
        .collect()
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Cube grid of spacing `eps/√d`, restricted to the shell
/// `|‖g‖ − 1| ≤ eps/2` and projected onto the sphere. Every unit vector
/// lies within `eps` of some output. Output is deduplicated and sorted
/// lexicographically.
pub fn discretize_sphere(d: usize, eps: f64) -> Result<Vec<Vec<f64>>> {
    if d == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::invalid("eps must be positive"));
    }
    let h = eps / (d as f64).sqrt();
    let k = ((1.0 + eps / 2.0) / h).ceil() as i64;
    let side = (2 * k + 1) as f64;
    if side.powi(d as i32) > 100.0 * GRID_POINT_CAP as f64 {
        return Err(Error::invalid(format!(
            "grid for d = {d}, eps = {eps} exceeds the point budget"
        )));
    }
    let mut out: Vec<Vec<i64>> = Vec::new();
    let mut z = vec![-k; d];
    loop {
        let norm = z.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt() * h;
        if (norm - 1.0).abs() <= eps / 2.0 {
            let g = z.iter().fold(0, |acc, &x| gcd(acc, x));
            out.push(z.iter().map(|&x| x / g).collect());
            if out.len() > GRID_POINT_CAP {
                return Err(Error::invalid("sphere grid exceeds the point budget"));
            }
        }
        let mut i = 0;
        loop {
            if i == d {
                out.sort();
                out.dedup();
                let mut pts: Vec<Vec<f64>> = out
                    .iter()
                    .map(|p| {
                        let n = p.iter().map(|&x| (x * x) as f64).sum::<f64>().sqrt();
                        p.iter().map(|&x| x as f64 / n).collect()
                    })
                    .collect();
                pts.sort_by(|a, b| lex_cmp(a, b));
                return Ok(pts);
            }
            z[i] += 1;
            if z[i] <= k {
                break;
            }
            z[i] = -k;
            i += 1;
        }
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustnessParams {
    pub rho: f64,
    pub delta: f64,
    pub eta: f64,
    pub eps_grid: f64,
}

impl Default for RobustnessParams {
    fn default() -> Self {
        Self {
            rho: 0.1,
            delta: 0.05,
            eta: 0.1,
            eps_grid: 0.05,
        }
    }
}

impl RobustnessParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::invalid("rho must lie in [0, 1]"));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::invalid("delta must be positive"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(Error::invalid("eta must lie in (0, 1)"));
        }
        if !(self.eps_grid > 0.0 && self.eps_grid.is_finite()) {
            return Err(Error::invalid("eps_grid must be positive"));
        }
        Ok(())
    }
}

/// Fraction of profiles whose denominator at `s` is below `delta`.
pub fn robustness_fraction(s: &[f64], profiles: &[SpectralProfile], delta: f64) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    let hits = profiles.iter().filter(|p| p.denominator(s) < delta).count();
    hits as f64 / profiles.len() as f64
}

/// Negative mean full objective; degenerate directions contribute 0.
pub fn empirical_loss(s: &[f64], profiles: &[SpectralProfile]) -> f64 {
    if profiles.is_empty() {
        return 0.0;
    }
    let total: f64 = profiles
        .iter()
        .map(|p| full_of(&p.sigma, &p.coords(s)).unwrap_or(0.0))
        .sum();
    -total / profiles.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmpiricalLosses {
    pub train_loss: f64,
    pub holdout_loss: f64,
    /// `holdout_loss − train_loss`.
    pub gap: f64,
}

pub fn empirical_losses(
    s: &[f64],
    train: &[SpectralProfile],
    holdout: &[SpectralProfile],
) -> EmpiricalLosses {
    let train_loss = empirical_loss(s, train);
    let holdout_loss = empirical_loss(s, holdout);
    EmpiricalLosses {
        train_loss,
        holdout_loss,
        gap: holdout_loss - train_loss,
    }
}

/// Grid points that are `(ρ, δ)`-robust on `train`, in grid order.
pub fn robust_grid(train: &[SpectralProfile], params: &RobustnessParams) -> Result<Vec<Vec<f64>>> {
    params.validate()?;
    let d = train
        .first()
        .ok_or_else(|| Error::invalid("empty training set"))?
        .dim();
    if train.iter().any(|p| p.dim() != d) {
        return Err(Error::invalid("profiles have different dimensions"));
    }
    let grid = discretize_sphere(d, params.eps_grid)?;
    Ok(grid
        .into_par_iter()
        .filter(|s| robustness_fraction(s, train, params.delta) <= params.rho)
        .collect())
}

/// The robust grid point with the smallest empirical loss on `train`;
/// ties go to the lexicographically smallest point.
pub fn grid_search_robust_minimizer(
    train: &[SpectralProfile],
    params: &RobustnessParams,
) -> Result<Vec<f64>> {
    let feasible = robust_grid(train, params)?;
    let losses: Vec<f64> = feasible
        .par_iter()
        .map(|s| empirical_loss(s, train))
        .collect();
    let mut best: Option<usize> = None;
    for (i, &l) in losses.iter().enumerate() {
        if best.is_none_or(|b| l < losses[b]) {
            best = Some(i);
        }
    }
    match best {
        Some(i) => Ok(feasible[i].clone()),
        None => Err(Error::NoRobustSolution {
            rho: params.rho,
            delta: params.delta,
        }),
    }
}

/// Two-dimensional profiles `λ = (1, λ₂)` with `λ₂ ~ U(0.1, 0.9)` and `U` a
/// rotation by an angle drawn from `N(0, 0.3²)`.
pub fn spiked_profiles_2d(count: usize, seed: u64) -> Vec<SpectralProfile> {
    let mut rng = rng_from_seed(seed);
    (0..count)
        .map(|_| {
            let l2 = rng.random_range(0.1..0.9);
            let theta = 0.3 * standard_normal(&mut rng);
            let (c, s) = (theta.cos(), theta.sin());
            let u = DenseMatrix::from_rows(&[&[c, -s], &[s, c]]);
            SpectralProfile::new(vec![1.0, l2], u).expect("rotation is orthonormal")
        })
        .collect()
}

/// Mean `|gap|` of the robust grid minimizer over `splits` independent
/// train/holdout draws of size `n` each, for every `n` in `ns`.
pub fn generalization_gaps(
    ns: &[usize],
    splits: usize,
    params: &RobustnessParams,
    seed: u64,
) -> Result<Vec<(usize, f64)>> {
    ns.iter()
        .map(|&n| {
            if n == 0 || splits == 0 {
                return Err(Error::invalid(
                    "sample size and split count must be positive",
                ));
            }
            let mut total = 0.0;
            for split in 0..splits {
                let base = derive_seed(derive_seed(seed, n as u64), split as u64);
                let train = spiked_profiles_2d(n, derive_seed(base, 0));
                let holdout = spiked_profiles_2d(n, derive_seed(base, 1));
                let s = grid_search_robust_minimizer(&train, params)?;
                total += empirical_losses(&s, &train, &holdout).gap.abs();
            }
            Ok((n, total / splits as f64))
        })
        .collect()
}
