//! Synthetic datasets, the App*/Err metrics, and the experiment sweep.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    best_rank_k, frobenius_norm, io::load_matrix, matmul_nt, orthonormal_columns, reference_svd,
    DenseMatrix,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::scw::scw_loss;
use crate::sketch::{dense_random_sketch, sparse_random_sketch, SketchOperator, SparseSketch};
use crate::trainer::{train, TrainConfig, TrainMode, TrainReport};

const STREAM_BASE: u64 = 0;
const STREAM_TRAIN: u64 = 1;
const STREAM_TEST: u64 = 2;
const STREAM_TRIAL: u64 = 0x7472_6961;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Spiked,
    LowrankPlusNoise,
    RotatedSharedSubspace,
    Files,
}

/// Kind-specific knobs. Unused fields are ignored by the other kinds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetParams {
    /// Number of planted singular directions.
    pub spikes: usize,
    /// `σᵢ = decay^(i-1)` for the planted directions.
    pub decay: f64,
    /// Expected Frobenius norm of the additive Gaussian noise.
    pub noise: f64,
    /// Per-sample perturbation size of the shared subspaces (spiked).
    pub jitter: f64,
    /// Maximum rotation angle away from the shared subspaces, in radians
    /// (rotated_shared_subspace).
    pub angle: f64,
}

impl Default for DatasetParams {
    fn default() -> Self {
        Self {
            spikes: 4,
            decay: 0.8,
            noise: 0.1,
            jitter: 0.1,
            angle: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub label: String,
    pub kind: DatasetKind,
    #[serde(default)]
    pub n: usize,
    #[serde(default)]
    pub d: usize,
    #[serde(default = "one")]
    pub count_train: usize,
    #[serde(default = "one")]
    pub count_test: usize,
    #[serde(default)]
    pub params: DatasetParams,
    #[serde(default)]
    pub seed: u64,
    /// Directory with `train/` and `test/` subdirectories (files kind).
    #[serde(default)]
    pub path: Option<PathBuf>,
}

fn one() -> usize {
    1
}

impl DatasetSpec {
    /// The spiked family used by the default experiments.
    pub fn spiked(
        label: &str,
        n: usize,
        d: usize,
        count_train: usize,
        count_test: usize,
        seed: u64,
    ) -> Self {
        Self {
            label: label.to_string(),
            kind: DatasetKind::Spiked,
            n,
            d,
            count_train,
            count_test,
            params: DatasetParams::default(),
            seed,
            path: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DatasetKind::Files {
            return match &self.path {
                Some(_) => Ok(()),
                None => Err(Error::invalid(format!(
                    "dataset {}: files kind needs a path",
                    self.label
                ))),
            };
        }
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid(format!(
                "dataset {}: dimensions must be >= 1",
                self.label
            )));
        }
        if self.count_train == 0 || self.count_test == 0 {
            return Err(Error::invalid(format!(
                "dataset {}: counts must be >= 1",
                self.label
            )));
        }
        let p = &self.params;
        if p.spikes == 0 || p.spikes > self.n.min(self.d) {
            return Err(Error::invalid(format!(
                "dataset {}: spikes must be in 1..={}",
                self.label,
                self.n.min(self.d)
            )));
        }
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if !(finite_nonneg(p.noise) && finite_nonneg(p.jitter) && finite_nonneg(p.angle)) {
            return Err(Error::invalid(format!(
                "dataset {}: noise, jitter and angle must be finite and >= 0",
                self.label
            )));
        }
        if !(p.decay > 0.0 && p.decay.is_finite()) {
            return Err(Error::invalid(format!(
                "dataset {}: decay must be > 0",
                self.label
            )));
        }
        Ok(())
    }
}

fn random_orthonormal(rows: usize, cols: usize, rng: &mut Rng) -> DenseMatrix {
    loop {
        let q = orthonormal_columns(&DenseMatrix::random_normal(rows, cols, rng));
        if q.cols() == cols {
            return q;
        }
    }
}

/// Orthonormal basis of `base + scale·G` for Gaussian `G` with entries of
/// variance `1/rows` (so each column moves by about `scale`).
fn jittered(base: &DenseMatrix, scale: f64, rng: &mut Rng) -> DenseMatrix {
    let g = DenseMatrix::random_normal(base.rows(), base.cols(), rng)
        .scaled(scale / (base.rows() as f64).sqrt());
    loop {
        let q = orthonormal_columns(&base.add(&g).expect("same shape"));
        if q.cols() == base.cols() {
            return q;
        }
    }
}

/// `base` rotated by a random angle in `[0, max_angle]` towards a random
/// orthonormal frame orthogonal to it.
fn rotated(base: &DenseMatrix, max_angle: f64, rng: &mut Rng) -> DenseMatrix {
    let (rows, cols) = base.shape();
    if 2 * cols > rows {
        return jittered(base, max_angle, rng);
    }
    let g = DenseMatrix::random_normal(rows, cols, rng);
    let q = loop {
        let stacked = orthonormal_columns(&base_then(base, &g));
        if stacked.cols() == 2 * cols {
            break stacked;
        }
    };
    let theta = rng.random_range(0.0..=max_angle);
    let (c, s) = (theta.cos(), theta.sin());
    let mut out = DenseMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            out.row_mut(i)[j] = c * q[(i, j)] + s * q[(i, cols + j)];
        }
    }
    out
}

fn base_then(base: &DenseMatrix, g: &DenseMatrix) -> DenseMatrix {
    let mut cols: Vec<Vec<f64>> = (0..base.cols()).map(|j| base.column(j)).collect();
    cols.extend((0..g.cols()).map(|j| g.column(j)));
    let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
    DenseMatrix::from_columns(&refs, base.rows())
}

fn planted(u: &DenseMatrix, v: &DenseMatrix, decay: f64) -> DenseMatrix {
    let mut us = u.clone();
    for i in 0..us.rows() {
        for (j, x) in us.row_mut(i).iter_mut().enumerate() {
            *x *= decay.powi(j as i32);
        }
    }
    matmul_nt(&us, v).expect("compatible factors")
}

fn add_noise(a: DenseMatrix, noise: f64, rng: &mut Rng) -> DenseMatrix {
    if noise == 0.0 {
        return a;
    }
    let (n, d) = a.shape();
    let e = DenseMatrix::random_normal(n, d, rng).scaled(noise / ((n * d) as f64).sqrt());
    a.add(&e).expect("same shape")
}

fn sample(spec: &DatasetSpec, u0: &DenseMatrix, v0: &DenseMatrix, seed: u64) -> DenseMatrix {
    let p = &spec.params;
    let mut rng = rng_from_seed(seed);
    let (u, v) = match spec.kind {
        DatasetKind::Spiked => (
            jittered(u0, p.jitter, &mut rng),
            jittered(v0, p.jitter, &mut rng),
        ),
        DatasetKind::LowrankPlusNoise => (
            random_orthonormal(spec.n, p.spikes, &mut rng),
            random_orthonormal(spec.d, p.spikes, &mut rng),
        ),
        DatasetKind::RotatedSharedSubspace => (
            rotated(u0, p.angle, &mut rng),
            rotated(v0, p.angle, &mut rng),
        ),
        DatasetKind::Files => unreachable!("files are loaded, not sampled"),
    };
    add_noise(planted(&u, &v, p.decay), p.noise, &mut rng)
}

fn list_matrices(dir: &Path) -> Result<Vec<DenseMatrix>> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()),
                Some("dmat") | Some("csv")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::invalid(format!(
            "no .dmat or .csv files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_matrix(p)).collect()
}

/// Generates (or loads) a dataset. Output is a pure function of `spec`.
pub fn generate_dataset(spec: &DatasetSpec) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
    spec.validate()?;
    if spec.kind == DatasetKind::Files {
        let root = spec.path.as_ref().expect("validated");
        let train = list_matrices(&root.join("train"))?;
        let test = list_matrices(&root.join("test"))?;
        let n = train[0].rows();
        if let Some(bad) = train.iter().chain(&test).find(|a| a.rows() != n) {
            return Err(Error::DimensionMismatch {
                op: "generate_dataset",
                left: train[0].shape(),
                right: bad.shape(),
            });
        }
        return Ok((train, test));
    }
    let mut base = rng_from_seed(derive_seed(spec.seed, STREAM_BASE));
    let u0 = random_orthonormal(spec.n, spec.params.spikes, &mut base);
    let v0 = random_orthonormal(spec.d, spec.params.spikes, &mut base);
    let draw = |stream: u64, count: usize| -> Vec<DenseMatrix> {
        let root = derive_seed(spec.seed, stream);
        (0..count)
            .into_par_iter()
            .map(|i| sample(spec, &u0, &v0, derive_seed(root, i as u64)))
            .collect()
    };
    Ok((
        draw(STREAM_TRAIN, spec.count_train),
        draw(STREAM_TEST, spec.count_test),
    ))
}

/// Scales `a` so its top singular value is 1.
pub fn normalize_top_singular(a: &DenseMatrix) -> Result<DenseMatrix> {
    let svd = reference_svd(a)?;
    match svd.sigma.first() {
        Some(&s) if s > 0.0 => Ok(a.scaled(1.0 / s)),
        _ => Err(Error::ZeroMatrix("normalize_top_singular")),
    }
}

pub fn normalize_all(set: &[DenseMatrix]) -> Result<Vec<DenseMatrix>> {
    set.par_iter().map(normalize_top_singular).collect()
}

/// App*: mean of `‖A − [A]_k‖_F` over the set.
pub fn optimal_loss(test: &[DenseMatrix], k: usize) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("optimal_loss: empty test set"));
    }
    let losses: Vec<f64> = test
        .par_iter()
        .map(|a| Ok(frobenius_norm(&a.sub(&best_rank_k(a, k)?)?)))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / test.len() as f64)
}

/// Mean SCW loss over the set.
pub fn mean_loss<S: SketchOperator + Sync + ?Sized>(
    test: &[DenseMatrix],
    s: &S,
    k: usize,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    let losses: Vec<f64> = test
        .par_iter()
        .map(|a| scw_loss(a, s, k))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / test.len() as f64)
}

/// Err: mean SCW loss minus App*.
pub fn err_metric<S: SketchOperator + Sync + ?Sized>(
    test: &[DenseMatrix],
    s: &S,
    k: usize,
) -> Result<f64> {
    Ok(mean_loss(test, s, k)? - optimal_loss(test, k)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SketchType {
    SparseRandom,
    DenseRandom,
    Learned,
    MixedJ,
    MixedS,
}

impl SketchType {
    pub const ALL: [SketchType; 5] = [
        SketchType::SparseRandom,
        SketchType::DenseRandom,
        SketchType::Learned,
        SketchType::MixedJ,
        SketchType::MixedS,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SketchType::SparseRandom => "sparse_random",
            SketchType::DenseRandom => "dense_random",
            SketchType::Learned => "learned",
            SketchType::MixedJ => "mixed_j",
            SketchType::MixedS => "mixed_s",
        }
    }

    pub fn train_mode(&self) -> Option<TrainMode> {
        match self {
            SketchType::Learned => Some(TrainMode::Learned),
            SketchType::MixedJ => Some(TrainMode::MixedJoint),
            SketchType::MixedS => Some(TrainMode::MixedSeparate),
            _ => None,
        }
    }
}

impl fmt::Display for SketchType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SketchType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SketchType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown sketch type {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub dataset: String,
    pub k: usize,
    pub m: usize,
    pub sketch: SketchType,
    pub err: f64,
    pub std_err: f64,
    pub trials: usize,
}

pub const RESULTS_HEADER: [&str; 7] = ["dataset", "k", "m", "sketch", "err", "std_err", "trials"];

pub fn write_results<W: Write>(records: &[ResultRecord], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(RESULTS_HEADER)?;
    for r in records {
        out.write_record([
            r.dataset.clone(),
            r.k.to_string(),
            r.m.to_string(),
            r.sketch.to_string(),
            format!("{:.17e}", r.err),
            format!("{:.17e}", r.std_err),
            r.trials.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn save_results(records: &[ResultRecord], path: &Path) -> Result<()> {
    write_results(records, std::fs::File::create(path)?)
}

/// Writes an `x,y` series.
pub fn save_series(path: &Path, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<()> {
    let mut out = csv::Writer::from_path(path)?;
    out.write_record([x_label, y_label])?;
    for (x, y) in points {
        out.write_record([format!("{x}"), format!("{y:.17e}")])?;
    }
    out.flush()?;
    Ok(())
}

/// Mean and standard error of the mean.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Seed for trial `t` of an experiment whose master seed is `seed`.
pub fn trial_seed(seed: u64, t: usize) -> u64 {
    derive_seed(derive_seed(seed, STREAM_TRIAL), t as u64)
}

/// Mixed modes default to half the rows learned when `learned_rows` is 0.
fn effective_cfg(kind: SketchType, m: usize, cfg: &TrainConfig, seed: u64) -> TrainConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    if let Some(mode) = kind.train_mode() {
        c.mode = mode;
    }
    if kind != SketchType::Learned && c.learned_rows == 0 {
        c.learned_rows = m / 2;
    }
    c
}

pub enum BuiltSketch {
    Sparse(SparseSketch),
    Dense(crate::sketch::DenseSketch),
}

impl BuiltSketch {
    pub fn err(&self, test: &[DenseMatrix], k: usize) -> Result<f64> {
        match self {
            BuiltSketch::Sparse(s) => err_metric(test, s, k),
            BuiltSketch::Dense(s) => err_metric(test, s, k),
        }
    }

    pub fn as_sparse(&self) -> Option<&SparseSketch> {
        match self {
            BuiltSketch::Sparse(s) => Some(s),
            BuiltSketch::Dense(_) => None,
        }
    }
}

/// Builds one sketch of the given type; trained types learn from `train`.
pub fn build_sketch(
    kind: SketchType,
    train_set: &[DenseMatrix],
    m: usize,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(BuiltSketch, Option<TrainReport>)> {
    let n = train_set
        .first()
        .map(|a| a.rows())
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    match kind {
        SketchType::SparseRandom => {
            Ok((BuiltSketch::Sparse(sparse_random_sketch(m, n, seed)?), None))
        }
        SketchType::DenseRandom => {
            if m == 0 {
                return Err(Error::invalid("m must be at least 1"));
            }
            Ok((BuiltSketch::Dense(dense_random_sketch(m, n, seed)), None))
        }
        _ => {
            let c = effective_cfg(kind, m, cfg, seed);
            let (s, report) = train(train_set, m, &c)?;
            Ok((BuiltSketch::Sparse(s), Some(report)))
        }
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_trials(
    label: &str,
    train_set: &[DenseMatrix],
    test: &[DenseMatrix],
    k: usize,
    m: usize,
    kind: SketchType,
    trials: usize,
    cfg: &TrainConfig,
) -> Result<ResultRecord> {
    check_k(k)?;
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    let mut errs = Vec::with_capacity(trials);
    for t in 0..trials {
        let c = TrainConfig { k, ..cfg.clone() };
        let (sketch, _) = build_sketch(kind, train_set, m, &c, trial_seed(cfg.seed, t))?;
        let e = sketch.err(test, k)?;
        log::info!("{label} k={k} m={m} {kind} trial {t}: err {e:.6}");
        errs.push(e);
    }
    let (err, std_err) = mean_and_std_err(&errs);
    Ok(ResultRecord {
        dataset: label.to_string(),
        k,
        m,
        sketch: kind,
        err,
        std_err,
        trials,
    })
}

/// Normalized train and test sets of a spec.
pub fn prepared_dataset(spec: &DatasetSpec) -> Result<(Vec<DenseMatrix>, Vec<DenseMatrix>)> {
    let (train, test) = generate_dataset(spec)?;
    Ok((normalize_all(&train)?, normalize_all(&test)?))
}

/// Runs `trials` independent sketches (seeds derived from `cfg.seed`) on the
/// normalized dataset and reports mean Err with its standard error.
pub fn run_experiment(
    spec: &DatasetSpec,
    k: usize,
    m: usize,
    kind: SketchType,
    trials: usize,
    cfg: &TrainConfig,
) -> Result<ResultRecord> {
    let (train_set, test) = prepared_dataset(spec)?;
    run_trials(&spec.label, &train_set, &test, k, m, kind, trials, cfg)
}

/// Trains one learned sketch on the union of the training sets of `specs`
/// and evaluates it on the test set of `eval_spec`.
pub fn mixed_training_set_experiment(
    specs: &[DatasetSpec],
    eval_spec: &DatasetSpec,
    k: usize,
    m: usize,
    cfg: &TrainConfig,
) -> Result<ResultRecord> {
    if specs.is_empty() {
        return Err(Error::invalid("no training datasets"));
    }
    let mut union = Vec::new();
    for spec in specs {
        union.extend(prepared_dataset(spec)?.0);
    }
    let (_, test) = prepared_dataset(eval_spec)?;
    let labels: Vec<&str> = specs.iter().map(|s| s.label.as_str()).collect();
    let mut rec = run_trials(
        &labels.join("+"),
        &union,
        &test,
        k,
        m,
        SketchType::Learned,
        1,
        cfg,
    )?;
    rec.dataset = format!("{}<-{}", eval_spec.label, rec.dataset);
    Ok(rec)
}

/// Err of every sketch type and each `m`, as `(m, err)` series per type.
pub fn err_versus_m(
    spec: &DatasetSpec,
    k: usize,
    ms: &[usize],
    kinds: &[SketchType],
    trials: usize,
    cfg: &TrainConfig,
) -> Result<Vec<ResultRecord>> {
    let (train_set, test) = prepared_dataset(spec)?;
    let mut out = Vec::new();
    for &kind in kinds {
        for &m in ms {
            out.push(run_trials(
                &spec.label,
                &train_set,
                &test,
                k,
                m,
                kind,
                trials,
                cfg,
            )?);
        }
    }
    Ok(out)
}

/// Sorts by `(dataset, k, m, sketch)`.
pub fn sort_records(records: &mut [ResultRecord]) {
    records.sort_by(|a, b| {
        (a.dataset.as_str(), a.k, a.m, a.sketch).cmp(&(b.dataset.as_str(), b.k, b.m, b.sketch))
    });
}
