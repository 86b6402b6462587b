//! SGD over the nonzero values of a sparse sketch.
//!
//! The sparsity pattern (`row_of`) is fixed at initialization and never
//! touched; only trainable values move. Each step draws a batch of training
//! matrices, runs the differentiable pipeline on each (in parallel), averages
//! the gradients in batch order, and applies `values -= lr * grad`.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffsvd::{scw_loss_and_grad, PowerSvdConfig};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng::{derive_seed, rng_from_seed};
use crate::scw::scw_loss;
use crate::sketch::{concat_sketches, sparse_random_sketch, SparseSketch};

const STREAM_BATCH: u64 = 0x6261_7463;
const STREAM_POWER: u64 = 0x706f_7772;
const STREAM_FIXED: u64 = 0x6669_7864;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    #[default]
    Learned,
    MixedJoint,
    MixedSeparate,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Learned => "learned",
            TrainMode::MixedJoint => "mixed_joint",
            TrainMode::MixedSeparate => "mixed_separate",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(TrainMode::Learned),
            "mixed_joint" | "mixed_j" => Ok(TrainMode::MixedJoint),
            "mixed_separate" | "mixed_s" => Ok(TrainMode::MixedSeparate),
            other => Err(Error::invalid(format!("unknown train mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub k: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// `init_seed` is ignored; per-step seeds derive from `seed`.
    pub power: PowerSvdConfig,
    pub mode: TrainMode,
    /// Trainable rows for the mixed modes.
    pub learned_rows: usize,
    /// Iterations between recorded mean training losses.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            k: 1,
            lr: 0.1,
            batch_size: 1,
            iterations: 3000,
            seed: 0,
            power: PowerSvdConfig::default(),
            mode: TrainMode::Learned,
            learned_rows: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, m: usize) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!(
                "lr must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.power.t_iters == 0 {
            return Err(Error::invalid("power.t_iters must be at least 1"));
        }
        if m == 0 {
            return Err(Error::invalid("m must be at least 1"));
        }
        if self.mode != TrainMode::Learned && self.learned_rows > m {
            return Err(Error::invalid(format!(
                "learned_rows {} exceeds m = {m}",
                self.learned_rows
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// `(iteration, mean training loss)`; iteration 0 is the initial sketch.
    pub loss_history: Vec<(usize, f64)>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub wall_time: f64,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "loss"])?;
        for (it, loss) in &self.loss_history {
            out.write_record([it.to_string(), format!("{loss:.17e}")])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

fn common_rows(train: &[DenseMatrix]) -> Result<usize> {
    let first = train
        .first()
        .ok_or_else(|| Error::invalid("training set is empty"))?;
    if let Some(bad) = train.iter().find(|a| a.rows() != first.rows()) {
        return Err(Error::DimensionMismatch {
            op: "train",
            left: first.shape(),
            right: bad.shape(),
        });
    }
    Ok(first.rows())
}

/// Mean unsquared SCW loss (reference SVD) of `s` over `set`.
pub fn mean_scw_loss(set: &[DenseMatrix], s: &SparseSketch, k: usize) -> Result<f64> {
    let losses: Vec<f64> = set
        .par_iter()
        .map(|a| scw_loss(a, s, k))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / set.len() as f64)
}

/// Trains from an initial sketch. Masked values stay bit-identical.
pub fn run_sgd(
    train: &[DenseMatrix],
    init: SparseSketch,
    cfg: &TrainConfig,
) -> Result<(SparseSketch, TrainReport)> {
    let start = Instant::now();
    let n = common_rows(train)?;
    if init.n() != n {
        return Err(Error::DimensionMismatch {
            op: "run_sgd",
            left: (init.m(), init.n()),
            right: (n, train[0].cols()),
        });
    }
    cfg.validate(init.m())?;

    let mut sketch = init;
    let mask = sketch.trainable_mask();
    let mut values = sketch.values();
    let mut batch_rng = rng_from_seed(derive_seed(cfg.seed, STREAM_BATCH));
    let power_root = derive_seed(cfg.seed, STREAM_POWER);
    let every = cfg.checkpoint_every.max(1);

    let initial_loss = mean_scw_loss(train, &sketch, cfg.k)?;
    let mut history = vec![(0, initial_loss)];

    for it in 0..cfg.iterations {
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| batch_rng.random_range(0..train.len()))
            .collect();
        let results: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .enumerate()
            .map(|(pos, &idx)| {
                let power = PowerSvdConfig {
                    init_seed: derive_seed(power_root, (it * cfg.batch_size + pos) as u64),
                    ..cfg.power
                };
                scw_loss_and_grad(&train[idx], &sketch, cfg.k, &power)
            })
            .collect::<Result<_>>()?;

        let mut grad = vec![0.0; values.len()];
        for (loss, g) in &results {
            if !loss.is_finite() || g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    iteration: it,
                    detail: format!("non-finite loss or gradient (loss = {loss})"),
                });
            }
            grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let scale = 1.0 / results.len() as f64;
        for ((v, g), &trainable) in values.iter_mut().zip(&grad).zip(&mask) {
            if trainable {
                *v -= cfg.lr * (g * scale);
            }
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                iteration: it,
                detail: "sketch values became non-finite".into(),
            });
        }
        sketch.set_values(&values)?;

        let done = it + 1;
        if done % every == 0 || done == cfg.iterations {
            let loss = mean_scw_loss(train, &sketch, cfg.k)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    iteration: it,
                    detail: format!("mean training loss is {loss}"),
                });
            }
            log::debug!("iteration {done}: mean training loss {loss:.6}");
            history.push((done, loss));
        }
    }

    let final_loss = history.last().map(|h| h.1).unwrap_or(initial_loss);
    Ok((
        sketch,
        TrainReport {
            loss_history: history,
            initial_loss,
            final_loss,
            wall_time: start.elapsed().as_secs_f64(),
        },
    ))
}

/// Learned sketch: random CountSketch initialization seeded by `cfg.seed`,
/// then SGD on every value.
pub fn train_sketch(
    train: &[DenseMatrix],
    m: usize,
    cfg: &TrainConfig,
) -> Result<(SparseSketch, TrainReport)> {
    let n = common_rows(train)?;
    cfg.validate(m)?;
    let init = sparse_random_sketch(m, n, cfg.seed)?;
    run_sgd(train, init, cfg)
}

fn fixed_block(rows: usize, n: usize, seed: u64) -> Result<SparseSketch> {
    if rows == 0 {
        return Ok(SparseSketch::empty(n));
    }
    let mut s = sparse_random_sketch(rows, n, derive_seed(seed, STREAM_FIXED))?;
    s.set_trainable(false);
    Ok(s)
}

/// Mixed sketch trained jointly: the first `learned_rows` rows train while
/// the remaining random rows stay fixed during the same optimization.
pub fn train_mixed_joint(
    train: &[DenseMatrix],
    m: usize,
    cfg: &TrainConfig,
) -> Result<(SparseSketch, TrainReport)> {
    let n = common_rows(train)?;
    cfg.validate(m)?;
    if cfg.learned_rows > m {
        return Err(Error::invalid("learned_rows exceeds m"));
    }
    let learned = if cfg.learned_rows == 0 {
        SparseSketch::empty(n)
    } else {
        sparse_random_sketch(cfg.learned_rows, n, cfg.seed)?
    };
    let init = concat_sketches(&learned, &fixed_block(m - cfg.learned_rows, n, cfg.seed)?)?;
    run_sgd(train, init, cfg)
}

/// Mixed sketch trained separately: a `learned_rows`-row sketch is trained
/// on its own, then a fresh random block is appended below it.
pub fn train_mixed_separate(
    train: &[DenseMatrix],
    m: usize,
    cfg: &TrainConfig,
) -> Result<(SparseSketch, TrainReport)> {
    let n = common_rows(train)?;
    cfg.validate(m)?;
    if cfg.learned_rows > m {
        return Err(Error::invalid("learned_rows exceeds m"));
    }
    let fixed = fixed_block(m - cfg.learned_rows, n, cfg.seed)?;
    if cfg.learned_rows == 0 {
        let loss = mean_scw_loss(train, &fixed, cfg.k)?;
        let report = TrainReport {
            loss_history: vec![(0, loss)],
            initial_loss: loss,
            final_loss: loss,
            wall_time: 0.0,
        };
        return Ok((fixed, report));
    }
    let (learned, report) = train_sketch(train, cfg.learned_rows, cfg)?;
    Ok((concat_sketches(&learned, &fixed)?, report))
}

/// Dispatches on `cfg.mode`.
pub fn train(
    train_set: &[DenseMatrix],
    m: usize,
    cfg: &TrainConfig,
) -> Result<(SparseSketch, TrainReport)> {
    match cfg.mode {
        TrainMode::Learned => train_sketch(train_set, m, cfg),
        TrainMode::MixedJoint => train_mixed_joint(train_set, m, cfg),
        TrainMode::MixedSeparate => train_mixed_separate(train_set, m, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn data(count: usize, seed: u64) -> Vec<DenseMatrix> {
        let mut rng = rng_from_seed(seed);
        (0..count)
            .map(|_| DenseMatrix::random_normal(10, 6, &mut rng))
            .collect()
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            k: 2,
            lr: 0.05,
            iterations: 5,
            seed: 3,
            power: PowerSvdConfig {
                t_iters: 20,
                ..Default::default()
            },
            checkpoint_every: 2,
            ..Default::default()
        }
    }

    #[test]
    fn zero_lr_keeps_initialization() {
        let train = data(3, 1);
        let c = TrainConfig { lr: 0.0, ..cfg() };
        let (s, _) = train_sketch(&train, 3, &c).unwrap();
        assert_eq!(s, sparse_random_sketch(3, 10, c.seed).unwrap());
    }

    #[test]
    fn zero_iterations_report() {
        let train = data(3, 1);
        let c = TrainConfig {
            iterations: 0,
            ..cfg()
        };
        let (_, r) = train_sketch(&train, 3, &c).unwrap();
        assert_eq!(r.initial_loss, r.final_loss);
        assert_eq!(r.loss_history.len(), 1);
    }

    #[test]
    fn history_checkpoints() {
        let train = data(3, 1);
        let (_, r) = train_sketch(&train, 3, &cfg()).unwrap();
        let its: Vec<usize> = r.loss_history.iter().map(|h| h.0).collect();
        assert_eq!(its, vec![0, 2, 4, 5]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + its.len());
        assert!(text.starts_with("iteration,loss\n"));
    }

    #[test]
    fn pattern_fixed_and_reproducible() {
        let train = data(4, 2);
        let (s1, _) = train_sketch(&train, 3, &cfg()).unwrap();
        let (s2, _) = train_sketch(&train, 3, &cfg()).unwrap();
        assert_eq!(s1, s2);
        let init = sparse_random_sketch(3, 10, cfg().seed).unwrap();
        assert_eq!(s1.row_of(), init.row_of());
        assert_ne!(s1.values(), init.values());
        assert!(s1.is_finite());
    }

    #[test]
    fn mixed_joint_masks_fixed_block() {
        let train = data(4, 2);
        let c = TrainConfig {
            mode: TrainMode::MixedJoint,
            learned_rows: 2,
            ..cfg()
        };
        let (s, _) = super::train(&train, 4, &c).unwrap();
        assert_eq!(s.m(), 4);
        let fixed = fixed_block(2, 10, c.seed).unwrap();
        assert_eq!(s.blocks()[1], fixed.blocks()[0]);
    }

    #[test]
    fn mixed_joint_with_all_rows_matches_learned() {
        let train = data(4, 2);
        let c = TrainConfig {
            mode: TrainMode::MixedJoint,
            learned_rows: 3,
            ..cfg()
        };
        let (a, ra) = train_mixed_joint(&train, 3, &c).unwrap();
        let (b, rb) = train_sketch(&train, 3, &c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.loss_history, rb.loss_history);
    }

    #[test]
    fn mixed_joint_zero_learned_rows_is_frozen() {
        let train = data(3, 2);
        let c = TrainConfig {
            mode: TrainMode::MixedJoint,
            learned_rows: 0,
            ..cfg()
        };
        let (s, _) = train_mixed_joint(&train, 3, &c).unwrap();
        assert_eq!(s, fixed_block(3, 10, c.seed).unwrap());
    }

    #[test]
    fn mixed_separate_first_block_is_standalone() {
        let train = data(4, 2);
        let c = TrainConfig {
            mode: TrainMode::MixedSeparate,
            learned_rows: 2,
            ..cfg()
        };
        let (s, _) = train_mixed_separate(&train, 5, &c).unwrap();
        let (alone, _) = train_sketch(&train, 2, &c).unwrap();
        assert_eq!(s.m(), 5);
        assert_eq!(s.blocks()[0], alone.blocks()[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let train = data(3, 1);
        let c = TrainConfig { lr: 1e300, ..cfg() };
        match train_sketch(&train, 3, &c) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn input_validation() {
        assert!(train_sketch(&[], 3, &cfg()).is_err());
        let mut train = data(2, 1);
        train.push(DenseMatrix::zeros(9, 6));
        assert!(train_sketch(&train, 3, &cfg()).is_err());
        let bad = TrainConfig { lr: -1.0, ..cfg() };
        assert!(train_sketch(&data(2, 1), 3, &bad).is_err());
        let bad = TrainConfig {
            mode: TrainMode::MixedJoint,
            learned_rows: 5,
            ..cfg()
        };
        assert!(super::train(&data(2, 1), 3, &bad).is_err());
        assert_eq!(
            "mixed_s".parse::<TrainMode>().unwrap(),
            TrainMode::MixedSeparate
        );
        assert!("adam".parse::<TrainMode>().is_err());
    }
}
