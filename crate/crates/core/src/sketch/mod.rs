//! Sketching matrices.
//!
//! A [`SparseSketch`] is a vertical stack of one or more [`SketchBlock`]s.
//! Each block holds exactly one nonzero per column, stored as a row index and
//! a value. Random CountSketch matrices are a single block; concatenating
//! two sketches (mixed learned/random sketches) appends blocks, so the
//! result keeps the one-nonzero-per-column structure within each block.

pub mod io;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::linalg::{matmul, DenseMatrix};
use crate::rng::rng_from_seed;

/// One CountSketch-shaped block: `rows × n`, one nonzero per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchBlock {
    pub rows: usize,
    pub row_of: Vec<usize>,
    pub value_of: Vec<f64>,
    pub trainable: Vec<bool>,
}

impl SketchBlock {
    pub fn new(
        rows: usize,
        row_of: Vec<usize>,
        value_of: Vec<f64>,
        trainable: Vec<bool>,
    ) -> Result<Self> {
        let n = row_of.len();
        if value_of.len() != n || trainable.len() != n {
            return Err(Error::invalid("sketch block arrays must have equal length"));
        }
        if rows == 0 {
            return Err(Error::invalid("sketch block needs at least one row"));
        }
        if let Some(&r) = row_of.iter().find(|&&r| r >= rows) {
            return Err(Error::invalid(format!(
                "row index {r} out of range [0, {rows})"
            )));
        }
        Ok(Self {
            rows,
            row_of,
            value_of,
            trainable,
        })
    }

    pub fn n(&self) -> usize {
        self.row_of.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseSketch {
    n: usize,
    blocks: Vec<SketchBlock>,
}

impl SparseSketch {
    /// The `0 × n` sketch.
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            blocks: Vec::new(),
        }
    }

    pub fn from_blocks(n: usize, blocks: Vec<SketchBlock>) -> Result<Self> {
        if let Some(b) = blocks.iter().find(|b| b.n() != n) {
            return Err(Error::invalid(format!(
                "block has {} columns, sketch has {n}",
                b.n()
            )));
        }
        Ok(Self { n, blocks })
    }

    /// Single-block sketch with every value trainable.
    pub fn single(m: usize, row_of: Vec<usize>, value_of: Vec<f64>) -> Result<Self> {
        let n = row_of.len();
        let block = SketchBlock::new(m, row_of, value_of, vec![true; n])?;
        Self::from_blocks(n, vec![block])
    }

    /// The `n × n` identity pattern.
    pub fn identity(n: usize) -> Self {
        Self::single(n, (0..n).collect(), vec![1.0; n]).expect("valid identity pattern")
    }

    pub fn m(&self) -> usize {
        self.blocks.iter().map(|b| b.rows).sum()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[SketchBlock] {
        &self.blocks
    }

    /// Stored nonzeros, `n` per block.
    pub fn nnz(&self) -> usize {
        self.blocks.len() * self.n
    }

    /// Global row index of every stored entry, block-major.
    pub fn row_of(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.nnz());
        let mut offset = 0;
        for b in &self.blocks {
            out.extend(b.row_of.iter().map(|r| r + offset));
            offset += b.rows;
        }
        out
    }

    /// All stored values, block-major. Gradients are aligned with this.
    pub fn values(&self) -> Vec<f64> {
        self.blocks
            .iter()
            .flat_map(|b| b.value_of.iter().copied())
            .collect()
    }

    pub fn trainable_mask(&self) -> Vec<bool> {
        self.blocks
            .iter()
            .flat_map(|b| b.trainable.iter().copied())
            .collect()
    }

    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.nnz() {
            return Err(Error::invalid(format!(
                "expected {} values, got {}",
                self.nnz(),
                values.len()
            )));
        }
        for (b, chunk) in self.blocks.iter_mut().zip(values.chunks(self.n.max(1))) {
            b.value_of.copy_from_slice(chunk);
        }
        Ok(())
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for b in &mut self.blocks {
            b.trainable.iter_mut().for_each(|t| *t = trainable);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks
            .iter()
            .all(|b| b.value_of.iter().all(|v| v.is_finite()))
    }
}

/// Anything that can left-multiply a matrix.
pub trait SketchOperator {
    fn sketch_rows(&self) -> usize;
    fn sketch_cols(&self) -> usize;
    fn apply(&self, a: &DenseMatrix) -> Result<DenseMatrix>;
}

impl SketchOperator for SparseSketch {
    fn sketch_rows(&self) -> usize {
        self.m()
    }

    fn sketch_cols(&self) -> usize {
        self.n
    }

    fn apply(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        apply_sketch(self, a)
    }
}

/// Dense Gaussian sketch.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSketch {
    pub matrix: DenseMatrix,
}

impl SketchOperator for DenseSketch {
    fn sketch_rows(&self) -> usize {
        self.matrix.rows()
    }

    fn sketch_cols(&self) -> usize {
        self.matrix.cols()
    }

    fn apply(&self, a: &DenseMatrix) -> Result<DenseMatrix> {
        matmul(&self.matrix, a)
    }
}

/// CountSketch matrix: each column gets a uniformly random row and a
/// uniformly random sign, drawn from a ChaCha stream seeded by `seed`.
pub fn sparse_random_sketch(m: usize, n: usize, seed: u64) -> Result<SparseSketch> {
    if m == 0 || n == 0 {
        return Err(Error::invalid(format!(
            "sketch dimensions must be positive, got {m}x{n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let mut row_of = Vec::with_capacity(n);
    let mut value_of = Vec::with_capacity(n);
    for _ in 0..n {
        row_of.push(rng.random_range(0..m));
        value_of.push(if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    SparseSketch::single(m, row_of, value_of)
}

pub fn dense_random_sketch(m: usize, n: usize, seed: u64) -> DenseSketch {
    let mut rng = rng_from_seed(seed);
    DenseSketch {
        matrix: DenseMatrix::random_normal(m, n, &mut rng),
    }
}

/// `S · a` in `O(n·d)`: row `i` of `a` is scaled by its column's value and
/// added into that column's output row, columns visited in ascending order.
pub fn apply_sketch(s: &SparseSketch, a: &DenseMatrix) -> Result<DenseMatrix> {
    if s.n != a.rows() {
        return Err(Error::DimensionMismatch {
            op: "apply_sketch",
            left: (s.m(), s.n),
            right: a.shape(),
        });
    }
    let mut out = DenseMatrix::zeros(s.m(), a.cols());
    let mut offset = 0;
    for b in &s.blocks {
        for (i, (&r, &v)) in b.row_of.iter().zip(&b.value_of).enumerate() {
            let src = a.row(i);
            for (o, &x) in out.row_mut(offset + r).iter_mut().zip(src) {
                *o += v * x;
            }
        }
        offset += b.rows;
    }
    Ok(out)
}

pub fn densify(s: &SparseSketch) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(s.m(), s.n);
    let mut offset = 0;
    for b in &s.blocks {
        for (i, (&r, &v)) in b.row_of.iter().zip(&b.value_of).enumerate() {
            out[(offset + r, i)] += v;
        }
        offset += b.rows;
    }
    out
}

/// Stacks `s1` on top of `s2`. Block structure and trainable masks are kept.
pub fn concat_sketches(s1: &SparseSketch, s2: &SparseSketch) -> Result<SparseSketch> {
    if s1.n != s2.n {
        return Err(Error::DimensionMismatch {
            op: "concat_sketches",
            left: (s1.m(), s1.n),
            right: (s2.m(), s2.n),
        });
    }
    let mut blocks = s1.blocks.clone();
    blocks.extend(s2.blocks.iter().cloned());
    SparseSketch::from_blocks(s1.n, blocks)
}
