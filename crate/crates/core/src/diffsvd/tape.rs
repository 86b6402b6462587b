//! Explicit reverse-mode tape over small matrix/vector primitives.
//!
//! Every value is a [`DenseMatrix`]; vectors are `len × 1` and scalars
//! `1 × 1`. Nodes are appended in evaluation order and only reference earlier
//! nodes, so the node list is already a topological order and the backward
//! sweep is a single reverse pass.

use std::sync::Arc;

use super::power::{divide, normalize, SIGMA_FLOOR};
use crate::linalg::{
    deflate, matmul, matmul_nt, matmul_tn, matvec, matvec_t, norm2, reconstruct,
    squared_frobenius_diff, DenseMatrix,
};
use crate::sketch::SparseSketch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    /// The sketch's stored values, flattened block-major.
    Param,
    Constant,
    /// `S(values) · A`; `rows[e]` and `cols[e]` locate stored entry `e`.
    ApplySketch {
        values: NodeId,
        rows: Arc<[usize]>,
        cols: Arc<[usize]>,
        a: Arc<DenseMatrix>,
    },
    MatVec {
        m: NodeId,
        x: NodeId,
    },
    MatTVec {
        m: NodeId,
        x: NodeId,
    },
    Normalize {
        x: NodeId,
    },
    Norm {
        x: NodeId,
    },
    /// `x / max(s, SIGMA_FLOOR)`.
    DivScalar {
        x: NodeId,
        s: NodeId,
    },
    /// `m − σ·u·vᵀ`.
    Deflate {
        m: NodeId,
        sigma: NodeId,
        u: NodeId,
        v: NodeId,
    },
    StackColumns(Vec<NodeId>),
    /// Constant matrix times node.
    MatMulConst {
        a: Arc<DenseMatrix>,
        b: NodeId,
    },
    /// `Σⱼ σⱼ uⱼ vⱼᵀ`.
    Reconstruct {
        us: Vec<NodeId>,
        sigmas: Vec<NodeId>,
        vs: Vec<NodeId>,
    },
    /// `a · bᵀ`.
    MatMulNT {
        a: NodeId,
        b: NodeId,
    },
    /// `‖target − x‖_F²`.
    SquaredFrobDiff {
        target: Arc<DenseMatrix>,
        x: NodeId,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: DenseMatrix,
    requires_grad: bool,
}

/// Recorded forward computation, replayable backward.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param: Option<NodeId>,
    mask: Vec<bool>,
    output: Option<NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &DenseMatrix {
        &self.nodes[id.0].value
    }

    fn vec(&self, id: NodeId) -> &[f64] {
        self.nodes[id.0].value.as_slice()
    }

    fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value.as_slice()[0]
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: DenseMatrix, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// The output scalar, once [`set_output`](Self::set_output) was called.
    pub fn output(&self) -> Option<NodeId> {
        self.output
    }

    pub fn output_value(&self) -> Option<f64> {
        self.output.map(|id| self.scalar(id))
    }

    pub fn set_output(&mut self, id: NodeId) {
        assert_eq!(self.value(id).shape(), (1, 1), "output must be scalar");
        self.output = Some(id);
    }

    /// Registers the sketch values as the differentiable leaf. Only one
    /// parameter node per tape.
    pub fn param(&mut self, sketch: &SparseSketch) -> NodeId {
        assert!(self.param.is_none(), "tape already has a parameter");
        let id = self.push(Op::Param, DenseMatrix::column_vector(sketch.values()), true);
        self.param = Some(id);
        self.mask = sketch.trainable_mask();
        id
    }

    pub fn constant(&mut self, value: DenseMatrix) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn apply_sketch(
        &mut self,
        values: NodeId,
        sketch: &SparseSketch,
        a: Arc<DenseMatrix>,
    ) -> NodeId {
        let mut s = sketch.clone();
        s.set_values(self.vec(values))
            .expect("value count matches sketch");
        let out = crate::sketch::apply_sketch(&s, &a).expect("sketch matches matrix");
        let n = sketch.n();
        let rows: Arc<[usize]> = sketch.row_of().into();
        let cols: Arc<[usize]> = (0..sketch.nnz()).map(|e| e % n).collect();
        let rg = self.needs(values);
        self.push(
            Op::ApplySketch {
                values,
                rows,
                cols,
                a,
            },
            out,
            rg,
        )
    }

    pub fn matvec(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let y = matvec(self.value(m), self.vec(x));
        let rg = self.needs(m) || self.needs(x);
        self.push(Op::MatVec { m, x }, DenseMatrix::column_vector(y), rg)
    }

    pub fn matvec_t(&mut self, m: NodeId, x: NodeId) -> NodeId {
        let y = matvec_t(self.value(m), self.vec(x));
        let rg = self.needs(m) || self.needs(x);
        self.push(Op::MatTVec { m, x }, DenseMatrix::column_vector(y), rg)
    }

    pub fn normalize(&mut self, x: NodeId) -> NodeId {
        let y = normalize(self.vec(x));
        let rg = self.needs(x);
        self.push(Op::Normalize { x }, DenseMatrix::column_vector(y), rg)
    }

    pub fn norm(&mut self, x: NodeId) -> NodeId {
        let s = norm2(self.vec(x));
        let rg = self.needs(x);
        self.push(Op::Norm { x }, DenseMatrix::scalar(s), rg)
    }

    pub fn div_scalar(&mut self, x: NodeId, s: NodeId) -> NodeId {
        let y = divide(self.vec(x), self.scalar(s));
        let rg = self.needs(x) || self.needs(s);
        self.push(Op::DivScalar { x, s }, DenseMatrix::column_vector(y), rg)
    }

    pub fn deflate(&mut self, m: NodeId, sigma: NodeId, u: NodeId, v: NodeId) -> NodeId {
        let out = deflate(self.value(m), self.scalar(sigma), self.vec(u), self.vec(v));
        let rg = [m, sigma, u, v].iter().any(|&i| self.needs(i));
        self.push(Op::Deflate { m, sigma, u, v }, out, rg)
    }

    pub fn stack_columns(&mut self, cols: Vec<NodeId>, rows: usize) -> NodeId {
        let refs: Vec<&[f64]> = cols.iter().map(|&c| self.vec(c)).collect();
        let out = DenseMatrix::from_columns(&refs, rows);
        let rg = cols.iter().any(|&c| self.needs(c));
        self.push(Op::StackColumns(cols), out, rg)
    }

    pub fn matmul_const(&mut self, a: Arc<DenseMatrix>, b: NodeId) -> NodeId {
        let out = matmul(&a, self.value(b)).expect("matmul_const shapes");
        let rg = self.needs(b);
        self.push(Op::MatMulConst { a, b }, out, rg)
    }

    pub fn reconstruct(
        &mut self,
        us: Vec<NodeId>,
        sigmas: Vec<NodeId>,
        vs: Vec<NodeId>,
        rows: usize,
        cols: usize,
    ) -> NodeId {
        let uv: Vec<Vec<f64>> = us.iter().map(|&u| self.vec(u).to_vec()).collect();
        let vv: Vec<Vec<f64>> = vs.iter().map(|&v| self.vec(v).to_vec()).collect();
        let sv: Vec<f64> = sigmas.iter().map(|&s| self.scalar(s)).collect();
        let out = reconstruct(&uv, &sv, &vv, rows, cols);
        let rg = us.iter().chain(&sigmas).chain(&vs).any(|&i| self.needs(i));
        self.push(Op::Reconstruct { us, sigmas, vs }, out, rg)
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let out = matmul_nt(self.value(a), self.value(b)).expect("matmul_nt shapes");
        let rg = self.needs(a) || self.needs(b);
        self.push(Op::MatMulNT { a, b }, out, rg)
    }

    pub fn squared_frob_diff(&mut self, target: Arc<DenseMatrix>, x: NodeId) -> NodeId {
        let s = squared_frobenius_diff(&target, self.value(x));
        let rg = self.needs(x);
        self.push(
            Op::SquaredFrobDiff { target, x },
            DenseMatrix::scalar(s),
            rg,
        )
    }

    /// Reverse sweep from the output. Returns `∂output/∂values`, aligned with
    /// [`SparseSketch::values`], with masked (non-trainable) entries forced to
    /// zero.
    pub fn backward(&self) -> Vec<f64> {
        let (Some(param), Some(output)) = (self.param, self.output) else {
            return Vec::new();
        };
        let mut adj: Vec<Option<DenseMatrix>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(DenseMatrix::scalar(1.0));

        for i in (0..=output.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Param) {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(&node.op, &node.value, &g, &mut adj);
        }

        let grad = adj[param.0]
            .take()
            .map(|g| g.into_vec())
            .unwrap_or_else(|| vec![0.0; self.mask.len()]);
        grad.into_iter()
            .zip(&self.mask)
            .map(|(g, &trainable)| if trainable { g } else { 0.0 })
            .collect()
    }

    fn propagate(
        &self,
        op: &Op,
        out: &DenseMatrix,
        g: &DenseMatrix,
        adj: &mut [Option<DenseMatrix>],
    ) {
        match op {
            Op::Param | Op::Constant => {}
            Op::ApplySketch {
                values,
                rows,
                cols,
                a,
            } => {
                let gv = slot(adj, *values, self.value(*values).shape());
                for (e, gvx) in gv.as_mut_slice().iter_mut().enumerate() {
                    let grow = g.row(rows[e]);
                    let arow = a.row(cols[e]);
                    *gvx += grow.iter().zip(arow).map(|(x, y)| x * y).sum::<f64>();
                }
            }
            Op::MatVec { m, x } => {
                let gy = g.as_slice();
                if self.needs(*m) {
                    let xv = self.vec(*x);
                    let gm = slot(adj, *m, self.value(*m).shape());
                    for (r, &gr) in gy.iter().enumerate() {
                        for (o, &xc) in gm.row_mut(r).iter_mut().zip(xv) {
                            *o += gr * xc;
                        }
                    }
                }
                if self.needs(*x) {
                    let d = matvec_t(self.value(*m), gy);
                    add_vec(slot(adj, *x, self.value(*x).shape()), &d);
                }
            }
            Op::MatTVec { m, x } => {
                let gy = g.as_slice();
                if self.needs(*m) {
                    let xv = self.vec(*x);
                    let gm = slot(adj, *m, self.value(*m).shape());
                    for (r, &xr) in xv.iter().enumerate() {
                        for (o, &gc) in gm.row_mut(r).iter_mut().zip(gy) {
                            *o += xr * gc;
                        }
                    }
                }
                if self.needs(*x) {
                    let d = matvec(self.value(*m), gy);
                    add_vec(slot(adj, *x, self.value(*x).shape()), &d);
                }
            }
            Op::Normalize { x } => {
                let xv = self.vec(*x);
                let n = norm2(xv);
                let gy = g.as_slice();
                let y = out.as_slice();
                let d: Vec<f64> = if n > f64::MIN_POSITIVE {
                    let proj: f64 = y.iter().zip(gy).map(|(a, b)| a * b).sum();
                    gy.iter()
                        .zip(y)
                        .map(|(gi, yi)| (gi - yi * proj) / n)
                        .collect()
                } else {
                    gy.iter().map(|gi| gi / f64::MIN_POSITIVE).collect()
                };
                add_vec(slot(adj, *x, (xv.len(), 1)), &d);
            }
            Op::Norm { x } => {
                let xv = self.vec(*x);
                let n = out.as_slice()[0];
                if n > 0.0 {
                    let gs = g.as_slice()[0];
                    let d: Vec<f64> = xv.iter().map(|xi| gs * xi / n).collect();
                    add_vec(slot(adj, *x, (xv.len(), 1)), &d);
                }
            }
            Op::DivScalar { x, s } => {
                let sv = self.scalar(*s);
                let c = sv.max(SIGMA_FLOOR);
                let gy = g.as_slice();
                if self.needs(*x) {
                    let d: Vec<f64> = gy.iter().map(|gi| gi / c).collect();
                    add_vec(slot(adj, *x, self.value(*x).shape()), &d);
                }
                if self.needs(*s) && sv > SIGMA_FLOOR {
                    let gdot: f64 = gy.iter().zip(out.as_slice()).map(|(a, b)| a * b).sum();
                    slot(adj, *s, (1, 1)).as_mut_slice()[0] -= gdot / c;
                }
            }
            Op::Deflate { m, sigma, u, v } => {
                let sv = self.scalar(*sigma);
                let uv = self.vec(*u);
                let vv = self.vec(*v);
                if self.needs(*m) {
                    slot(adj, *m, g.shape()).add_assign(g);
                }
                let gv_vec = matvec(g, vv); // G v
                if self.needs(*sigma) {
                    let d: f64 = uv.iter().zip(&gv_vec).map(|(a, b)| a * b).sum();
                    slot(adj, *sigma, (1, 1)).as_mut_slice()[0] -= d;
                }
                if self.needs(*u) {
                    let d: Vec<f64> = gv_vec.iter().map(|x| -sv * x).collect();
                    add_vec(slot(adj, *u, (uv.len(), 1)), &d);
                }
                if self.needs(*v) {
                    let gtu = matvec_t(g, uv);
                    let d: Vec<f64> = gtu.iter().map(|x| -sv * x).collect();
                    add_vec(slot(adj, *v, (vv.len(), 1)), &d);
                }
            }
            Op::StackColumns(cols) => {
                for (j, &c) in cols.iter().enumerate() {
                    if self.needs(c) {
                        let d = g.column(j);
                        add_vec(slot(adj, c, (d.len(), 1)), &d);
                    }
                }
            }
            Op::MatMulConst { a, b } => {
                let d = matmul_tn(a, g).expect("shapes");
                slot(adj, *b, d.shape()).add_assign(&d);
            }
            Op::Reconstruct { us, sigmas, vs } => {
                for ((&u, &s), &v) in us.iter().zip(sigmas).zip(vs) {
                    let uv = self.vec(u);
                    let vv = self.vec(v);
                    let sv = self.scalar(s);
                    let gv = matvec(g, vv);
                    if self.needs(s) {
                        let d: f64 = uv.iter().zip(&gv).map(|(a, b)| a * b).sum();
                        slot(adj, s, (1, 1)).as_mut_slice()[0] += d;
                    }
                    if self.needs(u) {
                        let d: Vec<f64> = gv.iter().map(|x| sv * x).collect();
                        add_vec(slot(adj, u, (uv.len(), 1)), &d);
                    }
                    if self.needs(v) {
                        let d: Vec<f64> = matvec_t(g, uv).iter().map(|x| sv * x).collect();
                        add_vec(slot(adj, v, (vv.len(), 1)), &d);
                    }
                }
            }
            Op::MatMulNT { a, b } => {
                if self.needs(*a) {
                    let d = matmul(g, self.value(*b)).expect("shapes");
                    slot(adj, *a, d.shape()).add_assign(&d);
                }
                if self.needs(*b) {
                    let d = matmul_tn(g, self.value(*a)).expect("shapes");
                    slot(adj, *b, d.shape()).add_assign(&d);
                }
            }
            Op::SquaredFrobDiff { target, x } => {
                let gs = g.as_slice()[0];
                let xv = self.value(*x);
                let d: Vec<f64> = target
                    .as_slice()
                    .iter()
                    .zip(xv.as_slice())
                    .map(|(t, xi)| -2.0 * gs * (t - xi))
                    .collect();
                add_vec(slot(adj, *x, xv.shape()), &d);
            }
        }
    }
}

fn slot(adj: &mut [Option<DenseMatrix>], id: NodeId, shape: (usize, usize)) -> &mut DenseMatrix {
    adj[id.0].get_or_insert_with(|| DenseMatrix::zeros(shape.0, shape.1))
}

fn add_vec(dst: &mut DenseMatrix, src: &[f64]) {
    for (a, b) in dst.as_mut_slice().iter_mut().zip(src) {
        *a += b;
    }
}
