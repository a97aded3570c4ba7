//! Reverse-mode gradient engine over dense `f64` tensors.
//!
//! A `Graph` is a dynamic tape: operations compute values eagerly as nodes
//! are appended, and `backward` sweeps the tape once in reverse to fill
//! adjoints. Tensors are two-dimensional (`rows x cols`, row-major);
//! the only broadcasting is a one-row vector expanded over the point axis,
//! which is what concatenating a latent onto every point needs.

pub mod check;
pub mod gemm;

use std::sync::Arc;

use crate::error::{Error, Result};
use gemm::{gemm, Lay};

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub fn new(rows: usize, cols: usize) -> Shape {
        Shape { rows, cols }
    }

    pub fn scalar() -> Shape {
        Shape { rows: 1, cols: 1 }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }
}

/// Handle to a node in one specific `Graph`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Hash, PartialOrd, Ord)]
pub struct NodeId(u32);

impl NodeId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

enum Op {
    Leaf,
    /// `y = x * w^T + b` with `w: [out x in]`, `b: [1 x out]`, `x: [n x in]`.
    Linear {
        w: NodeId,
        b: NodeId,
        x: NodeId,
    },
    Relu(NodeId),
    Sin(NodeId),
    Cos(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Multiply column `j` by `scales[j]`.
    ColScale(NodeId, Vec<f64>),
    Square(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Column concatenation; `b` with a single row broadcasts over `a`'s rows.
    ConcatCols(NodeId, NodeId),
    ConcatRows(Vec<NodeId>),
    SliceCols {
        x: NodeId,
        start: usize,
    },
    SliceRows {
        x: NodeId,
        start: usize,
    },
    Gather {
        x: NodeId,
        rows: Vec<u32>,
    },
    /// Per-segment max over the row (point) axis, feature axis kept.
    /// `argmax` holds the winning global row per (segment, column),
    /// lowest index on ties.
    SegMax {
        x: NodeId,
        argmax: Vec<u32>,
    },
    /// Per-segment mean over the row axis.
    SegMean {
        x: NodeId,
        segs: Arc<Vec<u32>>,
    },
    /// Elementwise binary cross entropy from logits against a constant label,
    /// computed in stable logit form.
    SigmoidBce {
        logits: NodeId,
        label: f64,
    },
    /// Rigid transform of constant local points by a pose parameter row
    /// (`[tx,ty,theta]` in 2D, `[tx,ty,tz,yaw,pitch,roll]` in 3D).
    ApplyPose {
        pose: NodeId,
        pts: Arc<Vec<f64>>,
        dim: usize,
    },
    /// Points strictly between an origin and each target point:
    /// `out[i*per+j] = o + fracs[i*per+j] * (pts[i] - o)`.
    Lerp {
        origin: NodeId,
        pts: NodeId,
        fracs: Arc<Vec<f64>>,
        per: usize,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Relu(_) => "relu",
            Op::Sin(_) => "sin",
            Op::Cos(_) => "cos",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::ColScale(..) => "col_scale",
            Op::Square(_) => "square",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(_) => "concat_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::Gather { .. } => "gather",
            Op::SegMax { .. } => "max_over_points",
            Op::SegMean { .. } => "seg_mean",
            Op::SigmoidBce { .. } => "sigmoid_bce",
            Op::ApplyPose { .. } => "apply_pose",
            Op::Lerp { .. } => "lerp",
        }
    }
}

struct Node {
    shape: Shape,
    value: Vec<f64>,
    adjoint: Option<Vec<f64>>,
    op: Op,
}

/// Dynamic reverse-mode tape. Build one per forward pass and discard it;
/// parameter values are snapshotted into leaves at construction time.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.idx()].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.idx()].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert!(self.nodes[id.idx()].shape.is_scalar());
        self.nodes[id.idx()].value[0]
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.idx()].op.name()
    }

    /// Adjoint of `id` after `backward`; `None` means exactly zero
    /// (the node is not an ancestor of the root).
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.idx()].adjoint.as_deref()
    }

    /// Adjoint of `id` as a dense buffer, zeros when untouched.
    pub fn grad_dense(&self, id: NodeId) -> Vec<f64> {
        match self.grad(id) {
            Some(g) => g.to_vec(),
            None => vec![0.0; self.shape(id).len()],
        }
    }

    fn push(&mut self, shape: Shape, value: Vec<f64>, op: Op) -> Result<NodeId> {
        debug_assert_eq!(shape.len(), value.len());
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::numeric(format!(
                "non-finite forward value in op `{}`",
                op.name()
            )));
        }
        let id = NodeId(self.nodes.len() as u32);
        self.nodes.push(Node {
            shape,
            value,
            adjoint: None,
            op,
        });
        Ok(id)
    }

    fn usage(op: &str, msg: &str) -> Error {
        Error::usage(format!("{op}: {msg}"))
    }

    /// New leaf holding `data`; gradients accumulate here.
    pub fn leaf(&mut self, shape: Shape, data: Vec<f64>) -> Result<NodeId> {
        if shape.len() != data.len() {
            return Err(Self::usage("leaf", "shape/data length mismatch"));
        }
        self.push(shape, data, Op::Leaf)
    }

    pub fn leaf_row(&mut self, data: &[f64]) -> Result<NodeId> {
        self.leaf(Shape::new(1, data.len()), data.to_vec())
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        self.leaf(Shape::scalar(), vec![v])
    }

    pub fn linear(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let (sw, sb, sx) = (self.shape(w), self.shape(b), self.shape(x));
        let (out_dim, in_dim) = (sw.rows, sw.cols);
        if sx.cols != in_dim {
            return Err(Self::usage("linear", "input width does not match weight fan-in"));
        }
        if sb.rows != 1 || sb.cols != out_dim {
            return Err(Self::usage("linear", "bias must be a 1-row vector of fan-out width"));
        }
        let n = sx.rows;
        let mut y = Vec::with_capacity(n * out_dim);
        for _ in 0..n {
            y.extend_from_slice(&self.nodes[b.idx()].value);
        }
        gemm(
            n,
            in_dim,
            out_dim,
            1.0,
            &self.nodes[x.idx()].value,
            Lay::N,
            &self.nodes[w.idx()].value,
            Lay::T,
            1.0,
            &mut y,
        );
        self.push(Shape::new(n, out_dim), y, Op::Linear { w, b, x })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let y: Vec<f64> = self.nodes[x.idx()].value.iter().map(|&v| v.max(0.0)).collect();
        self.push(s, y, Op::Relu(x))
    }

    pub fn sin(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let y: Vec<f64> = self.nodes[x.idx()].value.iter().map(|v| v.sin()).collect();
        self.push(s, y, Op::Sin(x))
    }

    pub fn cos(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let y: Vec<f64> = self.nodes[x.idx()].value.iter().map(|v| v.cos()).collect();
        self.push(s, y, Op::Cos(x))
    }

    fn binary_same_shape(
        &mut self,
        opname: &str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Self::usage(opname, "operand shapes differ"));
        }
        let y: Vec<f64> = self.nodes[a.idx()]
            .value
            .iter()
            .zip(&self.nodes[b.idx()].value)
            .map(|(&u, &v)| f(u, v))
            .collect();
        self.push(sa, y, op)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("add", a, b, |u, v| u + v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("sub", a, b, |u, v| u - v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary_same_shape("mul", a, b, |u, v| u * v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, k: f64) -> Result<NodeId> {
        let s = self.shape(x);
        let y: Vec<f64> = self.nodes[x.idx()].value.iter().map(|&v| k * v).collect();
        self.push(s, y, Op::Scale(x, k))
    }

    pub fn col_scale(&mut self, x: NodeId, scales: &[f64]) -> Result<NodeId> {
        let s = self.shape(x);
        if scales.len() != s.cols {
            return Err(Self::usage("col_scale", "one scale per column required"));
        }
        let mut y = self.nodes[x.idx()].value.clone();
        for row in y.chunks_exact_mut(s.cols) {
            for (v, k) in row.iter_mut().zip(scales) {
                *v *= k;
            }
        }
        self.push(s, y, Op::ColScale(x, scales.to_vec()))
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.shape(x);
        let y: Vec<f64> = self.nodes[x.idx()].value.iter().map(|&v| v * v).collect();
        self.push(s, y, Op::Square(x))
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let total: f64 = self.nodes[x.idx()].value.iter().sum();
        self.push(Shape::scalar(), vec![total], Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let v = &self.nodes[x.idx()].value;
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.push(Shape::scalar(), vec![m], Op::Mean(x))
    }

    /// Column concatenation `[a | b]`; a one-row `b` is repeated over
    /// `a`'s rows (latent-over-points expansion).
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.rows != sa.rows && sb.rows != 1 {
            return Err(Self::usage(
                "concat_cols",
                "row counts differ and right operand is not a single row",
            ));
        }
        let cols = sa.cols + sb.cols;
        let mut y = Vec::with_capacity(sa.rows * cols);
        for r in 0..sa.rows {
            let ar = &self.nodes[a.idx()].value[r * sa.cols..(r + 1) * sa.cols];
            let br_row = if sb.rows == 1 { 0 } else { r };
            let br = &self.nodes[b.idx()].value[br_row * sb.cols..(br_row + 1) * sb.cols];
            y.extend_from_slice(ar);
            y.extend_from_slice(br);
        }
        self.push(Shape::new(sa.rows, cols), y, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Self::usage("concat_rows", "needs at least one part"));
        }
        let cols = self.shape(parts[0]).cols;
        if parts.iter().any(|&p| self.shape(p).cols != cols) {
            return Err(Self::usage("concat_rows", "column counts differ"));
        }
        let rows: usize = parts.iter().map(|&p| self.shape(p).rows).sum();
        let mut y = Vec::with_capacity(rows * cols);
        for &p in parts {
            y.extend_from_slice(&self.nodes[p.idx()].value);
        }
        self.push(Shape::new(rows, cols), y, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if start + len > s.cols || len == 0 {
            return Err(Self::usage("slice_cols", "column range out of bounds"));
        }
        let mut y = Vec::with_capacity(s.rows * len);
        for row in self.nodes[x.idx()].value.chunks_exact(s.cols) {
            y.extend_from_slice(&row[start..start + len]);
        }
        self.push(Shape::new(s.rows, len), y, Op::SliceCols { x, start })
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let s = self.shape(x);
        if start + len > s.rows || len == 0 {
            return Err(Self::usage("slice_rows", "row range out of bounds"));
        }
        let y = self.nodes[x.idx()].value[start * s.cols..(start + len) * s.cols].to_vec();
        self.push(Shape::new(len, s.cols), y, Op::SliceRows { x, start })
    }

    /// Select rows of `x` (repeats allowed); gradients accumulate back
    /// into the gathered sources.
    pub fn gather(&mut self, x: NodeId, rows: &[u32]) -> Result<NodeId> {
        let s = self.shape(x);
        if rows.iter().any(|&r| r as usize >= s.rows) {
            return Err(Self::usage("gather", "row index out of bounds"));
        }
        if rows.is_empty() {
            return Err(Self::usage("gather", "empty index list"));
        }
        let mut y = Vec::with_capacity(rows.len() * s.cols);
        for &r in rows {
            let r = r as usize;
            y.extend_from_slice(&self.nodes[x.idx()].value[r * s.cols..(r + 1) * s.cols]);
        }
        self.push(
            Shape::new(rows.len(), s.cols),
            y,
            Op::Gather {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Max over the point (row) axis within each segment, keeping the
    /// feature axis. `segs` are row offsets, strictly increasing, covering
    /// all rows. Ties break to the lowest row index.
    pub fn seg_max(&mut self, x: NodeId, segs: Arc<Vec<u32>>) -> Result<NodeId> {
        let s = self.shape(x);
        Self::validate_segs(&segs, s.rows, "max_over_points")?;
        let nseg = segs.len() - 1;
        let mut y = vec![f64::NEG_INFINITY; nseg * s.cols];
        let mut argmax = vec![0u32; nseg * s.cols];
        let v = &self.nodes[x.idx()].value;
        for f in 0..nseg {
            let (lo, hi) = (segs[f] as usize, segs[f + 1] as usize);
            for r in lo..hi {
                for c in 0..s.cols {
                    let val = v[r * s.cols + c];
                    if val > y[f * s.cols + c] || r == lo {
                        y[f * s.cols + c] = val;
                        argmax[f * s.cols + c] = r as u32;
                    }
                }
            }
        }
        self.push(Shape::new(nseg, s.cols), y, Op::SegMax { x, argmax })
    }

    /// Max over all rows: single-segment `seg_max`.
    pub fn max_over_points(&mut self, x: NodeId) -> Result<NodeId> {
        let rows = self.shape(x).rows;
        self.seg_max(x, Arc::new(vec![0, rows as u32]))
    }

    /// Per-segment mean over rows.
    pub fn seg_mean(&mut self, x: NodeId, segs: Arc<Vec<u32>>) -> Result<NodeId> {
        let s = self.shape(x);
        Self::validate_segs(&segs, s.rows, "seg_mean")?;
        let nseg = segs.len() - 1;
        let mut y = vec![0.0; nseg * s.cols];
        let v = &self.nodes[x.idx()].value;
        for f in 0..nseg {
            let (lo, hi) = (segs[f] as usize, segs[f + 1] as usize);
            for r in lo..hi {
                for c in 0..s.cols {
                    y[f * s.cols + c] += v[r * s.cols + c];
                }
            }
            let inv = 1.0 / (hi - lo) as f64;
            for c in 0..s.cols {
                y[f * s.cols + c] *= inv;
            }
        }
        self.push(Shape::new(nseg, s.cols), y, Op::SegMean { x, segs })
    }

    fn validate_segs(segs: &[u32], rows: usize, op: &str) -> Result<()> {
        let ok = segs.len() >= 2
            && segs[0] == 0
            && *segs.last().unwrap() as usize == rows
            && segs.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(Self::usage(op, "invalid segment offsets"))
        }
    }

    /// Elementwise `BCE(sigmoid(x), label)` in stable logit form:
    /// `max(x,0) - x*label + ln(1 + exp(-|x|))`.
    pub fn sigmoid_bce(&mut self, logits: NodeId, label: f64) -> Result<NodeId> {
        if label != 0.0 && label != 1.0 {
            return Err(Self::usage("sigmoid_bce", "label must be 0 or 1"));
        }
        let s = self.shape(logits);
        let y: Vec<f64> = self.nodes[logits.idx()]
            .value
            .iter()
            .map(|&x| x.max(0.0) - x * label + (-x.abs()).exp().ln_1p())
            .collect();
        self.push(s, y, Op::SigmoidBce { logits, label })
    }

    /// Rigid transform of constant points by a differentiable pose row.
    /// `pts` is a flat row-major `n x dim` buffer.
    pub fn apply_pose(&mut self, pose: NodeId, pts: Arc<Vec<f64>>, dim: usize) -> Result<NodeId> {
        let sp = self.shape(pose);
        let nparams = match dim {
            2 => 3,
            3 => 6,
            _ => return Err(Self::usage("apply_pose", "dim must be 2 or 3")),
        };
        if sp.rows != 1 || sp.cols != nparams {
            return Err(Self::usage("apply_pose", "pose row has wrong parameter count"));
        }
        if pts.is_empty() || !pts.len().is_multiple_of(dim) {
            return Err(Self::usage("apply_pose", "bad point buffer length"));
        }
        let p = &self.nodes[pose.idx()].value;
        let n = pts.len() / dim;
        let mut y = vec![0.0; pts.len()];
        match dim {
            2 => {
                let (s, c) = p[2].sin_cos();
                for i in 0..n {
                    let (x, v) = (pts[2 * i], pts[2 * i + 1]);
                    y[2 * i] = c * x - s * v + p[0];
                    y[2 * i + 1] = s * x + c * v + p[1];
                }
            }
            _ => {
                let r = crate::geometry::rot3(p[3], p[4], p[5]);
                for i in 0..n {
                    let q = &pts[3 * i..3 * i + 3];
                    for k in 0..3 {
                        y[3 * i + k] =
                            r[3 * k] * q[0] + r[3 * k + 1] * q[1] + r[3 * k + 2] * q[2] + p[k];
                    }
                }
            }
        }
        self.push(Shape::new(n, dim), y, Op::ApplyPose { pose, pts, dim })
    }

    /// `per` points strictly between `origin` (1 row) and every row of `pts`,
    /// at the given interpolation fractions (`fracs.len() == pts.rows * per`).
    pub fn lerp_to_points(
        &mut self,
        origin: NodeId,
        pts: NodeId,
        fracs: Arc<Vec<f64>>,
        per: usize,
    ) -> Result<NodeId> {
        let (so, sp) = (self.shape(origin), self.shape(pts));
        if so.rows != 1 || so.cols != sp.cols {
            return Err(Self::usage("lerp", "origin must be one row of matching width"));
        }
        if per == 0 || fracs.len() != sp.rows * per {
            return Err(Self::usage("lerp", "fraction count must be rows * per"));
        }
        let d = sp.cols;
        let o = &self.nodes[origin.idx()].value;
        let v = &self.nodes[pts.idx()].value;
        let mut y = vec![0.0; sp.rows * per * d];
        for i in 0..sp.rows {
            for j in 0..per {
                let t = fracs[i * per + j];
                let row = (i * per + j) * d;
                for c in 0..d {
                    y[row + c] = o[c] + t * (v[i * d + c] - o[c]);
                }
            }
        }
        self.push(
            Shape::new(sp.rows * per, d),
            y,
            Op::Lerp {
                origin,
                pts,
                fracs,
                per,
            },
        )
    }

    /// Reverse sweep from a scalar root. Each parameter leaf's adjoint
    /// afterwards equals the root's partial derivative with respect to it.
    pub fn backward(&mut self, root: NodeId) -> Result<()> {
        if !self.shape(root).is_scalar() {
            return Err(Self::usage("backward", "root must be scalar"));
        }
        for n in &mut self.nodes {
            n.adjoint = None;
        }
        self.nodes[root.idx()].adjoint = Some(vec![1.0]);
        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].adjoint.is_none() {
                continue;
            }
            self.propagate(i);
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize) {
        let (before, rest) = self.nodes.split_at_mut(i);
        let node = &rest[0];
        let dy = node.adjoint.as_deref().expect("adjoint present");
        let shape = node.shape;
        match &node.op {
            Op::Leaf => {}
            Op::Linear { w, b, x } => {
                let (w, b, x) = (*w, *b, *x);
                let (n, out_dim) = (shape.rows, shape.cols);
                let in_dim = before[x.idx()].shape.cols;
                // dX += dY * W
                {
                    let wv = std::mem::take(&mut before[w.idx()].value);
                    let dx = adj(before, x);
                    gemm(n, out_dim, in_dim, 1.0, dy, Lay::N, &wv, Lay::N, 1.0, dx);
                    before[w.idx()].value = wv;
                }
                // dW += dY^T * X
                {
                    let xv = std::mem::take(&mut before[x.idx()].value);
                    let dw = adj(before, w);
                    gemm(out_dim, n, in_dim, 1.0, dy, Lay::T, &xv, Lay::N, 1.0, dw);
                    before[x.idx()].value = xv;
                }
                // db += column sums of dY
                let db = adj(before, b);
                for row in dy.chunks_exact(out_dim) {
                    for (d, g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
            }
            Op::Relu(x) => {
                let x = *x;
                let xv = std::mem::take(&mut before[x.idx()].value);
                let dx = adj(before, x);
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    if v > 0.0 {
                        *d += g;
                    }
                }
                before[x.idx()].value = xv;
            }
            Op::Sin(x) => {
                let x = *x;
                let xv = std::mem::take(&mut before[x.idx()].value);
                let dx = adj(before, x);
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    *d += g * v.cos();
                }
                before[x.idx()].value = xv;
            }
            Op::Cos(x) => {
                let x = *x;
                let xv = std::mem::take(&mut before[x.idx()].value);
                let dx = adj(before, x);
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    *d -= g * v.sin();
                }
                before[x.idx()].value = xv;
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                for (d, g) in adj(before, a).iter_mut().zip(dy) {
                    *d += g;
                }
                for (d, g) in adj(before, b).iter_mut().zip(dy) {
                    *d += g;
                }
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                for (d, g) in adj(before, a).iter_mut().zip(dy) {
                    *d += g;
                }
                for (d, g) in adj(before, b).iter_mut().zip(dy) {
                    *d -= g;
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let bv = std::mem::take(&mut before[b.idx()].value);
                for ((d, g), &v) in adj(before, a).iter_mut().zip(dy).zip(&bv) {
                    *d += g * v;
                }
                before[b.idx()].value = bv;
                let av = std::mem::take(&mut before[a.idx()].value);
                for ((d, g), &v) in adj(before, b).iter_mut().zip(dy).zip(&av) {
                    *d += g * v;
                }
                before[a.idx()].value = av;
            }
            Op::Scale(x, k) => {
                let (x, k) = (*x, *k);
                for (d, g) in adj(before, x).iter_mut().zip(dy) {
                    *d += k * g;
                }
            }
            Op::ColScale(x, scales) => {
                let x = *x;
                let cols = shape.cols;
                let scales = scales.clone();
                let dx = adj(before, x);
                for (drow, grow) in dx.chunks_exact_mut(cols).zip(dy.chunks_exact(cols)) {
                    for ((d, g), k) in drow.iter_mut().zip(grow).zip(&scales) {
                        *d += g * k;
                    }
                }
            }
            Op::Square(x) => {
                let x = *x;
                let xv = std::mem::take(&mut before[x.idx()].value);
                let dx = adj(before, x);
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    *d += 2.0 * v * g;
                }
                before[x.idx()].value = xv;
            }
            Op::Sum(x) => {
                let x = *x;
                let g = dy[0];
                for d in adj(before, x).iter_mut() {
                    *d += g;
                }
            }
            Op::Mean(x) => {
                let x = *x;
                let len = before[x.idx()].shape.len();
                let g = dy[0] / len as f64;
                for d in adj(before, x).iter_mut() {
                    *d += g;
                }
            }
            Op::ConcatCols(a, b) => {
                let (a, b) = (*a, *b);
                let (sa, sb) = (before[a.idx()].shape, before[b.idx()].shape);
                let cols = shape.cols;
                {
                    let da = adj(before, a);
                    for r in 0..sa.rows {
                        let grow = &dy[r * cols..r * cols + sa.cols];
                        for (d, g) in da[r * sa.cols..(r + 1) * sa.cols].iter_mut().zip(grow) {
                            *d += g;
                        }
                    }
                }
                let db = adj(before, b);
                for r in 0..sa.rows {
                    let grow = &dy[r * cols + sa.cols..(r + 1) * cols];
                    let br = if sb.rows == 1 { 0 } else { r };
                    for (d, g) in db[br * sb.cols..(br + 1) * sb.cols].iter_mut().zip(grow) {
                        *d += g;
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let cols = shape.cols;
                let mut row = 0usize;
                for p in parts {
                    let rows = before[p.idx()].shape.rows;
                    let dp = adj(before, p);
                    for (d, g) in dp
                        .iter_mut()
                        .zip(&dy[row * cols..(row + rows) * cols])
                    {
                        *d += g;
                    }
                    row += rows;
                }
            }
            Op::SliceCols { x, start } => {
                let (x, start) = (*x, *start);
                let src_cols = before[x.idx()].shape.cols;
                let dx = adj(before, x);
                for (r, grow) in dy.chunks_exact(shape.cols).enumerate() {
                    let base = r * src_cols + start;
                    for (d, g) in dx[base..base + shape.cols].iter_mut().zip(grow) {
                        *d += g;
                    }
                }
            }
            Op::SliceRows { x, start } => {
                let (x, start) = (*x, *start);
                let cols = shape.cols;
                let dx = adj(before, x);
                for (d, g) in dx[start * cols..(start + shape.rows) * cols]
                    .iter_mut()
                    .zip(dy)
                {
                    *d += g;
                }
            }
            Op::Gather { x, rows } => {
                let x = *x;
                let rows = rows.clone();
                let cols = shape.cols;
                let dx = adj(before, x);
                for (i, &r) in rows.iter().enumerate() {
                    let r = r as usize;
                    for (d, g) in dx[r * cols..(r + 1) * cols]
                        .iter_mut()
                        .zip(&dy[i * cols..(i + 1) * cols])
                    {
                        *d += g;
                    }
                }
            }
            Op::SegMax { x, argmax } => {
                let x = *x;
                let argmax = argmax.clone();
                let cols = shape.cols;
                let dx = adj(before, x);
                for (i, &src) in argmax.iter().enumerate() {
                    let c = i % cols;
                    dx[src as usize * cols + c] += dy[i];
                }
            }
            Op::SegMean { x, segs } => {
                let x = *x;
                let segs = segs.clone();
                let cols = shape.cols;
                let dx = adj(before, x);
                for f in 0..segs.len() - 1 {
                    let (lo, hi) = (segs[f] as usize, segs[f + 1] as usize);
                    let inv = 1.0 / (hi - lo) as f64;
                    for r in lo..hi {
                        for c in 0..cols {
                            dx[r * cols + c] += dy[f * cols + c] * inv;
                        }
                    }
                }
            }
            Op::SigmoidBce { logits, label } => {
                let (x, label) = (*logits, *label);
                let xv = std::mem::take(&mut before[x.idx()].value);
                let dx = adj(before, x);
                for ((d, g), &v) in dx.iter_mut().zip(dy).zip(&xv) {
                    *d += g * (sigmoid(v) - label);
                }
                before[x.idx()].value = xv;
            }
            Op::ApplyPose { pose, pts, dim } => {
                let (pose, dim) = (*pose, *dim);
                let pts = pts.clone();
                let pv = std::mem::take(&mut before[pose.idx()].value);
                let dp = adj(before, pose);
                let n = pts.len() / dim;
                if dim == 2 {
                    let (s, c) = pv[2].sin_cos();
                    for i in 0..n {
                        let (x, y) = (pts[2 * i], pts[2 * i + 1]);
                        let (gx, gy) = (dy[2 * i], dy[2 * i + 1]);
                        dp[0] += gx;
                        dp[1] += gy;
                        dp[2] += gx * (-s * x - c * y) + gy * (c * x - s * y);
                    }
                } else {
                    let grads = rot3_partials(pv[3], pv[4], pv[5]);
                    for i in 0..n {
                        let q = &pts[3 * i..3 * i + 3];
                        let g = &dy[3 * i..3 * i + 3];
                        dp[0] += g[0];
                        dp[1] += g[1];
                        dp[2] += g[2];
                        for (a, da) in grads.iter().enumerate() {
                            let mut acc = 0.0;
                            for k in 0..3 {
                                acc += g[k]
                                    * (da[3 * k] * q[0] + da[3 * k + 1] * q[1] + da[3 * k + 2] * q[2]);
                            }
                            dp[3 + a] += acc;
                        }
                    }
                }
                before[pose.idx()].value = pv;
            }
            Op::Lerp {
                origin,
                pts,
                fracs,
                per,
            } => {
                let (origin, pts, per) = (*origin, *pts, *per);
                let fracs = fracs.clone();
                let d = shape.cols;
                let n = before[pts.idx()].shape.rows;
                {
                    let dpts = adj(before, pts);
                    for i in 0..n {
                        for j in 0..per {
                            let t = fracs[i * per + j];
                            let row = (i * per + j) * d;
                            for c in 0..d {
                                dpts[i * d + c] += t * dy[row + c];
                            }
                        }
                    }
                }
                let dorg = adj(before, origin);
                for i in 0..n {
                    for j in 0..per {
                        let t = fracs[i * per + j];
                        let row = (i * per + j) * d;
                        for c in 0..d {
                            dorg[c] += (1.0 - t) * dy[row + c];
                        }
                    }
                }
            }
        }
    }
}

/// Lazily allocated adjoint buffer of a parent node. Parents always precede
/// children on the tape, so during the reverse sweep they live in the slice
/// before the node being propagated.
fn adj(nodes: &mut [Node], id: NodeId) -> &mut Vec<f64> {
    let n = &mut nodes[id.idx()];
    let len = n.shape.len();
    n.adjoint.get_or_insert_with(|| vec![0.0; len])
}

/// Partial derivatives of the Z-Y-X rotation matrix with respect to
/// (yaw, pitch, roll), each row-major.
fn rot3_partials(yaw: f64, pitch: f64, roll: f64) -> [[f64; 9]; 3] {
    let (sy, cy) = yaw.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sr, cr) = roll.sin_cos();
    let d_yaw = [
        -sy * cp,
        -sy * sp * sr - cy * cr,
        -sy * sp * cr + cy * sr,
        cy * cp,
        cy * sp * sr - sy * cr,
        cy * sp * cr + sy * sr,
        0.0,
        0.0,
        0.0,
    ];
    let d_pitch = [
        -cy * sp,
        cy * cp * sr,
        cy * cp * cr,
        -sy * sp,
        sy * cp * sr,
        sy * cp * cr,
        -cp,
        -sp * sr,
        -sp * cr,
    ];
    let d_roll = [
        0.0,
        cy * sp * cr + sy * sr,
        -cy * sp * sr + sy * cr,
        0.0,
        sy * sp * cr - cy * sr,
        -sy * sp * sr - cy * cr,
        0.0,
        cp * cr,
        -cp * sr,
    ];
    [d_yaw, d_pitch, d_roll]
}
