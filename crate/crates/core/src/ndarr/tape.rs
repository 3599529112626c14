use std::sync::Arc;

use super::array::matmul_into;
use super::sparse::{spmm_weights, spmm_weights_t};
use super::{CsrMatrix, DenseArray, NdError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceKind {
    Sum,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementwiseKind {
    Add,
    Sub,
    Hadamard,
    Scale(f64),
    Relu,
    LeakyRelu(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Binary(BinKind, Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LeakyRelu(Var, f64),
    Reshape(Var),
    Transpose(Var),
    Reduce {
        x: Var,
        axis: usize,
        kind: ReduceKind,
    },
    Broadcast {
        x: Var,
        axis: usize,
    },
    SoftmaxRows(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        rows: Vec<usize>,
        probs: DenseArray,
    },
    SumAll(Var),
    SpMM {
        mat: Arc<CsrMatrix>,
        x: Var,
    },
    EdgeSpMM {
        pattern: Arc<CsrMatrix>,
        w: Var,
        x: Var,
    },
    EdgeSoftmax {
        pattern: Arc<CsrMatrix>,
        s: Var,
    },
    EdgeScores {
        pattern: Arc<CsrMatrix>,
        src: Var,
        dst: Var,
    },
    AxisMix {
        x: Var,
        t: Arc<DenseArray>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Binary(BinKind::Add, ..) => "add",
            Op::Binary(BinKind::Sub, ..) => "sub",
            Op::Binary(BinKind::Mul, ..) => "hadamard",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Reshape(_) => "reshape",
            Op::Transpose(_) => "transpose",
            Op::Reduce { .. } => "reduce_axis",
            Op::Broadcast { .. } => "broadcast",
            Op::SoftmaxRows(_) => "softmax_rows",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::SumAll(_) => "sum_all",
            Op::SpMM { .. } => "spmm",
            Op::EdgeSpMM { .. } => "edge_spmm",
            Op::EdgeSoftmax { .. } => "edge_softmax",
            Op::EdgeScores { .. } => "edge_scores",
            Op::AxisMix { .. } => "axis_mix",
        }
    }
}

struct Node {
    value: DenseArray,
    op: Op,
    requires_grad: bool,
}

/// Append-only computation record. Node order is a topological order, so the
/// backward sweep is a plain reverse scan and fully deterministic.
pub struct Tape {
    nodes: Vec<Node>,
    precision: Precision,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits `shape` around `axis` into (outer, len, inner) extents.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl Tape {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Self {
            nodes: Vec::new(),
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &DenseArray {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, mut value: DenseArray, op: Op, parents: &[Var]) -> Result<Var, NdError> {
        if !value.is_finite() {
            return Err(NdError::NonFinite {
                op: op.name(),
                node: self.nodes.len(),
            });
        }
        if self.precision == Precision::F32 {
            value.round_to_f32();
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: DenseArray, requires_grad: bool) -> Result<Var, NdError> {
        if !value.is_finite() {
            return Err(NdError::NonFinite {
                op: "leaf",
                node: self.nodes.len(),
            });
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn param(&mut self, value: DenseArray) -> Result<Var, NdError> {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: DenseArray) -> Result<Var, NdError> {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    fn binary(&mut self, kind: BinKind, a: Var, b: Var) -> Result<Var, NdError> {
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            BinKind::Add => x + y,
            BinKind::Sub => x - y,
            BinKind::Mul => x * y,
        };
        let out = if va.shape() == vb.shape() {
            va.zip(vb, "elementwise", f)?
        } else if va.len() == 1 {
            let s = va.data()[0];
            vb.map(|y| f(s, y))
        } else if vb.len() == 1 {
            let s = vb.data()[0];
            va.map(|x| f(x, s))
        } else {
            return Err(NdError::shape("elementwise", va.shape(), vb.shape()));
        };
        self.push(out, Op::Binary(kind, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(BinKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(BinKind::Sub, a, b)
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(BinKind::Mul, a, b)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NdError> {
        let out = self.value(a).scale(c);
        self.push(out, Op::Scale(a, c), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NdError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { slope * x });
        self.push(out, Op::LeakyRelu(a, slope), &[a])
    }

    /// Dispatches one of the pointwise kinds. Binary kinds take two operands.
    pub fn elementwise(&mut self, kind: ElementwiseKind, operands: &[Var]) -> Result<Var, NdError> {
        let arity = match kind {
            ElementwiseKind::Add | ElementwiseKind::Sub | ElementwiseKind::Hadamard => 2,
            _ => 1,
        };
        if operands.len() != arity {
            return Err(NdError::InvalidArgument(format!(
                "{kind:?} takes {arity} operand(s), got {}",
                operands.len()
            )));
        }
        match kind {
            ElementwiseKind::Add => self.add(operands[0], operands[1]),
            ElementwiseKind::Sub => self.sub(operands[0], operands[1]),
            ElementwiseKind::Hadamard => self.hadamard(operands[0], operands[1]),
            ElementwiseKind::Scale(c) => self.scale(operands[0], c),
            ElementwiseKind::Relu => self.relu(operands[0]),
            ElementwiseKind::LeakyRelu(s) => self.leaky_relu(operands[0], s),
        }
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NdError> {
        let out = self.value(a).reshape(shape).map_err(|_| {
            NdError::shape("reshape", self.value(a).shape(), shape)
        })?;
        self.push(out, Op::Reshape(a), &[a])
    }

    /// Transpose of a 2-D value.
    pub fn transpose(&mut self, a: Var) -> Result<Var, NdError> {
        let out = self.value(a).transpose()?;
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Collapses `axis` by sum or mean. A mean over an empty extent is zero.
    pub fn reduce_axis(&mut self, x: Var, axis: usize, kind: ReduceKind) -> Result<Var, NdError> {
        let v = self.value(x);
        let shape = v.shape();
        if axis >= shape.len() {
            return Err(NdError::AxisOutOfRange {
                op: "reduce_axis",
                axis,
                shape: shape.to_vec(),
            });
        }
        let (outer, len, inner) = split_axis(shape, axis);
        let scale = match kind {
            ReduceKind::Sum => 1.0,
            ReduceKind::Mean if len == 0 => 0.0,
            ReduceKind::Mean => 1.0 / len as f64,
        };
        let data = v.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &data[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
            if scale != 1.0 {
                dst.iter_mut().for_each(|d| *d *= scale);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let out = DenseArray::new(out_shape, out)?;
        self.push(out, Op::Reduce { x, axis, kind }, &[x])
    }

    /// Inserts a new axis at `axis` of length `len`, copying the input along it.
    pub fn broadcast_axis(&mut self, x: Var, axis: usize, len: usize) -> Result<Var, NdError> {
        let v = self.value(x);
        let shape = v.shape();
        if axis > shape.len() {
            return Err(NdError::AxisOutOfRange {
                op: "broadcast_axis",
                axis,
                shape: shape.to_vec(),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis..].iter().product();
        let data = v.data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = &data[o * inner..(o + 1) * inner];
            for _ in 0..len {
                out.extend_from_slice(src);
            }
        }
        let mut out_shape = shape.to_vec();
        out_shape.insert(axis, len);
        let out = DenseArray::new(out_shape, out)?;
        self.push(out, Op::Broadcast { x, axis }, &[x])
    }

    /// `[K×1]` to `[K×W]` by copying the column.
    pub fn broadcast_cols(&mut self, v: Var, width: usize) -> Result<Var, NdError> {
        let (k, one) = self.value(v).dims2()?;
        if one != 1 {
            return Err(NdError::shape("broadcast_cols", self.shape(v), &[k, 1]));
        }
        if width < 1 {
            return Err(NdError::InvalidArgument(
                "broadcast_cols width must be at least 1".into(),
            ));
        }
        let flat = self.reshape(v, &[k])?;
        self.broadcast_axis(flat, 1, width)
    }

    /// Row softmax; masked (false) entries are exactly zero.
    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var, NdError> {
        let v = self.value(x);
        let (m, n) = v.dims2()?;
        if let Some(mask) = mask {
            if mask.len() != m * n {
                return Err(NdError::shape("softmax_rows", &[m, n], &[mask.len()]));
            }
        }
        let keep = |i: usize, j: usize| mask.is_none_or(|mk| mk[i * n + j]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = v.row(i);
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if keep(i, j) {
                    mx = mx.max(row[j]);
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(NdError::FullyMaskedRow(i));
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(i, j) {
                    let e = (row[j] - mx).exp();
                    out[i * n + j] = e;
                    z += e;
                }
            }
            out[i * n..(i + 1) * n].iter_mut().for_each(|e| *e /= z);
        }
        let out = DenseArray::new(vec![m, n], out)?;
        self.push(out, Op::SoftmaxRows(x), &[x])
    }

    /// Mean softmax cross-entropy of `logits[r]` against `targets[i]` for
    /// `r = rows[i]`.
    pub fn cross_entropy_rows(
        &mut self,
        logits: Var,
        targets: &[usize],
        rows: &[usize],
    ) -> Result<Var, NdError> {
        let v = self.value(logits);
        let (m, n) = v.dims2()?;
        if targets.len() != rows.len() {
            return Err(NdError::InvalidArgument(
                "targets and rows must have equal length".into(),
            ));
        }
        if rows.is_empty() {
            return Err(NdError::InvalidArgument(
                "cross-entropy over an empty row set".into(),
            ));
        }
        let mut probs = DenseArray::zeros(&[rows.len(), n]);
        let mut total = 0.0;
        for (i, (&r, &t)) in rows.iter().zip(targets).enumerate() {
            if r >= m || t >= n {
                return Err(NdError::InvalidArgument(format!(
                    "row {r} / target {t} out of range for logits {m}x{n}"
                )));
            }
            let row = v.row(r);
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|x| (x - mx).exp()).sum();
            let lse = mx + z.ln();
            total += lse - row[t];
            for j in 0..n {
                probs.set2(i, j, (row[j] - lse).exp());
            }
        }
        let out = DenseArray::scalar(total / rows.len() as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                rows: rows.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, NdError> {
        let out = DenseArray::scalar(self.value(x).sum());
        self.push(out, Op::SumAll(x), &[x])
    }

    /// Constant sparse matrix times `x` viewed as `[rows, rest]`.
    pub fn spmm(&mut self, mat: &Arc<CsrMatrix>, x: Var) -> Result<Var, NdError> {
        let v = self.value(x);
        let shape = v.shape();
        if shape.is_empty() || shape[0] != mat.cols() {
            return Err(NdError::shape("spmm", &[mat.rows(), mat.cols()], shape));
        }
        let m: usize = shape[1..].iter().product();
        let mut out = vec![0.0; mat.rows() * m];
        spmm_weights(mat, mat.values(), v.data(), &mut out, m);
        let mut out_shape = shape.to_vec();
        out_shape[0] = mat.rows();
        let out = DenseArray::new(out_shape, out)?;
        self.push(
            out,
            Op::SpMM {
                mat: Arc::clone(mat),
                x,
            },
            &[x],
        )
    }

    /// Sparse product with differentiable per-edge weights `w` (length nnz).
    pub fn edge_spmm(&mut self, pattern: &Arc<CsrMatrix>, w: Var, x: Var) -> Result<Var, NdError> {
        let (vw, vx) = (self.value(w), self.value(x));
        if vw.len() != pattern.nnz() {
            return Err(NdError::shape("edge_spmm", &[pattern.nnz()], vw.shape()));
        }
        let shape = vx.shape();
        if shape.is_empty() || shape[0] != pattern.cols() {
            return Err(NdError::shape(
                "edge_spmm",
                &[pattern.rows(), pattern.cols()],
                shape,
            ));
        }
        let m: usize = shape[1..].iter().product();
        let mut out = vec![0.0; pattern.rows() * m];
        spmm_weights(pattern, vw.data(), vx.data(), &mut out, m);
        let mut out_shape = shape.to_vec();
        out_shape[0] = pattern.rows();
        let out = DenseArray::new(out_shape, out)?;
        self.push(
            out,
            Op::EdgeSpMM {
                pattern: Arc::clone(pattern),
                w,
                x,
            },
            &[w, x],
        )
    }

    /// Softmax of edge scores within each row of the pattern.
    pub fn edge_softmax(&mut self, pattern: &Arc<CsrMatrix>, s: Var) -> Result<Var, NdError> {
        let v = self.value(s);
        if v.len() != pattern.nnz() {
            return Err(NdError::shape("edge_softmax", &[pattern.nnz()], v.shape()));
        }
        let d = v.data();
        let mut out = vec![0.0; d.len()];
        for r in 0..pattern.rows() {
            let range = pattern.row_range(r);
            if range.is_empty() {
                continue;
            }
            let mx = d[range.clone()].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for e in range.clone() {
                out[e] = (d[e] - mx).exp();
                z += out[e];
            }
            for e in range {
                out[e] /= z;
            }
        }
        let out = DenseArray::new(vec![d.len()], out)?;
        self.push(
            out,
            Op::EdgeSoftmax {
                pattern: Arc::clone(pattern),
                s,
            },
            &[s],
        )
    }

    /// Per-edge `src[row] + dst[col]`.
    pub fn edge_scores(
        &mut self,
        pattern: &Arc<CsrMatrix>,
        src: Var,
        dst: Var,
    ) -> Result<Var, NdError> {
        let (vs, vd) = (self.value(src), self.value(dst));
        if vs.len() != pattern.rows() || vd.len() != pattern.cols() {
            return Err(NdError::shape("edge_scores", vs.shape(), vd.shape()));
        }
        let mut out = vec![0.0; pattern.nnz()];
        for r in 0..pattern.rows() {
            for e in pattern.row_range(r) {
                out[e] = vs.data()[r] + vd.data()[pattern.indices()[e]];
            }
        }
        let out = DenseArray::new(vec![pattern.nnz()], out)?;
        self.push(
            out,
            Op::EdgeScores {
                pattern: Arc::clone(pattern),
                src,
                dst,
            },
            &[src, dst],
        )
    }

    /// Contracts the middle axis of `x: [N, A, K]` with a constant `t` of shape
    /// `[A, B]`, or `[A + 1, B]` when `bias` is set (last row added to every
    /// channel). Result is `[N, B, K]`.
    pub fn axis_mix(&mut self, x: Var, t: &Arc<DenseArray>, bias: bool) -> Result<Var, NdError> {
        let (n, a, k) = self.value(x).dims3()?;
        let (tr, b) = t.dims2()?;
        if tr != a + usize::from(bias) {
            return Err(NdError::shape("axis_mix", self.shape(x), t.shape()));
        }
        let head = DenseArray::new(vec![a, b], t.data()[..a * b].to_vec())?;
        let head_t = head.transpose()?;
        let xd = self.value(x).data();
        let mut out = vec![0.0; n * b * k];
        for node in 0..n {
            let o = &mut out[node * b * k..(node + 1) * b * k];
            if bias {
                for (bi, row) in o.chunks_mut(k).enumerate() {
                    row.iter_mut().for_each(|v| *v = t.data()[a * b + bi]);
                }
            }
            matmul_into(head_t.data(), &xd[node * a * k..(node + 1) * a * k], o, b, a, k);
        }
        let out = DenseArray::new(vec![n, b, k], out)?;
        self.push(
            out,
            Op::AxisMix {
                x,
                t: Arc::clone(t),
            },
            &[x],
        )
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NdError> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(NdError::NonScalarLoss(lv.shape().to_vec()));
        }
        if !lv.is_finite() {
            return Err(NdError::NonFinite {
                op: "backward",
                node: loss.0,
            });
        }
        let mut grads: Vec<Option<DenseArray>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(DenseArray::filled(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !g.is_finite() {
                return Err(NdError::NonFinite {
                    op: "backward",
                    node: i,
                });
            }
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(node, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }

        // Every requires-grad leaf gets an array, zeros if unreachable.
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[i].is_none() {
                grads[i] = Some(DenseArray::zeros(node.value.shape()));
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        node: &Node,
        g: &DenseArray,
        grads: &mut [Option<DenseArray>],
    ) -> Result<(), NdError> {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: DenseArray| {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if needs(*a) {
                    acc(*a, g.matmul(&vb.transpose()?)?);
                }
                if needs(*b) {
                    acc(*b, va.transpose()?.matmul(g)?);
                }
            }
            Op::Binary(kind, a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let fold = |d: DenseArray, target: &DenseArray| -> Result<DenseArray, NdError> {
                    if d.shape() == target.shape() {
                        Ok(d)
                    } else {
                        DenseArray::new(target.shape().to_vec(), vec![d.sum()])
                    }
                };
                // Broadcast operand values seen from the output's point of view.
                let expand = |x: &DenseArray| -> DenseArray {
                    if x.shape() == g.shape() {
                        x.clone()
                    } else {
                        DenseArray::filled(g.shape(), x.data()[0])
                    }
                };
                if needs(*a) {
                    let d = match kind {
                        BinKind::Add | BinKind::Sub => g.clone(),
                        BinKind::Mul => g.zip(&expand(vb), "hadamard", |x, y| x * y)?,
                    };
                    acc(*a, fold(d, va)?);
                }
                if needs(*b) {
                    let d = match kind {
                        BinKind::Add => g.clone(),
                        BinKind::Sub => g.scale(-1.0),
                        BinKind::Mul => g.zip(&expand(va), "hadamard", |x, y| x * y)?,
                    };
                    acc(*b, fold(d, vb)?);
                }
            }
            Op::Scale(a, c) => {
                if needs(*a) {
                    acc(*a, g.scale(*c));
                }
            }
            Op::Relu(a) => {
                if needs(*a) {
                    let d = g.zip(self.value(*a), "relu", |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    acc(*a, d);
                }
            }
            Op::LeakyRelu(a, s) => {
                if needs(*a) {
                    let d = g.zip(self.value(*a), "leaky_relu", |gv, x| {
                        if x > 0.0 {
                            gv
                        } else {
                            s * gv
                        }
                    })?;
                    acc(*a, d);
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    acc(*a, g.reshape(self.shape(*a))?);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    acc(*a, g.transpose()?);
                }
            }
            Op::Reduce { x, axis, kind } => {
                if needs(*x) {
                    let in_shape = self.shape(*x);
                    let (outer, len, inner) = split_axis(in_shape, *axis);
                    let scale = match kind {
                        ReduceKind::Sum => 1.0,
                        ReduceKind::Mean if len == 0 => 0.0,
                        ReduceKind::Mean => 1.0 / len as f64,
                    };
                    let gd = g.data();
                    let mut d = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        for _ in 0..len {
                            d.extend(gd[o * inner..(o + 1) * inner].iter().map(|v| v * scale));
                        }
                    }
                    acc(*x, DenseArray::new(in_shape.to_vec(), d)?);
                }
            }
            Op::Broadcast { x, axis } => {
                if needs(*x) {
                    let out_shape = node.value.shape();
                    let (outer, len, inner) = split_axis(out_shape, *axis);
                    let gd = g.data();
                    let mut d = vec![0.0; outer * inner];
                    for o in 0..outer {
                        let dst = &mut d[o * inner..(o + 1) * inner];
                        for l in 0..len {
                            let src = &gd[(o * len + l) * inner..(o * len + l + 1) * inner];
                            for (a, b) in dst.iter_mut().zip(src) {
                                *a += b;
                            }
                        }
                    }
                    acc(*x, DenseArray::new(self.shape(*x).to_vec(), d)?);
                }
            }
            Op::SoftmaxRows(x) => {
                if needs(*x) {
                    let y = &node.value;
                    let (m, n) = y.dims2()?;
                    let mut d = vec![0.0; m * n];
                    for i in 0..m {
                        let yr = y.row(i);
                        let gr = g.row(i);
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for j in 0..n {
                            d[i * n + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    acc(*x, DenseArray::new(vec![m, n], d)?);
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                rows,
                probs,
            } => {
                if needs(*logits) {
                    let upstream = g.data()[0] / rows.len() as f64;
                    let mut d = DenseArray::zeros(self.shape(*logits));
                    let n = probs.shape()[1];
                    for (i, (&r, &t)) in rows.iter().zip(targets).enumerate() {
                        for j in 0..n {
                            let onehot = if j == t { 1.0 } else { 0.0 };
                            let cur = d.at2(r, j);
                            d.set2(r, j, cur + upstream * (probs.at2(i, j) - onehot));
                        }
                    }
                    acc(*logits, d);
                }
            }
            Op::SumAll(x) => {
                if needs(*x) {
                    acc(*x, DenseArray::filled(self.shape(*x), g.data()[0]));
                }
            }
            Op::SpMM { mat, x } => {
                if needs(*x) {
                    let shape = self.shape(*x);
                    let m: usize = shape[1..].iter().product();
                    let mut d = vec![0.0; shape[0] * m];
                    spmm_weights_t(mat, mat.values(), g.data(), &mut d, m);
                    acc(*x, DenseArray::new(shape.to_vec(), d)?);
                }
            }
            Op::EdgeSpMM { pattern, w, x } => {
                let (vw, vx) = (self.value(*w), self.value(*x));
                let shape = vx.shape();
                let m: usize = shape[1..].iter().product();
                if needs(*w) {
                    let mut d = vec![0.0; pattern.nnz()];
                    for r in 0..pattern.rows() {
                        let gr = &g.data()[r * m..(r + 1) * m];
                        for e in pattern.row_range(r) {
                            let c = pattern.indices()[e];
                            let xr = &vx.data()[c * m..(c + 1) * m];
                            d[e] = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        }
                    }
                    acc(*w, DenseArray::new(vw.shape().to_vec(), d)?);
                }
                if needs(*x) {
                    let mut d = vec![0.0; shape[0] * m];
                    spmm_weights_t(pattern, vw.data(), g.data(), &mut d, m);
                    acc(*x, DenseArray::new(shape.to_vec(), d)?);
                }
            }
            Op::EdgeSoftmax { pattern, s } => {
                if needs(*s) {
                    let y = node.value.data();
                    let gd = g.data();
                    let mut d = vec![0.0; y.len()];
                    for r in 0..pattern.rows() {
                        let range = pattern.row_range(r);
                        let dot: f64 = range.clone().map(|e| gd[e] * y[e]).sum();
                        for e in range {
                            d[e] = y[e] * (gd[e] - dot);
                        }
                    }
                    acc(*s, DenseArray::new(self.shape(*s).to_vec(), d)?);
                }
            }
            Op::EdgeScores { pattern, src, dst } => {
                let gd = g.data();
                if needs(*src) {
                    let mut d = vec![0.0; pattern.rows()];
                    for (r, dr) in d.iter_mut().enumerate() {
                        *dr = pattern.row_range(r).map(|e| gd[e]).sum();
                    }
                    acc(*src, DenseArray::new(self.shape(*src).to_vec(), d)?);
                }
                if needs(*dst) {
                    let mut d = vec![0.0; pattern.cols()];
                    for r in 0..pattern.rows() {
                        for e in pattern.row_range(r) {
                            d[pattern.indices()[e]] += gd[e];
                        }
                    }
                    acc(*dst, DenseArray::new(self.shape(*dst).to_vec(), d)?);
                }
            }
            Op::AxisMix { x, t } => {
                if needs(*x) {
                    let (n, a, k) = self.value(*x).dims3()?;
                    let b = t.shape()[1];
                    let head = &t.data()[..a * b];
                    let mut d = vec![0.0; n * a * k];
                    for node_i in 0..n {
                        matmul_into(
                            head,
                            &g.data()[node_i * b * k..(node_i + 1) * b * k],
                            &mut d[node_i * a * k..(node_i + 1) * a * k],
                            a,
                            b,
                            k,
                        );
                    }
                    acc(*x, DenseArray::new(vec![n, a, k], d)?);
                }
            }
        }
        Ok(())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<DenseArray>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` was reached.
    pub fn get(&self, v: Var) -> Option<&DenseArray> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn wrt(&self, tape: &Tape, v: Var) -> DenseArray {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| DenseArray::zeros(tape.shape(v)))
    }
}
