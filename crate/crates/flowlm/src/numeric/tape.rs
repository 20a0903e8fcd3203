//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records primitive operations in topological order as values are
//! computed; [`Tape::backward`] replays the record once in reverse,
//! accumulating vector-Jacobian products. Tapes are single-threaded and built
//! fresh for every loss evaluation; parameters enter as tracked leaves,
//! inputs as constants.

use crate::error::{Error, Result};
use crate::numeric::array::{
    argmax, broadcasts, ew_broadcast, logsumexp_row, matmul, matmul_nt, matmul_tn, reduce_to,
    softmax_rows, Array,
};
use crate::scalar::{sigmoid, Scalar};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug)]
enum Op<T: Scalar> {
    Leaf,
    Const,
    Matmul(NodeId, NodeId),
    MatmulNT(NodeId, NodeId),
    MatmulTN(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Silu(NodeId),
    RmsNorm { x: NodeId, gain: NodeId, eps: T },
    SoftmaxRows(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { src: NodeId, start: usize, len: usize },
    SliceCols { src: NodeId, start: usize, len: usize },
    MseMean { pred: NodeId, target: Array<T> },
    CrossEntropyMean { logits: NodeId, targets: Vec<usize> },
    MeanOf(Vec<NodeId>),
    SumAll(NodeId),
}

struct Node<T: Scalar> {
    value: Array<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recorded computation over arrays of scalar type `T`.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Per-node gradients produced by a backward pass.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// d(loss)/d(node); `None` for nodes gradients never reached
    /// (untracked constants or dead branches).
    pub fn get(&self, id: NodeId) -> Option<&Array<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Array<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert!(
            value.all_finite(),
            "engine produced non-finite values in {:?}",
            op_name(&op)
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Tracked leaf (a parameter).
    pub fn param(&mut self, value: Array<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Untracked leaf (an input or detached value).
    pub fn constant(&mut self, value: Array<T>) -> NodeId {
        self.push(value, Op::Const, false)
    }

    /// Copy of a node's value as a fresh constant: the stop-gradient.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.value(id).clone();
        self.constant(v)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Matmul(a, b), rg))
    }

    /// a · bᵀ
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul_nt(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatmulNT(a, b), rg))
    }

    /// aᵀ · b
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = matmul_tn(self.value(a), self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::MatmulTN(a, b), rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ew_broadcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ew_broadcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ew_broadcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(v, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> NodeId {
        let v = self.value(a).scale(s);
        let rg = self.needs(a);
        self.push(v, Op::Scale(a, s), rg)
    }

    pub fn silu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.needs(a);
        self.push(v, Op::Silu(a), rg)
    }

    /// Row-wise RMS normalization with a learned per-channel gain.
    pub fn rms_norm(&mut self, x: NodeId, gain: NodeId, eps: T) -> Result<NodeId> {
        let xv = self.value(x);
        let gv = self.value(gain);
        if gv.len() != xv.cols() {
            return Err(Error::ShapeMismatch {
                op: "rms_norm".into(),
                lhs: xv.shape().to_vec(),
                rhs: gv.shape().to_vec(),
            });
        }
        let n = T::of_f64(xv.cols() as f64);
        let mut out = xv.clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let ms = row.iter().map(|&v| v * v).sum::<T>() / n;
            let r = (ms + eps).sqrt();
            for (v, &g) in row.iter_mut().zip(gv.data()) {
                *v = *v / r * g;
            }
        }
        let rg = self.needs(x) || self.needs(gain);
        Ok(self.push(out, Op::RmsNorm { x, gain, eps }, rg))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        let rg = self.needs(a);
        self.push(v, Op::SoftmaxRows(a), rg)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            if self.value(p).cols() != cols {
                return Err(Error::ShapeMismatch {
                    op: "concat_rows".into(),
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += self.value(p).rows();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Array::from_vec(&[rows, cols], data);
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::ShapeMismatch {
                    op: "concat_cols".into(),
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Array::from_vec(&[rows, cols], data);
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_rows(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.value(src);
        let cols = s.cols();
        assert!(start + len <= s.rows(), "slice_rows out of range");
        let data = s.data()[start * cols..(start + len) * cols].to_vec();
        let v = Array::from_vec(&[len, cols], data);
        let rg = self.needs(src);
        self.push(v, Op::SliceRows { src, start, len }, rg)
    }

    pub fn slice_cols(&mut self, src: NodeId, start: usize, len: usize) -> NodeId {
        let s = self.value(src);
        assert!(start + len <= s.cols(), "slice_cols out of range");
        let rows = s.rows();
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&s.row(i)[start..start + len]);
        }
        let v = Array::from_vec(&[rows, len], data);
        let rg = self.needs(src);
        self.push(v, Op::SliceCols { src, start, len }, rg)
    }

    /// Mean squared error against a fixed (already detached) target.
    pub fn mse_mean(&mut self, pred: NodeId, target: Array<T>) -> Result<NodeId> {
        if self.value(pred).shape() != target.shape() {
            return Err(Error::ShapeMismatch {
                op: "mse_mean".into(),
                lhs: self.value(pred).shape().to_vec(),
                rhs: target.shape().to_vec(),
            });
        }
        let v = Array::scalar(self.value(pred).mse(&target));
        let rg = self.needs(pred);
        Ok(self.push(v, Op::MseMean { pred, target }, rg))
    }

    /// Token-mean cross-entropy of `logits` `[L, V]` against target ids.
    pub fn cross_entropy_mean(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        if lv.rows() != targets.len() || targets.iter().any(|&t| t >= lv.cols()) {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy_mean".into(),
                lhs: lv.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let mut acc = T::zero();
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            acc += logsumexp_row(row) - row[t];
        }
        let v = Array::scalar(acc / T::of_f64(targets.len() as f64));
        let rg = self.needs(logits);
        Ok(self.push(
            v,
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Mean of scalar nodes (batch reduction).
    pub fn mean_of(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut acc = T::zero();
        for &p in parts {
            debug_assert_eq!(self.value(p).len(), 1, "mean_of expects scalars");
            acc += self.value(p).data()[0];
        }
        let v = Array::scalar(acc / T::of_f64(parts.len() as f64));
        let rg = parts.iter().any(|&p| self.needs(p));
        self.push(v, Op::MeanOf(parts.to_vec()), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(self.value(a).sum());
        let rg = self.needs(a);
        self.push(v, Op::SumAll(a), rg)
    }

    /// Greedy tokens from a logits node (no gradient involvement).
    pub fn argmax_rows(&self, logits: NodeId) -> Vec<usize> {
        let lv = self.value(logits);
        (0..lv.rows()).map(|i| argmax(lv.row(i))).collect()
    }

    /// Reverse pass from a scalar loss; consumes the tape.
    pub fn backward(self, loss: NodeId) -> Result<Gradients<T>> {
        if loss.0 >= self.nodes.len() {
            return Err(Error::NodeNotOnTape(loss.0));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Array<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::scalar(T::one()));

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            debug_assert!(g.all_finite(), "non-finite gradient at node {idx}");
            self.accumulate(&mut grads, idx, &g);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn add_grad(
        grads: &mut [Option<Array<T>>],
        nodes: &[Node<T>],
        id: NodeId,
        delta: Array<T>,
    ) {
        if !nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn accumulate(&self, grads: &mut [Option<Array<T>>], idx: usize, g: &Array<T>) {
        let nodes = &self.nodes;
        match &nodes[idx].op {
            Op::Leaf | Op::Const => {}
            Op::Matmul(a, b) => {
                let da = matmul_nt(g, self.value(*b)).expect("vjp shapes");
                let db = matmul_tn(self.value(*a), g).expect("vjp shapes");
                Self::add_grad(grads, nodes, *a, da);
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::MatmulNT(a, b) => {
                let da = matmul(g, self.value(*b)).expect("vjp shapes");
                let db = matmul_tn(g, self.value(*a)).expect("vjp shapes");
                Self::add_grad(grads, nodes, *a, da);
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::MatmulTN(a, b) => {
                let da = matmul_nt(self.value(*b), g).expect("vjp shapes");
                let db = matmul(self.value(*a), g).expect("vjp shapes");
                Self::add_grad(grads, nodes, *a, da);
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::Add(a, b) => {
                Self::add_grad(grads, nodes, *a, g.clone());
                let db = reduce_to(g, self.value(*b).shape());
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::Sub(a, b) => {
                Self::add_grad(grads, nodes, *a, g.clone());
                let db = reduce_to(g, self.value(*b).shape()).scale(-T::one());
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::Mul(a, b) => {
                let bv = self.value(*b);
                let av = self.value(*a);
                let da = ew_broadcast("mul_vjp", g, bv, |x, y| x * y).expect("vjp shapes");
                Self::add_grad(grads, nodes, *a, da);
                let gb_full = g.zip_map(av, |x, y| x * y);
                let db = reduce_to(&gb_full, bv.shape());
                Self::add_grad(grads, nodes, *b, db);
            }
            Op::Scale(a, s) => {
                Self::add_grad(grads, nodes, *a, g.scale(*s));
            }
            Op::Silu(a) => {
                let av = self.value(*a);
                let da = g.zip_map(av, |gy, x| {
                    let s = sigmoid(x);
                    gy * s * (T::one() + x * (T::one() - s))
                });
                Self::add_grad(grads, nodes, *a, da);
            }
            Op::RmsNorm { x, gain, eps } => {
                let xv = self.value(*x);
                let gv = self.value(*gain);
                let n = T::of_f64(xv.cols() as f64);
                let mut dx = Array::zeros(xv.shape());
                let mut dg = Array::zeros(gv.shape());
                for i in 0..xv.rows() {
                    let xr = xv.row(i);
                    let gr = g.row(i);
                    let ms = xr.iter().map(|&v| v * v).sum::<T>() / n;
                    let r = (ms + *eps).sqrt();
                    let mut s = T::zero();
                    for ((&gy, &xx), &gg) in gr.iter().zip(xr).zip(gv.data()) {
                        s += gy * gg * xx;
                    }
                    let c = s / (n * r * r * r);
                    for (j, dxv) in dx.row_mut(i).iter_mut().enumerate() {
                        *dxv = gr[j] * gv.data()[j] / r - xr[j] * c;
                    }
                    for (j, dgv) in dg.data_mut().iter_mut().enumerate() {
                        *dgv += gr[j] * xr[j] / r;
                    }
                }
                Self::add_grad(grads, nodes, *x, dx);
                Self::add_grad(grads, nodes, *gain, dg);
            }
            Op::SoftmaxRows(a) => {
                let yv = &nodes[idx].value;
                let mut da = Array::zeros(yv.shape());
                for i in 0..yv.rows() {
                    let yr = yv.row(i);
                    let gr = g.row(i);
                    let dot: T = yr.iter().zip(gr).map(|(&y, &gy)| y * gy).sum();
                    for (j, dav) in da.row_mut(i).iter_mut().enumerate() {
                        *dav = yr[j] * (gr[j] - dot);
                    }
                }
                Self::add_grad(grads, nodes, *a, da);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let cols = self.value(p).cols();
                    let d = Array::from_vec(
                        &[r, cols],
                        g.data()[start * cols..(start + r) * cols].to_vec(),
                    );
                    Self::add_grad(grads, nodes, p, d);
                    start += r;
                }
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut start = 0;
                for &p in parts {
                    let c = self.value(p).cols();
                    let mut d = Array::zeros(&[rows, c]);
                    for i in 0..rows {
                        d.row_mut(i).copy_from_slice(&g.row(i)[start..start + c]);
                    }
                    Self::add_grad(grads, nodes, p, d);
                    start += c;
                }
            }
            Op::SliceRows { src, start, len } => {
                let sv = self.value(*src);
                let cols = sv.cols();
                let mut d = Array::zeros(sv.shape());
                d.data_mut()[start * cols..(start + len) * cols].copy_from_slice(g.data());
                Self::add_grad(grads, nodes, *src, d);
            }
            Op::SliceCols { src, start, len } => {
                let sv = self.value(*src);
                let mut d = Array::zeros(sv.shape());
                for i in 0..sv.rows() {
                    d.row_mut(i)[*start..start + len].copy_from_slice(g.row(i));
                }
                Self::add_grad(grads, nodes, *src, d);
            }
            Op::MseMean { pred, target } => {
                let pv = self.value(*pred);
                let scale = T::of_f64(2.0 / pv.len() as f64) * g.data()[0];
                let d = pv.zip_map(target, |p, t| (p - t) * scale);
                Self::add_grad(grads, nodes, *pred, d);
            }
            Op::CrossEntropyMean { logits, targets } => {
                let lv = self.value(*logits);
                let gshare = g.data()[0] / T::of_f64(targets.len() as f64);
                let mut d = softmax_rows(lv);
                for (i, &t) in targets.iter().enumerate() {
                    let row = d.row_mut(i);
                    row[t] = row[t] - T::one();
                    for v in row.iter_mut() {
                        *v = *v * gshare;
                    }
                }
                Self::add_grad(grads, nodes, *logits, d);
            }
            Op::MeanOf(parts) => {
                let share = g.data()[0] / T::of_f64(parts.len() as f64);
                for &p in parts {
                    Self::add_grad(grads, nodes, p, Array::scalar(share));
                }
            }
            Op::SumAll(a) => {
                let d = Array::filled(self.value(*a).shape(), g.data()[0]);
                Self::add_grad(grads, nodes, *a, d);
            }
        }
    }
}

fn op_name<T: Scalar>(op: &Op<T>) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Const => "const",
        Op::Matmul(..) => "matmul",
        Op::MatmulNT(..) => "matmul_nt",
        Op::MatmulTN(..) => "matmul_tn",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Silu(..) => "silu",
        Op::RmsNorm { .. } => "rms_norm",
        Op::SoftmaxRows(..) => "softmax_rows",
        Op::ConcatRows(..) => "concat_rows",
        Op::ConcatCols(..) => "concat_cols",
        Op::SliceRows { .. } => "slice_rows",
        Op::SliceCols { .. } => "slice_cols",
        Op::MseMean { .. } => "mse_mean",
        Op::CrossEntropyMean { .. } => "cross_entropy_mean",
        Op::MeanOf(..) => "mean_of",
        Op::SumAll(..) => "sum_all",
    }
}

/// `broadcasts` re-exported for sanity checks in callers.
pub fn shapes_broadcast<T: Scalar>(a: &Array<T>, b: &Array<T>) -> bool {
    broadcasts(a, b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        // loss = sum(x ∘ x), x = [1, 2] → grad [2, 4]
        let mut t = Tape::<f64>::new();
        let x = t.param(Array::from_vec(&[2], vec![1.0, 2.0]));
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn constant_loss_has_zero_leaf_grads() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Array::from_vec(&[2], vec![1.0, 2.0]));
        let c = t.constant(Array::scalar(5.0));
        let loss = t.sum_all(c);
        let g = t.backward(loss).unwrap();
        // Gradient never reaches x: absent is the zero gradient.
        assert!(g.get(x).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Array::from_vec(&[2], vec![1.0, 2.0]));
        assert!(matches!(
            t.backward(x),
            Err(Error::NonScalarLoss(_))
        ));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut t = Tape::<f64>::new();
        let x = t.param(Array::from_vec(&[2], vec![1.0, 2.0]));
        let y = t.mul(x, x).unwrap();
        let yd = t.detach(y);
        let z = t.mul(yd, yd).unwrap();
        let loss = t.sum_all(z);
        let g = t.backward(loss).unwrap();
        assert!(g.get(x).is_none(), "stop-gradient must block flow");
    }

    #[test]
    fn matmul_vjp_matches_manual() {
        // loss = sum(A·B), dA = 1·Bᵀ, dB = Aᵀ·1
        let mut t = Tape::<f64>::new();
        let a = t.param(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let b = t.param(Array::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]));
        let c = t.matmul(a, b).unwrap();
        let loss = t.sum_all(c);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[11.0, 15.0, 11.0, 15.0]);
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn cross_entropy_matches_reference() {
        let mut t = Tape::<f64>::new();
        let logits = t.param(Array::from_vec(&[2, 3], vec![0.1, 2.0, -1.0, 0.0, 0.0, 0.0]));
        let loss = t.cross_entropy_mean(logits, &[1, 2]).unwrap();
        let lv = t.value(loss).data()[0];
        // Independent two-pass log-sum-exp evaluation.
        let r1 = {
            let row: [f64; 3] = [0.1, 2.0, -1.0];
            let m = row.iter().cloned().fold(f64::MIN, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - 2.0
        };
        let r2 = (3.0f64).ln();
        assert!((lv - (r1 + r2) / 2.0).abs() < 1e-12);
    }
}
