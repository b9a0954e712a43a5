use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ValueId(usize);

enum Op {
    Constant,
    Param(ParamId),
    Add(ValueId, ValueId),
    AddRowBroadcast(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, f64),
    Matmul(ValueId, ValueId),
    Transpose(ValueId),
    Tanh(ValueId),
    ConcatRows(Vec<ValueId>),
    ConcatCols(Vec<ValueId>),
    GatherRows(ValueId, Rc<Vec<usize>>),
    SliceRows(ValueId, usize, usize),
    MeanRows(ValueId),
    SumAll(ValueId),
    MaskedSoftmaxRows(ValueId, Rc<Vec<Vec<usize>>>),
    RankPairExpand {
        table: ValueId,
        head: usize,
        ranks: Rc<Vec<usize>>,
        rank_count: usize,
    },
    CrossEntropyRows(ValueId, Rc<Vec<usize>>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Eager forward recorder for reverse-mode differentiation.
///
/// Operations compute immediately and append a node; `backward` consumes the
/// tape, replays adjoints in exact reverse order, and accumulates parameter
/// gradients into the store. A tape must stay on one thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> ValueId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> ValueId {
        self.push(value, Op::Constant, false)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> ValueId {
        self.constant(Tensor::zeros(shape))
    }

    /// Stages a parameter's current value as a leaf; gradients flow back to
    /// the store for trainable parameters only.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> ValueId {
        let p = store.get(id);
        self.push(p.value.clone(), Op::Param(id), p.trainable)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn add_row_broadcast(&mut self, a: ValueId, row: ValueId) -> Result<ValueId> {
        let value = self.value(a).add_row_broadcast(self.value(row))?;
        let rg = self.needs(a) || self.needs(row);
        Ok(self.push(value, Op::AddRowBroadcast(a, row), rg))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: ValueId, c: f64) -> Result<ValueId> {
        let value = self.value(a).scale(c)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Scale(a, c), rg))
    }

    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, a: ValueId) -> Result<ValueId> {
        let value = self.value(a).transpose()?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn tanh(&mut self, a: ValueId) -> Result<ValueId> {
        let data = self.value(a).data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::Tanh(a), rg))
    }

    pub fn concat_rows(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        let rg = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn gather_rows(&mut self, a: ValueId, indices: Rc<Vec<usize>>) -> Result<ValueId> {
        let value = self.value(a).gather_rows(&indices)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a, indices), rg))
    }

    pub fn slice_rows(&mut self, a: ValueId, start: usize, len: usize) -> Result<ValueId> {
        let value = self.value(a).slice_rows(start, len)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::SliceRows(a, start, len), rg))
    }

    /// Column-wise mean over rows: (m, n) -> (1, n). Rejects empty input.
    pub fn mean_rows(&mut self, a: ValueId) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if m == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "mean_rows",
                detail: "empty matrix".into(),
            });
        }
        let mut out = vec![0.0; n];
        for i in 0..m {
            for (o, v) in out.iter_mut().zip(self.value(a).row(i)) {
                *o += v;
            }
        }
        for o in &mut out {
            *o /= m as f64;
        }
        let value = Tensor::from_vec(&[1, n], out)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    pub fn sum_all(&mut self, a: ValueId) -> Result<ValueId> {
        let value = Tensor::scalar(self.value(a).sum());
        value.ensure_finite("sum_all")?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::SumAll(a), rg))
    }

    /// Row-wise softmax restricted to an explicit support per row; entries
    /// outside the support are written as exactly 0.0 and never touched by
    /// the max/exp/normalize path, so they cannot perturb the result.
    pub fn masked_softmax_rows(
        &mut self,
        a: ValueId,
        support: Rc<Vec<Vec<usize>>>,
    ) -> Result<ValueId> {
        let (m, n) = self.value(a).dims2()?;
        if support.len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "masked_softmax_rows",
                detail: format!("{} rows vs {} supports", m, support.len()),
            });
        }
        let mut out = vec![0.0; m * n];
        for (i, sup) in support.iter().enumerate() {
            if sup.is_empty() {
                return Err(NumericsError::AllMasked);
            }
            let row = self.value(a).row(i);
            let mut mx = f64::NEG_INFINITY;
            for &j in sup {
                if j >= n {
                    return Err(NumericsError::IndexOutOfRange {
                        op: "masked_softmax_rows",
                        index: j,
                        len: n,
                    });
                }
                mx = mx.max(row[j]);
            }
            let mut sum = 0.0;
            for &j in sup {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for &j in sup {
                out[i * n + j] /= sum;
            }
        }
        let value = Tensor::from_vec(&[m, n], out)?;
        let rg = self.needs(a);
        Ok(self.push(value, Op::MaskedSoftmaxRows(a, support), rg))
    }

    /// Expands a per-rank-pair bias table to a full pairwise matrix for one
    /// head: out[y][x] = table[rank(y) * rank_count + rank(x)][head].
    pub fn rank_pair_expand(
        &mut self,
        table: ValueId,
        head: usize,
        ranks: Rc<Vec<usize>>,
        rank_count: usize,
    ) -> Result<ValueId> {
        let (rows, heads) = self.value(table).dims2()?;
        if rows != rank_count * rank_count || head >= heads {
            return Err(NumericsError::ShapeMismatch {
                op: "rank_pair_expand",
                detail: format!(
                    "table {}x{} vs rank_count {} head {}",
                    rows, heads, rank_count, head
                ),
            });
        }
        if let Some(&bad) = ranks.iter().find(|&&r| r >= rank_count) {
            return Err(NumericsError::IndexOutOfRange {
                op: "rank_pair_expand",
                index: bad,
                len: rank_count,
            });
        }
        let n = ranks.len();
        let t = self.value(table).data();
        let head_col: Vec<f64> = (0..rank_count * rank_count)
            .map(|pair| t[pair * heads + head])
            .collect();
        let mut out = vec![0.0; n * n];
        for (y, &ry) in ranks.iter().enumerate() {
            let row = &mut out[y * n..(y + 1) * n];
            let base = ry * rank_count;
            for (slot, &rx) in row.iter_mut().zip(ranks.iter()) {
                *slot = head_col[base + rx];
            }
        }
        let value = Tensor::from_vec(&[n, n], out)?;
        let rg = self.needs(table);
        Ok(self.push(
            value,
            Op::RankPairExpand {
                table,
                head,
                ranks,
                rank_count,
            },
            rg,
        ))
    }

    /// Mean cross-entropy of row logits against integer targets:
    /// mean_i ( logsumexp(logits[i]) - logits[i][target_i] ).
    pub fn cross_entropy_rows(&mut self, logits: ValueId, targets: Rc<Vec<usize>>) -> Result<ValueId> {
        let (m, k) = self.value(logits).dims2()?;
        if targets.len() != m {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_rows",
                detail: format!("{} rows vs {} targets", m, targets.len()),
            });
        }
        if m == 0 {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_rows",
                detail: "no rows".into(),
            });
        }
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            if t >= k {
                return Err(NumericsError::IndexOutOfRange {
                    op: "cross_entropy_rows",
                    index: t,
                    len: k,
                });
            }
            let row = self.value(logits).row(i);
            total += log_sum_exp(row) - row[t];
        }
        let value = Tensor::scalar(total / m as f64);
        value.ensure_finite("cross_entropy_rows")?;
        let rg = self.needs(logits);
        Ok(self.push(value, Op::CrossEntropyRows(logits, targets), rg))
    }

    /// Cross-entropy of a single logit vector against one target class.
    pub fn cross_entropy(&mut self, logits: ValueId, target: usize) -> Result<ValueId> {
        self.cross_entropy_rows(logits, Rc::new(vec![target]))
    }

    /// Consumes the tape, seeding d(loss)/d(loss) = 1 and accumulating
    /// parameter gradients into `store`.
    pub fn backward(mut self, loss: ValueId, store: &mut ParamStore) -> Result<()> {
        if loss.0 >= self.nodes.len() {
            return Err(NumericsError::UnknownValue(loss.0));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(NumericsError::NotScalar(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            self.propagate(idx, grad, &mut grads, store)?;
        }
        self.nodes.clear();
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        grad: Tensor,
        grads: &mut [Option<Tensor>],
        store: &mut ParamStore,
    ) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Constant => {}
            Op::Param(pid) => store.accumulate_grad(*pid, &grad),
            Op::Add(a, b) => {
                if self.needs(*a) {
                    self.accum(grads, *a, grad.clone());
                }
                self.accum(grads, *b, grad);
            }
            Op::AddRowBroadcast(a, row) => {
                self.accum(grads, *a, grad.clone());
                if self.needs(*row) {
                    let (m, n) = grad.dims2()?;
                    let mut col = vec![0.0; n];
                    for i in 0..m {
                        for (c, g) in col.iter_mut().zip(grad.row(i)) {
                            *c += g;
                        }
                    }
                    self.accum(grads, *row, Tensor::from_vec(&[1, n], col)?);
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    self.accum(grads, *a, grad.mul(self.value(*b))?);
                }
                if self.needs(*b) {
                    self.accum(grads, *b, grad.mul(self.value(*a))?);
                }
            }
            Op::Scale(a, c) => self.accum(grads, *a, grad.scale(*c)?),
            Op::Matmul(a, b) => {
                if self.needs(*a) {
                    let bt = self.value(*b).transpose()?;
                    self.accum(grads, *a, grad.matmul(&bt)?);
                }
                if self.needs(*b) {
                    let at = self.value(*a).transpose()?;
                    self.accum(grads, *b, at.matmul(&grad)?);
                }
            }
            Op::Transpose(a) => self.accum(grads, *a, grad.transpose()?),
            Op::Tanh(a) => {
                let y = &node.value;
                let data = grad
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, y)| g * (1.0 - y * y))
                    .collect();
                self.accum(grads, *a, Tensor::from_vec(y.shape(), data)?);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (pm, _) = self.value(p).dims2()?;
                    if self.needs(p) {
                        self.accum(grads, p, grad.slice_rows(start, pm)?);
                    }
                    start += pm;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, _) = grad.dims2()?;
                let mut off = 0;
                for &p in parts {
                    let (_, pn) = self.value(p).dims2()?;
                    if self.needs(p) {
                        let mut data = vec![0.0; m * pn];
                        for i in 0..m {
                            data[i * pn..(i + 1) * pn]
                                .copy_from_slice(&grad.row(i)[off..off + pn]);
                        }
                        self.accum(grads, p, Tensor::from_vec(&[m, pn], data)?);
                    }
                    off += pn;
                }
            }
            Op::GatherRows(a, indices) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut data = vec![0.0; m * n];
                for (i, &src) in indices.iter().enumerate() {
                    for (d, g) in data[src * n..(src + 1) * n].iter_mut().zip(grad.row(i)) {
                        *d += g;
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(&[m, n], data)?);
            }
            Op::SliceRows(a, start, len) => {
                let (m, n) = self.value(*a).dims2()?;
                let mut data = vec![0.0; m * n];
                for i in 0..*len {
                    data[(start + i) * n..(start + i + 1) * n].copy_from_slice(grad.row(i));
                }
                self.accum(grads, *a, Tensor::from_vec(&[m, n], data)?);
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2()?;
                let inv = 1.0 / m as f64;
                let mut data = vec![0.0; m * n];
                for i in 0..m {
                    for (d, g) in data[i * n..(i + 1) * n].iter_mut().zip(grad.row(0)) {
                        *d = g * inv;
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(&[m, n], data)?);
            }
            Op::SumAll(a) => {
                let g = grad.scalar_value()?;
                let shape = self.value(*a).shape().to_vec();
                let len = self.value(*a).len();
                self.accum(grads, *a, Tensor::from_vec(&shape, vec![g; len])?);
            }
            Op::MaskedSoftmaxRows(a, support) => {
                let y = &node.value;
                let (m, n) = y.dims2()?;
                let mut data = vec![0.0; m * n];
                for (i, sup) in support.iter().enumerate() {
                    let yrow = y.row(i);
                    let grow = grad.row(i);
                    let mut dot = 0.0;
                    for &j in sup {
                        dot += grow[j] * yrow[j];
                    }
                    for &j in sup {
                        data[i * n + j] = yrow[j] * (grow[j] - dot);
                    }
                }
                self.accum(grads, *a, Tensor::from_vec(&[m, n], data)?);
            }
            Op::RankPairExpand {
                table,
                head,
                ranks,
                rank_count,
            } => {
                let (rows, heads) = self.value(*table).dims2()?;
                let mut data = vec![0.0; rows * heads];
                for (y, &ry) in ranks.iter().enumerate() {
                    for (x, &rx) in ranks.iter().enumerate() {
                        data[(ry * rank_count + rx) * heads + head] += grad.at2(y, x);
                    }
                }
                self.accum(grads, *table, Tensor::from_vec(&[rows, heads], data)?);
            }
            Op::CrossEntropyRows(logits, targets) => {
                let g = grad.scalar_value()?;
                let (m, k) = self.value(*logits).dims2()?;
                let inv = g / m as f64;
                let mut data = vec![0.0; m * k];
                for (i, &t) in targets.iter().enumerate() {
                    let row = self.value(*logits).row(i);
                    let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|x| (x - mx).exp()).sum();
                    for j in 0..k {
                        let p = (row[j] - mx).exp() / sum;
                        data[i * k + j] = inv * (p - if j == t { 1.0 } else { 0.0 });
                    }
                }
                self.accum(grads, *logits, Tensor::from_vec(&[m, k], data)?);
            }
        }
        Ok(())
    }

    fn accum(&self, grads: &mut [Option<Tensor>], id: ValueId, delta: Tensor) {
        if !self.needs(id) {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => {
                for (gi, di) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gi += di;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + xs.iter().map(|x| (x - mx).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax of a vector under an optional boolean mask.
///
/// Masked entries come back as exactly 0.0; the unmasked entries sum to 1.
pub fn softmax_row(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let n = x.len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(NumericsError::ShapeMismatch {
                op: "softmax_row",
                detail: format!("{} values vs {} mask entries", n, m.len()),
            });
        }
    }
    let support: Vec<usize> = (0..n)
        .filter(|&i| mask.is_none_or(|m| m[i]))
        .collect();
    if support.is_empty() {
        return Err(NumericsError::AllMasked);
    }
    x.ensure_finite("softmax_row")?;
    let data = x.data();
    let mut mx = f64::NEG_INFINITY;
    for &i in &support {
        mx = mx.max(data[i]);
    }
    let mut out = vec![0.0; n];
    let mut sum = 0.0;
    for &i in &support {
        let e = (data[i] - mx).exp();
        out[i] = e;
        sum += e;
    }
    for &i in &support {
        out[i] /= sum;
    }
    Tensor::from_vec(x.shape(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_of_constant_vector_is_uniform() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = softmax_row(&x, None).unwrap();
        for &v in y.data() {
            assert!(close(v, 1.0 / 3.0, 1e-15));
        }
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let shifted = x.scale(1.0).unwrap().add(&Tensor::from_vec(&[4], vec![5.0; 4]).unwrap()).unwrap();
        let a = softmax_row(&x, None).unwrap();
        let b = softmax_row(&shifted, None).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!(close(*x, *y, 1e-12));
        }
    }

    #[test]
    fn softmax_masked_entries_are_exact_zero_and_rest_normalize() {
        let x = Tensor::from_vec(&[4], vec![1.0, 50.0, 2.0, 3.0]).unwrap();
        let y = softmax_row(&x, Some(&[true, false, true, true])).unwrap();
        assert_eq!(y.data()[1], 0.0);
        let sum: f64 = y.data().iter().sum();
        assert!(close(sum, 1.0, 1e-9));
    }

    #[test]
    fn softmax_all_masked_errors() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(
            softmax_row(&x, Some(&[false, false])),
            Err(NumericsError::AllMasked)
        ));
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_k() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_vec(&[1, 5], vec![0.0; 5]).unwrap());
        let loss = tape.cross_entropy(logits, 2).unwrap();
        assert!(close(tape.value(loss).data()[0], (5.0f64).ln(), 1e-12));
    }

    #[test]
    fn cross_entropy_confident_correct_goes_to_zero() {
        let mut tape = Tape::new();
        let logits = tape.constant(Tensor::from_vec(&[1, 3], vec![40.0, 0.0, 0.0]).unwrap());
        let loss = tape.cross_entropy(logits, 0).unwrap();
        assert!(tape.value(loss).data()[0] < 1e-12);
    }

    #[test]
    fn backward_linear_map_gives_input_as_grad() {
        // loss = sum(W x) => dW = x broadcast across rows.
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::zeros(&[2, 3]));
        let mut tape = Tape::new();
        let wv = tape.param(&store, w);
        let x = tape.constant(Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.matmul(wv, x).unwrap();
        let loss = tape.sum_all(y).unwrap();
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn unreachable_parameter_grad_stays_zero() {
        let mut store = ParamStore::new();
        let used = store.add("used", Tensor::scalar(2.0));
        let unused = store.add("unused", Tensor::scalar(5.0));
        let mut tape = Tape::new();
        let u = tape.param(&store, used);
        let loss = tape.sum_all(u).unwrap();
        store.zero_grads();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(used).grad.data()[0], 1.0);
        assert_eq!(store.get(unused).grad.data()[0], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut store = ParamStore::new();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(
            tape.backward(x, &mut store),
            Err(NumericsError::NotScalar(_))
        ));
    }
}
