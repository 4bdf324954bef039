use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;

use crate::params::{Gradients, ParamId, ParamStore};
use crate::{AutodiffError, Result, Tensor};

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(1);

/// Handle to a value recorded on a particular tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var {
    index: usize,
    tape: usize,
}

enum Op {
    Leaf,
    Param(ParamId),
    Matmul(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MaskMul(usize, Tensor),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    SliceRows(usize, usize),
    SliceCols(usize, usize),
    Transpose(usize),
    Sigmoid(usize),
    Tanh(usize),
    SoftmaxRows(usize),
    Gather(usize, Vec<usize>),
    Bilinear(usize, usize, usize),
    LabelBilinear(usize, usize, usize),
    Sum(usize),
    // local gradient of the fused loss, scaled by the upstream scalar
    Loss(usize, Tensor),
}

struct Node {
    value: Option<Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Records a computation over a shared, read-only parameter store.
pub struct Tape<'p> {
    store: &'p ParamStore,
    id: usize,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<usize>>,
}

fn shape_error(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

fn shapes(a: &Tensor, b: &Tensor) -> String {
    format!("{}x{} and {}x{}", a.rows(), a.cols(), b.rows(), b.cols())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Bernoulli keep-mask scaled by `1 / (1 - p)`.
pub fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 / (1.0 - p);
    let mut mask = Tensor::zeros(rows, cols);
    for v in mask.data_mut() {
        if rng.gen::<f64>() >= p {
            *v = keep;
        }
    }
    mask
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Tape<'p> {
        Tape {
            store,
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }

    fn val(&self, index: usize) -> &Tensor {
        let node = &self.nodes[index];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes borrow their value"),
        }
    }

    /// Value of a variable. Panics if `v` was recorded on another tape.
    pub fn value(&self, v: Var) -> &Tensor {
        assert_eq!(v.tape, self.id, "variable does not belong to this tape");
        self.val(v.index)
    }

    fn push(&mut self, value: Option<Tensor>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            index: self.nodes.len() - 1,
            tape: self.id,
        }
    }

    fn grad_of(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Var {
        let rg = self.grad_of(inputs);
        self.push(Some(value), op, rg)
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Some(value), Op::Leaf, false)
    }

    /// The current value of a stored parameter. Frozen parameters are
    /// recorded without gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(index) = self.param_nodes[id.index()] {
            return Var {
                index,
                tape: self.id,
            };
        }
        let trainable = self.store.param(id).is_trainable();
        let v = self.push(None, Op::Param(id), trainable);
        self.param_nodes[id.index()] = Some(v.index);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.cols() != tb.rows() {
            return Err(shape_error("matmul", shapes(ta, tb)));
        }
        let out = ta.matmul(tb);
        Ok(self.record(out, Op::Matmul(ia, ib), &[ia, ib]))
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: fn(f64, f64) -> f64) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if ta.shape() != tb.shape() {
            return Err(shape_error(op, shapes(ta, tb)));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok((ia, ib, Tensor::new(ta.rows(), ta.cols(), data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.record(out, Op::Add(ia, ib), &[ia, ib]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.record(out, Op::Sub(ia, ib), &[ia, ib]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib, out) = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.record(out, Op::Mul(ia, ib), &[ia, ib]))
    }

    /// Adds the `1 x C` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.check(a)?, self.check(b)?);
        let (ta, tb) = (self.val(ia), self.val(ib));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(shape_error("add_row", shapes(ta, tb)));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, &x) in out.row_slice_mut(r).iter_mut().zip(tb.data()) {
                *o += x;
            }
        }
        Ok(self.record(out, Op::AddRow(ia, ib), &[ia, ib]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(|x| x * factor);
        Ok(self.record(out, Op::Scale(ia, factor), &[ia]))
    }

    /// Elementwise product with a constant mask.
    pub fn mask_mul(&mut self, a: Var, mask: Tensor) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        if ta.shape() != mask.shape() {
            return Err(shape_error("mask_mul", shapes(ta, &mask)));
        }
        let data = ta.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        Ok(self.record(out, Op::MaskMul(ia, mask), &[ia]))
    }

    /// Inverted dropout with drop probability `p`. Identity when `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(shape_error("dropout", format!("probability {p} outside [0, 1)")));
        }
        if p == 0.0 {
            self.check(a)?;
            return Ok(a);
        }
        let (r, c) = self.value(a).shape();
        let mask = dropout_mask(r, c, p, rng);
        self.mask_mul(a, mask)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = idx.first().ok_or_else(|| shape_error("concat_cols", "no inputs".into()))?;
        let rows = self.val(*first).rows();
        if let Some(&bad) = idx.iter().find(|&&i| self.val(i).rows() != rows) {
            return Err(shape_error("concat_cols", shapes(self.val(*first), self.val(bad))));
        }
        let cols: usize = idx.iter().map(|&i| self.val(i).cols()).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &i in &idx {
                data.extend_from_slice(self.val(i).row_slice(r));
            }
        }
        let out = Tensor::new(rows, cols, data)?;
        Ok(self.record(out, Op::ConcatCols(idx.clone()), &idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let idx = parts.iter().map(|&v| self.check(v)).collect::<Result<Vec<_>>>()?;
        let first = idx.first().ok_or_else(|| shape_error("concat_rows", "no inputs".into()))?;
        let cols = self.val(*first).cols();
        if let Some(&bad) = idx.iter().find(|&&i| self.val(i).cols() != cols) {
            return Err(shape_error("concat_rows", shapes(self.val(*first), self.val(bad))));
        }
        let mut data = Vec::new();
        for &i in &idx {
            data.extend_from_slice(self.val(i).data());
        }
        let out = Tensor::new(data.len() / cols.max(1), cols, data)?;
        Ok(self.record(out, Op::ConcatRows(idx.clone()), &idx))
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        if start > end || end > ta.rows() {
            return Err(shape_error(
                "slice_rows",
                format!("rows {start}..{end} of {}x{}", ta.rows(), ta.cols()),
            ));
        }
        let out = Tensor::new(end - start, ta.cols(), ta.data()[start * ta.cols()..end * ta.cols()].to_vec())?;
        Ok(self.record(out, Op::SliceRows(ia, start), &[ia]))
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let ia = self.check(a)?;
        let ta = self.val(ia);
        if start > end || end > ta.cols() {
            return Err(shape_error(
                "slice_cols",
                format!("columns {start}..{end} of {}x{}", ta.rows(), ta.cols()),
            ));
        }
        let mut data = Vec::with_capacity(ta.rows() * (end - start));
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..end]);
        }
        let out = Tensor::new(ta.rows(), end - start, data)?;
        Ok(self.record(out, Op::SliceCols(ia, start), &[ia]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).transpose();
        Ok(self.record(out, Op::Transpose(ia), &[ia]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(sigmoid);
        Ok(self.record(out, Op::Sigmoid(ia), &[ia]))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = self.val(ia).map(f64::tanh);
        Ok(self.record(out, Op::Tanh(ia), &[ia]))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let mut out = self.val(ia).clone();
        for r in 0..out.rows() {
            let row = out.row_slice_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        Ok(self.record(out, Op::SoftmaxRows(ia), &[ia]))
    }

    /// Rows of `table` selected by `indices`, in order; repeats allowed.
    pub fn gather(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let it = self.check(table)?;
        let tt = self.val(it);
        if let Some(&bad) = indices.iter().find(|&&i| i >= tt.rows()) {
            return Err(shape_error(
                "gather",
                format!("row {bad} of {}x{}", tt.rows(), tt.cols()),
            ));
        }
        let mut data = Vec::with_capacity(indices.len() * tt.cols());
        for &i in indices {
            data.extend_from_slice(tt.row_slice(i));
        }
        let out = Tensor::new(indices.len(), tt.cols(), data)?;
        Ok(self.record(out, Op::Gather(it, indices.to_vec()), &[it]))
    }

    /// `X W Y^T`: entry `(i, j)` is the bilinear form of row `i` of `x` and
    /// row `j` of `y`.
    pub fn bilinear(&mut self, x: Var, w: Var, y: Var) -> Result<Var> {
        let (ix, iw, iy) = (self.check(x)?, self.check(w)?, self.check(y)?);
        let (tx, tw, ty) = (self.val(ix), self.val(iw), self.val(iy));
        if tx.cols() != tw.rows() || tw.cols() != ty.cols() {
            return Err(shape_error(
                "bilinear",
                format!("{} with y {}x{}", shapes(tx, tw), ty.rows(), ty.cols()),
            ));
        }
        let out = tx.matmul(tw).matmul_t(ty);
        Ok(self.record(out, Op::Bilinear(ix, iw, iy), &[ix, iw, iy]))
    }

    /// Per-row bilinear forms against a stack of `L` matrices.
    ///
    /// `head` and `dep` are `M x d`, `w` is `d x (L * d)` holding the label
    /// matrices side by side. Entry `(m, l)` of the `M x L` result is
    /// `head_m W_l dep_m^T`.
    pub fn label_bilinear(&mut self, head: Var, w: Var, dep: Var) -> Result<Var> {
        let (ih, iw, id) = (self.check(head)?, self.check(w)?, self.check(dep)?);
        let (th, tw, td) = (self.val(ih), self.val(iw), self.val(id));
        let d = td.cols();
        if th.rows() != td.rows() || th.cols() != tw.rows() || d == 0 || tw.cols() % d != 0 {
            return Err(shape_error(
                "label_bilinear",
                format!("{} with dep {}x{}", shapes(th, tw), td.rows(), td.cols()),
            ));
        }
        let labels = tw.cols() / d;
        let p = th.matmul(tw);
        let mut out = Tensor::zeros(th.rows(), labels);
        for m in 0..th.rows() {
            let (prow, drow) = (p.row_slice(m), td.row_slice(m));
            for l in 0..labels {
                out.set(m, l, crate::tensor::dot(&prow[l * d..(l + 1) * d], drow));
            }
        }
        Ok(self.record(out, Op::LabelBilinear(ih, iw, id), &[ih, iw, id]))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let ia = self.check(a)?;
        let out = Tensor::scalar(self.val(ia).sum());
        Ok(self.record(out, Op::Sum(ia), &[ia]))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(shape_error("mean", "empty tensor".into()));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Weighted binary cross-entropy with logits, summed over cells.
    ///
    /// Cells with zero weight are skipped entirely and so contribute an
    /// exact zero gradient.
    pub fn sigmoid_xent(&mut self, logits: Var, targets: &Tensor, weights: &Tensor) -> Result<Var> {
        let il = self.check(logits)?;
        let tl = self.val(il);
        if tl.shape() != targets.shape() || tl.shape() != weights.shape() {
            return Err(shape_error(
                "sigmoid_xent",
                format!("{} with weights {}x{}", shapes(tl, targets), weights.rows(), weights.cols()),
            ));
        }
        let mut loss = 0.0;
        let mut grad = Tensor::zeros(tl.rows(), tl.cols());
        for (k, ((&s, &t), &w)) in tl.data().iter().zip(targets.data()).zip(weights.data()).enumerate() {
            if w == 0.0 {
                continue;
            }
            loss += w * (s.max(0.0) - s * t + (-s.abs()).exp().ln_1p());
            grad.data_mut()[k] = w * (sigmoid(s) - t);
        }
        Ok(self.record(Tensor::scalar(loss), Op::Loss(il, grad), &[il]))
    }

    /// Weighted softmax cross-entropy with logits, one target column per
    /// row, summed over rows.
    ///
    /// With `allowed`, the softmax of each row runs only over columns whose
    /// mask entry is non-zero. Rows with zero weight are skipped.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        allowed: Option<&Tensor>,
    ) -> Result<Var> {
        let il = self.check(logits)?;
        let tl = self.val(il);
        let (rows, cols) = tl.shape();
        if targets.len() != rows || weights.len() != rows {
            return Err(shape_error(
                "softmax_xent",
                format!("{rows}x{cols} logits with {} targets and {} weights", targets.len(), weights.len()),
            ));
        }
        if let Some(mask) = allowed {
            if mask.shape() != tl.shape() {
                return Err(shape_error("softmax_xent", shapes(tl, mask)));
            }
        }
        let ok = |r: usize, c: usize| allowed.is_none_or(|m| m.get(r, c) != 0.0);
        let mut loss = 0.0;
        let mut grad = Tensor::zeros(rows, cols);
        for r in 0..rows {
            let w = weights[r];
            if w == 0.0 {
                continue;
            }
            let t = targets[r];
            if t >= cols || !ok(r, t) {
                return Err(shape_error(
                    "softmax_xent",
                    format!("target column {t} of row {r} is not an allowed column of {rows}x{cols}"),
                ));
            }
            let row = tl.row_slice(r);
            let max = (0..cols).filter(|&c| ok(r, c)).map(|c| row[c]).fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = (0..cols).filter(|&c| ok(r, c)).map(|c| (row[c] - max).exp()).sum();
            let lse = max + total.ln();
            loss += w * (lse - row[t]);
            let g = grad.row_slice_mut(r);
            for c in (0..cols).filter(|&c| ok(r, c)) {
                g[c] = w * (row[c] - lse).exp();
            }
            g[t] -= w;
        }
        Ok(self.record(Tensor::scalar(loss), Op::Loss(il, grad), &[il]))
    }

    /// Gradients of the scalar `loss` with respect to every trainable
    /// parameter it depends on.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let il = self.check(loss)?;
        let tl = self.val(il);
        if tl.shape() != (1, 1) {
            return Err(AutodiffError::NotScalar {
                rows: tl.rows(),
                cols: tl.cols(),
            });
        }
        let mut out = Gradients::default();
        let mut grads: Vec<Option<Tensor>> = vec![None; il + 1];
        grads[il] = Some(Tensor::scalar(1.0));
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, g, &mut grads, &mut out);
        }
        Ok(out)
    }

    fn backward_node(&self, i: usize, g: Tensor, grads: &mut [Option<Tensor>], out: &mut Gradients) {
        let mut acc = |j: usize, t: Tensor| {
            if !self.nodes[j].requires_grad {
                return;
            }
            match &mut grads[j] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Param(id) => out.add_dense(*id, &g),
            Op::Matmul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                if self.nodes[*a].requires_grad {
                    acc(*a, g.matmul_t(tb));
                }
                if self.nodes[*b].requires_grad {
                    acc(*b, ta.t_matmul(&g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g);
            }
            Op::Sub(a, b) => {
                acc(*b, g.map(|x| -x));
                acc(*a, g);
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.val(*a), self.val(*b));
                acc(*a, zip_with(&g, tb, |x, y| x * y));
                acc(*b, zip_with(&g, ta, |x, y| x * y));
            }
            Op::AddRow(a, b) => {
                let mut row = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, &x) in row.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += x;
                    }
                }
                acc(*b, row);
                acc(*a, g);
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::MaskMul(a, mask) => acc(*a, zip_with(&g, mask, |x, m| x * m)),
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let cols = self.val(p).cols();
                    let mut data = Vec::with_capacity(g.rows() * cols);
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + cols]);
                    }
                    offset += cols;
                    acc(p, Tensor::new(g.rows(), cols, data).expect("consistent shape"));
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.val(p).len();
                    let rows = self.val(p).rows();
                    let part = g.data()[offset..offset + n].to_vec();
                    offset += n;
                    acc(p, Tensor::new(rows, g.cols(), part).expect("consistent shape"));
                }
            }
            Op::SliceRows(a, start) => {
                let ta = self.val(*a);
                let mut full = Tensor::zeros(ta.rows(), ta.cols());
                let c = ta.cols();
                full.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                acc(*a, full);
            }
            Op::SliceCols(a, start) => {
                let ta = self.val(*a);
                let mut full = Tensor::zeros(ta.rows(), ta.cols());
                for r in 0..g.rows() {
                    full.row_slice_mut(r)[*start..start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                acc(*a, full);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Sigmoid(a) => {
                let y = self.val(i);
                acc(*a, zip_with(&g, y, |x, y| x * y * (1.0 - y)));
            }
            Op::Tanh(a) => {
                let y = self.val(i);
                acc(*a, zip_with(&g, y, |x, y| x * (1.0 - y * y)));
            }
            Op::SoftmaxRows(a) => {
                let y = self.val(i);
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let inner = crate::tensor::dot(yr, gr);
                    for (c, d) in dx.row_slice_mut(r).iter_mut().enumerate() {
                        *d = yr[c] * (gr[c] - inner);
                    }
                }
                acc(*a, dx);
            }
            Op::Gather(table, indices) => {
                if let Op::Param(id) = self.nodes[*table].op {
                    for (r, &row) in indices.iter().enumerate() {
                        out.add_row(id, row, g.row_slice(r));
                    }
                } else {
                    let tt = self.val(*table);
                    let mut full = Tensor::zeros(tt.rows(), tt.cols());
                    for (r, &row) in indices.iter().enumerate() {
                        for (o, &x) in full.row_slice_mut(row).iter_mut().zip(g.row_slice(r)) {
                            *o += x;
                        }
                    }
                    acc(*table, full);
                }
            }
            Op::Bilinear(x, w, y) => {
                let (tx, tw, ty) = (self.val(*x), self.val(*w), self.val(*y));
                let gy = g.matmul(ty);
                if self.nodes[*x].requires_grad {
                    acc(*x, gy.matmul_t(tw));
                }
                if self.nodes[*w].requires_grad {
                    acc(*w, tx.t_matmul(&gy));
                }
                if self.nodes[*y].requires_grad {
                    acc(*y, g.t_matmul(&tx.matmul(tw)));
                }
            }
            Op::LabelBilinear(h, w, dep) => {
                let (th, tw, td) = (self.val(*h), self.val(*w), self.val(*dep));
                let d = td.cols();
                let labels = g.cols();
                if self.nodes[*dep].requires_grad {
                    let p = th.matmul(tw);
                    let mut dd = Tensor::zeros(td.rows(), d);
                    for m in 0..td.rows() {
                        let prow = p.row_slice(m);
                        let out_row = dd.row_slice_mut(m);
                        for l in 0..labels {
                            let gl = g.get(m, l);
                            for (o, &x) in out_row.iter_mut().zip(&prow[l * d..(l + 1) * d]) {
                                *o += gl * x;
                            }
                        }
                    }
                    acc(*dep, dd);
                }
                let mut q = Tensor::zeros(td.rows(), labels * d);
                for m in 0..td.rows() {
                    let drow = td.row_slice(m).to_vec();
                    let qrow = q.row_slice_mut(m);
                    for l in 0..labels {
                        let gl = g.get(m, l);
                        for (o, &x) in qrow[l * d..(l + 1) * d].iter_mut().zip(&drow) {
                            *o = gl * x;
                        }
                    }
                }
                if self.nodes[*w].requires_grad {
                    acc(*w, th.t_matmul(&q));
                }
                if self.nodes[*h].requires_grad {
                    acc(*h, q.matmul_t(tw));
                }
            }
            Op::Sum(a) => {
                let ta = self.val(*a);
                acc(*a, Tensor::filled(ta.rows(), ta.cols(), g.item()));
            }
            Op::Loss(a, local) => {
                let s = g.item();
                acc(*a, local.map(|x| x * s));
            }
        }
    }
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}
