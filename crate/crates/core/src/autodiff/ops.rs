//! Differentiable operation kinds: forward builders and local derivatives.

use super::tape::{CustomOp, GraphNode, NodeId, Op, Tape};
use crate::error::{shape_err, Result};
use crate::tensor::{gemm_into, Scalar, Tensor};

/// Direction of a row/column-wise reduction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Independently within each row (over the columns).
    Row,
    /// Independently within each column (over the rows).
    Col,
}

fn same_shape<F: Scalar>(op: &'static str, a: &Tensor<F>, b: &Tensor<F>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn softmax_rows<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
    let (r, c) = (x.rows(), x.cols());
    let mut out = x.clone();
    let d = out.data_mut();
    for i in 0..r {
        let row = &mut d[i * c..(i + 1) * c];
        let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut z = F::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    out
}

impl<F: Scalar> Tape<F> {
    fn unary(&mut self, op: Op<F>, x: NodeId, f: impl Fn(F) -> F) -> Result<NodeId> {
        let v = self.value(x).map(f);
        self.forward_node(op, vec![x], v)
    }

    /// `op(a) · op(b)` for rank-2 operands.
    pub fn matmul_t(&mut self, a: NodeId, ta: bool, b: NodeId, tb: bool) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let ad = av.dims2()?;
        let bd = bv.dims2()?;
        let (m, k) = if ta { (ad.1, ad.0) } else { ad };
        let (k2, n) = if tb { (bd.1, bd.0) } else { bd };
        if k != k2 {
            return Err(shape_err(
                "matmul",
                format!("{:?}{} x {:?}{}", ad, if ta { "ᵀ" } else { "" }, bd, if tb { "ᵀ" } else { "" }),
            ));
        }
        let mut out = Tensor::zeros(&[m, n]);
        gemm_into(av.data(), ad, ta, bv.data(), bd, tb, out.data_mut(), false);
        self.forward_node(Op::MatMul { ta, tb }, vec![a, b], out)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, false, b, false)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.forward_node(Op::Add, vec![a, b], v)
    }

    /// Adds a `1×c` row vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if self.value(row).shape() != [1, c] {
            return Err(shape_err(
                "add-row",
                format!("{:?} + {:?}", [r, c], self.value(row).shape()),
            ));
        }
        let mut v = self.value(x).clone();
        let b = self.value(row).data();
        for chunk in v.data_mut().chunks_mut(c) {
            for (a, &bb) in chunk.iter_mut().zip(b) {
                *a += bb;
            }
        }
        self.forward_node(Op::AddRow, vec![x, row], v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("sub", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.forward_node(Op::Sub, vec![a, b], v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        same_shape("elementwise-mul", self.value(a), self.value(b))?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.forward_node(Op::Mul, vec![a, b], v)
    }

    pub fn scale(&mut self, x: NodeId, s: F) -> Result<NodeId> {
        self.unary(Op::Scale(s), x, |v| v * s)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Relu, x, |v| if v > F::zero() { v } else { F::zero() })
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Tanh, x, F::tanh)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Sigmoid, x, |v| F::one() / (F::one() + (-v).exp()))
    }

    pub fn exp(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Exp, x, F::exp)
    }

    pub fn log(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary(Op::Log, x, F::ln)
    }

    /// Max-shifted softmax within each row or each column.
    pub fn softmax(&mut self, x: NodeId, axis: Axis) -> Result<NodeId> {
        let xv = self.value(x);
        xv.dims2()?;
        let v = match axis {
            Axis::Row => softmax_rows(xv),
            Axis::Col => softmax_rows(&xv.transposed()?).transposed()?,
        };
        self.forward_node(Op::Softmax(axis), vec![x], v)
    }

    /// Maximum within each row (`r×1` result) or each column (`1×c` result).
    /// Ties go to the lowest index.
    pub fn max_reduce(&mut self, x: NodeId, axis: Axis) -> Result<NodeId> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        let (outer, inner, shape) = match axis {
            Axis::Row => (r, c, [r, 1]),
            Axis::Col => (c, r, [1, c]),
        };
        if inner == 0 {
            return Err(shape_err("max-reduce", format!("empty axis in {:?}", [r, c])));
        }
        let mut argmax = Vec::with_capacity(outer);
        let mut vals = Vec::with_capacity(outer);
        for o in 0..outer {
            let at = |i: usize| match axis {
                Axis::Row => xv.at(o, i),
                Axis::Col => xv.at(i, o),
            };
            let mut best = 0;
            for i in 1..inner {
                if at(i) > at(best) {
                    best = i;
                }
            }
            argmax.push(best);
            vals.push(at(best));
        }
        let v = Tensor::new(shape.to_vec(), vals)?;
        self.forward_node(Op::MaxReduce { axis, argmax }, vec![x], v)
    }

    /// Sum of all entries as a `1×1` scalar.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        self.forward_node(Op::Sum, vec![x], Tensor::scalar(s))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let r = self.value(parts[0]).rows();
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                let shapes: Vec<_> = parts.iter().map(|&q| self.shape(q).to_vec()).collect();
                return Err(shape_err("concat-columns", format!("{shapes:?}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![r, total], data)?;
        self.forward_node(Op::ConcatCols, parts.to_vec(), v)
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let c = self.value(parts[0]).cols();
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pc != c {
                let shapes: Vec<_> = parts.iter().map(|&q| self.shape(q).to_vec()).collect();
                return Err(shape_err("concat-rows", format!("{shapes:?}")));
            }
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, c], data)?;
        self.forward_node(Op::ConcatRows, parts.to_vec(), v)
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).transposed()?;
        self.forward_node(Op::Transpose, vec![x], v)
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > r {
            return Err(shape_err("slice-rows", format!("rows {start}..{} of {:?}", start + len, [r, c])));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let v = Tensor::new(vec![len, c], data)?;
        self.forward_node(Op::SliceRows { start }, vec![x], v)
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (r, c) = self.value(x).dims2()?;
        if start + len > c {
            return Err(shape_err("slice-columns", format!("cols {start}..{} of {:?}", start + len, [r, c])));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.row(i)[start..start + len]);
        }
        let v = Tensor::new(vec![r, len], data)?;
        self.forward_node(Op::SliceCols { start }, vec![x], v)
    }

    /// Row lookup: output row `i` is row `indices[i]` of `table`.
    pub fn gather_rows(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(table).dims2()?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= r) {
            return Err(shape_err("embedding-gather", format!("index {bad} into {r} rows")));
        }
        let tv = self.value(table);
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            data.extend_from_slice(tv.row(i));
        }
        let v = Tensor::new(vec![indices.len(), c], data)?;
        self.forward_node(
            Op::GatherRows {
                indices: indices.to_vec(),
            },
            vec![table],
            v,
        )
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x).clone().reshaped(shape)?;
        self.forward_node(Op::Reshape, vec![x], v)
    }

    /// Weighted sum over rows of `-log softmax(logits[r])[targets[r]]`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[F]) -> Result<NodeId> {
        let (r, c) = self.value(logits).dims2()?;
        if targets.len() != r || weights.len() != r {
            return Err(shape_err(
                "cross-entropy-from-logits",
                format!("{r} rows, {} targets, {} weights", targets.len(), weights.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(shape_err("cross-entropy-from-logits", format!("target {bad} with {c} classes")));
        }
        let probs = softmax_rows(self.value(logits));
        let mut loss = F::zero();
        for i in 0..r {
            if weights[i] != F::zero() {
                let row = self.value(logits).row(i);
                let mx = row.iter().copied().fold(F::neg_infinity(), F::max);
                let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<F>().ln();
                loss += weights[i] * (lse - row[targets[i]]);
            }
        }
        self.forward_node(
            Op::CrossEntropy {
                targets: targets.to_vec(),
                weights: weights.to_vec(),
                probs,
            },
            vec![logits],
            Tensor::scalar(loss),
        )
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, soft: NodeId, hard: Tensor<F>) -> Result<NodeId> {
        same_shape("straight-through", self.value(soft), &hard)?;
        self.forward_node(Op::StraightThrough, vec![soft], hard)
    }

    /// Records a custom operation whose value was computed by the caller.
    pub fn custom(&mut self, op: Box<dyn CustomOp<F>>, parents: Vec<NodeId>, value: Tensor<F>) -> Result<NodeId> {
        self.forward_node(Op::Custom(op), parents, value)
    }

    /// Adds the vector-Jacobian products of ops whose parent adjoints are
    /// sparse or produced by a GEMM straight into the running adjoints,
    /// avoiding a full-size temporary. Returns false for other ops.
    pub(crate) fn accumulate_in_place(
        &self,
        node: &GraphNode<F>,
        g: &Tensor<F>,
        adjoints: &mut [Option<Tensor<F>>],
    ) -> Result<bool> {
        let slot = |adjoints: &mut [Option<Tensor<F>>], i: usize| -> Option<usize> {
            let p = node.parents[i].0;
            if !self.nodes[p].requires_grad {
                return None;
            }
            if adjoints[p].is_none() {
                adjoints[p] = Some(Tensor::zeros(self.nodes[p].value.shape()));
            }
            Some(p)
        };
        match &node.op {
            Op::MatMul { ta, tb } => {
                let (a, b) = (&self.nodes[node.parents[0].0].value, &self.nodes[node.parents[1].0].value);
                let (ad, bd, gd) = (a.dims2()?, b.dims2()?, g.dims2()?);
                if let Some(p) = slot(adjoints, 0) {
                    let da = adjoints[p].as_mut().expect("slot filled").data_mut();
                    if *ta {
                        gemm_into(b.data(), bd, *tb, g.data(), gd, true, da, true);
                    } else {
                        gemm_into(g.data(), gd, false, b.data(), bd, !*tb, da, true);
                    }
                }
                if let Some(p) = slot(adjoints, 1) {
                    let db = adjoints[p].as_mut().expect("slot filled").data_mut();
                    if *tb {
                        gemm_into(g.data(), gd, true, a.data(), ad, *ta, db, true);
                    } else {
                        gemm_into(a.data(), ad, !*ta, g.data(), gd, false, db, true);
                    }
                }
            }
            Op::SliceRows { start } => {
                if let Some(p) = slot(adjoints, 0) {
                    let dx = adjoints[p].as_mut().expect("slot filled");
                    let c = g.cols();
                    let dst = &mut dx.data_mut()[start * c..start * c + g.len()];
                    for (d, &v) in dst.iter_mut().zip(g.data()) {
                        *d += v;
                    }
                }
            }
            Op::SliceCols { start } => {
                if let Some(p) = slot(adjoints, 0) {
                    let dx = adjoints[p].as_mut().expect("slot filled");
                    let (c, len) = (dx.cols(), g.cols());
                    for row in 0..g.rows() {
                        let dst = &mut dx.data_mut()[row * c + start..row * c + start + len];
                        for (d, &v) in dst.iter_mut().zip(g.row(row)) {
                            *d += v;
                        }
                    }
                }
            }
            Op::GatherRows { indices } => {
                if let Some(p) = slot(adjoints, 0) {
                    let dx = adjoints[p].as_mut().expect("slot filled");
                    let c = dx.cols();
                    for (out_row, &src) in indices.iter().enumerate() {
                        let d = &mut dx.data_mut()[src * c..(src + 1) * c];
                        for (acc, &v) in d.iter_mut().zip(g.row(out_row)) {
                            *acc += v;
                        }
                    }
                }
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Local vector-Jacobian products for `node`, one entry per parent.
    pub(crate) fn local_backward(&self, node: &GraphNode<F>, g: &Tensor<F>) -> Result<Vec<Option<Tensor<F>>>> {
        let pv = |i: usize| &self.nodes[node.parents[i].0].value;
        let y = &node.value;
        let out = match &node.op {
            Op::Input | Op::Variable | Op::Param(_) => Vec::new(),
            Op::MatMul { ta, tb } => {
                let (a, b) = (pv(0), pv(1));
                let (ad, bd) = (a.dims2()?, b.dims2()?);
                let gd = g.dims2()?;
                let mut da = Tensor::zeros(a.shape());
                if *ta {
                    gemm_into(b.data(), bd, *tb, g.data(), gd, true, da.data_mut(), false);
                } else {
                    gemm_into(g.data(), gd, false, b.data(), bd, !*tb, da.data_mut(), false);
                }
                let mut db = Tensor::zeros(b.shape());
                if *tb {
                    gemm_into(g.data(), gd, true, a.data(), ad, *ta, db.data_mut(), false);
                } else {
                    gemm_into(a.data(), ad, !*ta, g.data(), gd, false, db.data_mut(), false);
                }
                vec![Some(da), Some(db)]
            }
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::AddRow => {
                let c = g.cols();
                let mut db = Tensor::zeros(&[1, c]);
                for chunk in g.data().chunks(c) {
                    for (acc, &v) in db.data_mut().iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                vec![Some(g.clone()), Some(db)]
            }
            Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul => vec![
                Some(g.zip_map(pv(1), |a, b| a * b)),
                Some(g.zip_map(pv(0), |a, b| a * b)),
            ],
            Op::Scale(s) => vec![Some(g.map(|v| v * *s))],
            // Subgradient 0 at the kink.
            Op::Relu => vec![Some(g.zip_map(pv(0), |gv, x| if x > F::zero() { gv } else { F::zero() }))],
            Op::Tanh => vec![Some(g.zip_map(y, |gv, yv| gv * (F::one() - yv * yv)))],
            Op::Sigmoid => vec![Some(g.zip_map(y, |gv, yv| gv * yv * (F::one() - yv)))],
            Op::Exp => vec![Some(g.zip_map(y, |gv, yv| gv * yv))],
            Op::Log => vec![Some(g.zip_map(pv(0), |gv, x| gv / x))],
            Op::Softmax(axis) => {
                let (gy, yy) = match axis {
                    Axis::Row => (g.clone(), y.clone()),
                    Axis::Col => (g.transposed()?, y.transposed()?),
                };
                let c = yy.cols();
                let mut dx = gy.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(c).zip(yy.data().chunks(c)) {
                    let dot: F = drow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d = yv * (*d - dot);
                    }
                }
                let dx = match axis {
                    Axis::Row => dx,
                    Axis::Col => dx.transposed()?,
                };
                vec![Some(dx)]
            }
            Op::MaxReduce { axis, argmax } => {
                let mut dx = Tensor::zeros(pv(0).shape());
                for (o, &i) in argmax.iter().enumerate() {
                    match axis {
                        Axis::Row => dx.set(o, i, g.data()[o]),
                        Axis::Col => dx.set(i, o, g.data()[o]),
                    }
                }
                vec![Some(dx)]
            }
            Op::Sum => vec![Some(Tensor::filled(pv(0).shape(), g.item()))],
            Op::ConcatCols => {
                let r = g.rows();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(node.parents.len());
                for i in 0..node.parents.len() {
                    let pc = pv(i).cols();
                    let mut d = Vec::with_capacity(r * pc);
                    for row in 0..r {
                        d.extend_from_slice(&g.row(row)[offset..offset + pc]);
                    }
                    offset += pc;
                    grads.push(Some(Tensor::new(pv(i).shape().to_vec(), d)?));
                }
                grads
            }
            Op::ConcatRows => {
                let c = g.cols();
                let mut offset = 0;
                let mut grads = Vec::with_capacity(node.parents.len());
                for i in 0..node.parents.len() {
                    let n = pv(i).rows() * c;
                    grads.push(Some(Tensor::new(
                        pv(i).shape().to_vec(),
                        g.data()[offset..offset + n].to_vec(),
                    )?));
                    offset += n;
                }
                grads
            }
            Op::Transpose => vec![Some(g.transposed()?)],
            Op::SliceRows { start } => {
                let mut dx = Tensor::zeros(pv(0).shape());
                let c = g.cols();
                dx.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                vec![Some(dx)]
            }
            Op::SliceCols { start } => {
                let mut dx = Tensor::zeros(pv(0).shape());
                let (c, len) = (dx.cols(), g.cols());
                for row in 0..g.rows() {
                    dx.data_mut()[row * c + start..row * c + start + len].copy_from_slice(g.row(row));
                }
                vec![Some(dx)]
            }
            Op::GatherRows { indices } => {
                let mut dx = Tensor::zeros(pv(0).shape());
                let c = dx.cols();
                for (out_row, &src) in indices.iter().enumerate() {
                    let d = &mut dx.data_mut()[src * c..(src + 1) * c];
                    for (acc, &v) in d.iter_mut().zip(g.row(out_row)) {
                        *acc += v;
                    }
                }
                vec![Some(dx)]
            }
            Op::Reshape => vec![Some(g.clone().reshaped(pv(0).shape())?)],
            Op::CrossEntropy {
                targets,
                weights,
                probs,
            } => {
                let gs = g.item();
                let c = probs.cols();
                let mut dx = probs.clone();
                for (i, row) in dx.data_mut().chunks_mut(c).enumerate() {
                    let w = weights[i] * gs;
                    for v in row.iter_mut() {
                        *v *= w;
                    }
                    row[targets[i]] -= w;
                }
                vec![Some(dx)]
            }
            Op::StraightThrough => vec![Some(g.clone())],
            Op::Custom(op) => {
                let parents: Vec<&Tensor<F>> = node.parents.iter().map(|p| &self.nodes[p.0].value).collect();
                op.backward(&parents, y, g)?.into_iter().map(Some).collect()
            }
        };
        Ok(out)
    }
}
