use crate::autodiff::{CustomOp, NodeId, ParamId, ParamStore, Tape};
use crate::error::{invalid, shape_err, Result};
use crate::sampler::SampleRng;
use crate::tensor::{Scalar, Tensor};

use super::glorot_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BiLstmSpec {
    pub input: usize,
    /// Per-direction state size.
    pub hidden: usize,
    pub stacks: usize,
}

impl BiLstmSpec {
    pub fn output(&self) -> usize {
        2 * self.hidden
    }
}

fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// LSTM cell nonlinearity: gate pre-activations `[i f g o]` (`B × 4H`) and the
/// previous cell state (`B × H`) give `[h | c | σ(i) σ(f) tanh(g) σ(o)]`
/// (`B × 6H`). The activated gates are kept for the backward pass.
pub struct LstmCellOp;

impl LstmCellOp {
    pub fn forward<F: Scalar>(gates: &Tensor<F>, c_prev: &Tensor<F>) -> Result<Tensor<F>> {
        let (b, g4) = gates.dims2()?;
        let (cb, h) = c_prev.dims2()?;
        if g4 != 4 * h || cb != b {
            return Err(shape_err(
                "lstm-cell",
                format!("{:?} and {:?}", gates.shape(), c_prev.shape()),
            ));
        }
        let w = 6 * h;
        let mut out = vec![F::zero(); b * w];
        for r in 0..b {
            let gr = gates.row(r);
            let cr = c_prev.row(r);
            let o = &mut out[r * w..(r + 1) * w];
            for k in 0..h {
                let i = sigmoid(gr[k]);
                let f = sigmoid(gr[h + k]);
                let g = gr[2 * h + k].tanh();
                let og = sigmoid(gr[3 * h + k]);
                let c = f * cr[k] + i * g;
                o[k] = og * c.tanh();
                o[h + k] = c;
                o[2 * h + k] = i;
                o[3 * h + k] = f;
                o[4 * h + k] = g;
                o[5 * h + k] = og;
            }
        }
        Tensor::new(vec![b, w], out)
    }
}

impl<F: Scalar> CustomOp<F> for LstmCellOp {
    fn name(&self) -> &'static str {
        "lstm-cell"
    }

    fn backward(&self, parents: &[&Tensor<F>], value: &Tensor<F>, adjoint: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let c_prev = parents[1];
        let (b, w) = value.dims2()?;
        let h = w / 6;
        let one = F::one();
        let mut dgates = vec![F::zero(); b * 4 * h];
        let mut dc_prev = vec![F::zero(); b * h];
        for r in 0..b {
            let cr = c_prev.row(r);
            let vr = value.row(r);
            let ar = adjoint.row(r);
            let dg = &mut dgates[r * 4 * h..(r + 1) * 4 * h];
            for k in 0..h {
                let (i, f, g, o) = (vr[2 * h + k], vr[3 * h + k], vr[4 * h + k], vr[5 * h + k]);
                let tc = vr[h + k].tanh();
                let dh = ar[k];
                let dc = ar[h + k] + dh * o * (one - tc * tc);
                dg[k] = (dc * g + ar[2 * h + k]) * i * (one - i);
                dg[h + k] = (dc * cr[k] + ar[3 * h + k]) * f * (one - f);
                dg[2 * h + k] = (dc * i + ar[4 * h + k]) * (one - g * g);
                dg[3 * h + k] = (dh * tc + ar[5 * h + k]) * o * (one - o);
                dc_prev[r * h + k] = dc * f;
            }
        }
        Ok(vec![
            Tensor::new(vec![b, 4 * h], dgates)?,
            Tensor::new(vec![b, h], dc_prev)?,
        ])
    }
}

#[derive(Clone, Copy, Debug)]
struct Direction {
    input: ParamId,
    recurrent: ParamId,
    bias: ParamId,
}

/// Stacked bidirectional LSTM with zero initial states.
///
/// Sequences are packed time-major, longest first: `lengths` must be
/// non-increasing, and step `t` contributes one row for every sequence longer
/// than `t`, in batch order (see [`PackedLayout`]).
#[derive(Clone, Debug)]
pub struct BiLstm {
    spec: BiLstmSpec,
    layers: Vec<[Direction; 2]>,
}

/// Row positions of a packed batch of sequences.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedLayout {
    lengths: Vec<usize>,
    offsets: Vec<usize>,
    active: Vec<usize>,
}

impl PackedLayout {
    pub fn new(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() || lengths.contains(&0) {
            return Err(invalid("packed sequences must be non-empty"));
        }
        if lengths.windows(2).any(|w| w[0] < w[1]) {
            return Err(invalid(format!("packed lengths must be non-increasing, got {lengths:?}")));
        }
        let steps = lengths[0];
        let mut offsets = Vec::with_capacity(steps + 1);
        let mut active = Vec::with_capacity(steps);
        let mut total = 0;
        for t in 0..steps {
            let a = lengths.iter().take_while(|&&l| l > t).count();
            offsets.push(total);
            active.push(a);
            total += a;
        }
        offsets.push(total);
        Ok(PackedLayout { lengths: lengths.to_vec(), offsets, active })
    }

    pub fn rows(&self) -> usize {
        *self.offsets.last().expect("at least one offset")
    }

    pub fn steps(&self) -> usize {
        self.active.len()
    }

    /// Row of step `t` of sequence `b`.
    pub fn row(&self, t: usize, b: usize) -> usize {
        debug_assert!(t < self.lengths[b]);
        self.offsets[t] + b
    }

    /// Rows of sequence `b` in time order.
    pub fn sequence_rows(&self, b: usize) -> Vec<usize> {
        (0..self.lengths[b]).map(|t| self.row(t, b)).collect()
    }

    /// Permutation reversing every sequence in time; its own inverse.
    pub fn reversal(&self) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.rows());
        for t in 0..self.steps() {
            for b in 0..self.active[t] {
                idx.push(self.row(self.lengths[b] - 1 - t, b));
            }
        }
        idx
    }
}

impl BiLstm {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, spec: BiLstmSpec, rng: &mut SampleRng) -> Result<Self> {
        if spec.stacks == 0 || spec.hidden == 0 || spec.input == 0 {
            return Err(invalid(format!("bilstm {name} needs non-zero sizes, got {spec:?}")));
        }
        let h = spec.hidden;
        let mut layers = Vec::new();
        for s in 0..spec.stacks {
            let width = if s == 0 { spec.input } else { 2 * h };
            let mut make = |dir: &str| Direction {
                input: store.add(format!("{name}.{s}.{dir}.input"), glorot_uniform(width, 4 * h, rng)),
                recurrent: store.add(format!("{name}.{s}.{dir}.recurrent"), glorot_uniform(h, 4 * h, rng)),
                bias: store.add(format!("{name}.{s}.{dir}.bias"), Tensor::zeros(&[1, 4 * h])),
            };
            let fwd = make("forward");
            let bwd = make("backward");
            layers.push([fwd, bwd]);
        }
        Ok(BiLstm { spec, layers })
    }

    pub fn spec(&self) -> &BiLstmSpec {
        &self.spec
    }

    /// Maps packed `N × input` rows to packed `N × 2H` rows.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        x: NodeId,
        layout: &PackedLayout,
    ) -> Result<NodeId> {
        let (rows, cols) = tape.value(x).dims2()?;
        if rows != layout.rows() || cols != self.spec.input {
            return Err(shape_err(
                "bilstm",
                format!("input {rows}×{cols}, expected {}×{}", layout.rows(), self.spec.input),
            ));
        }
        let reverse = layout.reversal();
        let mut h = x;
        for [fwd, bwd] in &self.layers {
            let right = self.run(tape, store, *fwd, h, layout)?;
            let flipped = tape.gather_rows(h, &reverse)?;
            let left = self.run(tape, store, *bwd, flipped, layout)?;
            let left = tape.gather_rows(left, &reverse)?;
            h = tape.concat_cols(&[right, left])?;
        }
        Ok(h)
    }

    fn run<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        dir: Direction,
        x: NodeId,
        layout: &PackedLayout,
    ) -> Result<NodeId> {
        let hidden = self.spec.hidden;
        let wx = tape.param(store, dir.input);
        let wh = tape.param(store, dir.recurrent);
        let b = tape.param(store, dir.bias);
        let projected = tape.matmul(x, wx)?;
        let projected = tape.add_row(projected, b)?;
        let mut c = tape.input(Tensor::zeros(&[layout.active[0], hidden]))?;
        let mut h: Option<NodeId> = None;
        let mut outputs = Vec::with_capacity(layout.steps());
        for t in 0..layout.steps() {
            let active = layout.active[t];
            let mut gates = tape.slice_rows(projected, layout.offsets[t], active)?;
            if let Some(prev) = h {
                let prev = if tape.value(prev).rows() == active { prev } else { tape.slice_rows(prev, 0, active)? };
                if tape.value(c).rows() != active {
                    c = tape.slice_rows(c, 0, active)?;
                }
                let rec = tape.matmul(prev, wh)?;
                gates = tape.add(gates, rec)?;
            }
            let value = LstmCellOp::forward(tape.value(gates), tape.value(c))?;
            let cell = tape.custom(Box::new(LstmCellOp), vec![gates, c], value)?;
            let ht = tape.slice_cols(cell, 0, hidden)?;
            c = tape.slice_cols(cell, hidden, hidden)?;
            h = Some(ht);
            outputs.push(ht);
        }
        if outputs.len() == 1 {
            return Ok(outputs[0]);
        }
        tape.concat_rows(&outputs)
    }
}
