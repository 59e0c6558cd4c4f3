//! Dotted-attention arc scorer: `W[h][m] = head(e_h) · mod(e_m) + bias[h - m]`.

use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{shape_err, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::sampler::SampleRng;
use crate::tensor::{Scalar, Tensor};

/// Learned bias per signed distance `h - m`, clipped at `±radius` with one
/// overflow bucket on each side.
#[derive(Clone, Copy, Debug)]
pub struct DistanceBias {
    table: ParamId,
    radius: usize,
}

impl DistanceBias {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, radius: usize) -> Self {
        let table = store.add(format!("{name}.table"), Tensor::zeros(&[2 * radius + 3, 1]));
        DistanceBias { table, radius }
    }

    pub fn table(&self) -> ParamId {
        self.table
    }

    pub fn buckets(&self) -> usize {
        2 * self.radius + 3
    }

    pub fn bucket(&self, head: usize, modifier: usize) -> usize {
        let d = head as i64 - modifier as i64;
        let r = self.radius as i64;
        if d < -r {
            0
        } else if d > r {
            (2 * r + 2) as usize
        } else {
            (d + r + 1) as usize
        }
    }

    /// `L × L` node with the bias of every head/modifier pair.
    pub fn matrix<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, len: usize) -> Result<NodeId> {
        let idx: Vec<usize> = (0..len * len).map(|k| self.bucket(k / len, k % len)).collect();
        let table = tape.param(store, self.table);
        let flat = tape.gather_rows(table, &idx)?;
        tape.reshape(flat, &[len, len])
    }
}

#[derive(Clone, Debug)]
pub struct ArcScorer {
    head: Mlp,
    modifier: Mlp,
    bias: Option<DistanceBias>,
}

impl ArcScorer {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        head: MlpSpec,
        modifier: MlpSpec,
        distance_radius: Option<usize>,
        rng: &mut SampleRng,
    ) -> Result<Self> {
        if head.output() != modifier.output() || head.input != modifier.input {
            return Err(shape_err(
                "score-arcs",
                format!("head mlp {}→{} vs modifier mlp {}→{}", head.input, head.output(), modifier.input, modifier.output()),
            ));
        }
        Ok(ArcScorer {
            head: Mlp::new(store, &format!("{name}.head"), head, rng)?,
            modifier: Mlp::new(store, &format!("{name}.modifier"), modifier, rng)?,
            bias: distance_radius.map(|r| DistanceBias::new(store, &format!("{name}.distance"), r)),
        })
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn modifier(&self) -> &Mlp {
        &self.modifier
    }

    pub fn bias(&self) -> Option<&DistanceBias> {
        self.bias.as_ref()
    }

    /// Head and modifier projections of every row of `x`, computed once per token.
    pub fn project<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: NodeId) -> Result<(NodeId, NodeId)> {
        Ok((self.head.forward(tape, store, x)?, self.modifier.forward(tape, store, x)?))
    }

    /// Score matrix from the projections of one sentence (`L` rows each).
    pub fn pair_scores<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        head: NodeId,
        modifier: NodeId,
    ) -> Result<NodeId> {
        let len = tape.value(head).rows();
        let dots = tape.matmul_t(head, false, modifier, true)?;
        match &self.bias {
            Some(b) => {
                let bias = b.matrix(tape, store, len)?;
                tape.add(dots, bias)
            }
            None => Ok(dots),
        }
    }

    /// `(n+1) × (n+1)` arc scores for the embeddings `x` of one sentence.
    pub fn score<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: NodeId) -> Result<NodeId> {
        let (h, m) = self.project(tape, store, x)?;
        self.pair_scores(tape, store, h, m)
    }
}
