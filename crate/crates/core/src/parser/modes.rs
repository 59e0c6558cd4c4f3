use super::arena::{ChartArena, PooledChart};
use super::chart::Rule;
use crate::autodiff::{CustomOp, Mode, NodeId, Tape};
use crate::error::{invalid, Error, Result};
use crate::tensor::{Scalar, Tensor};

/// How the tree enters the computation graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseMode {
    /// MAP tree as a constant; no gradient path.
    Discrete,
    /// Softmax-relaxed chart in both passes.
    Relaxed,
    /// MAP tree forward, relaxed chart's Jacobian backward.
    StraightThrough,
}

/// Tape operation wrapping a built and backtracked softmax chart.
pub struct RelaxedEisnerOp<F> {
    chart: PooledChart<F>,
}

impl<F: Scalar> CustomOp<F> for RelaxedEisnerOp<F> {
    fn name(&self) -> &'static str {
        "eisner-relaxed"
    }

    fn backward(&self, _parents: &[&Tensor<F>], value: &Tensor<F>, adjoint: &Tensor<F>) -> Result<Vec<Tensor<F>>> {
        let grad = self.chart.backward(adjoint.data())?;
        Ok(vec![Tensor::new(value.shape().to_vec(), grad)?])
    }
}

fn square_side<F: Scalar>(tape: &Tape<F>, scores: NodeId) -> Result<usize> {
    let (r, c) = tape.value(scores).dims2()?;
    if r != c || r < 2 {
        return Err(Error::ShapeMismatch {
            op: "parse",
            shapes: format!("scores must be (n+1)×(n+1) with n ≥ 1, got {r}×{c}"),
        });
    }
    Ok(r)
}

/// Relaxed adjacency node for the score node `scores`.
pub fn eisner_relaxed<F: Scalar>(
    tape: &mut Tape<F>,
    scores: NodeId,
    temperature: f64,
    arena: &ChartArena<F>,
) -> Result<NodeId> {
    let s = square_side(tape, scores)?;
    let mut chart = arena.take();
    chart.build(tape.value(scores).data(), s - 1, Rule::Softmax { temperature })?;
    let t = chart.backtrack()?;
    let value = Tensor::new(vec![s, s], t)?;
    tape.custom(Box::new(RelaxedEisnerOp { chart }), vec![scores], value)
}

fn map_tree<F: Scalar>(tape: &Tape<F>, scores: NodeId, arena: &ChartArena<F>) -> Result<Tensor<F>> {
    let s = square_side(tape, scores)?;
    let mut chart = arena.take();
    chart.build(tape.value(scores).data(), s - 1, Rule::Max)?;
    Tensor::new(vec![s, s], chart.backtrack()?)
}

/// Parses the `(n+1)×(n+1)` score node into an adjacency node.
pub fn parse<F: Scalar>(
    tape: &mut Tape<F>,
    scores: NodeId,
    mode: ParseMode,
    temperature: f64,
    arena: &ChartArena<F>,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(invalid(format!("temperature must be positive, got {temperature}")));
    }
    match mode {
        ParseMode::Discrete => {
            if tape.mode() == Mode::Train {
                return Err(Error::NoGradientPath(
                    "discrete parsing inside a training tape; use relaxed or straight-through".into(),
                ));
            }
            let tree = map_tree(tape, scores, arena)?;
            tape.input(tree)
        }
        ParseMode::Relaxed => eisner_relaxed(tape, scores, temperature, arena),
        ParseMode::StraightThrough => {
            let hard = map_tree(tape, scores, arena)?;
            let soft = eisner_relaxed(tape, scores, temperature, arena)?;
            tape.straight_through(soft, hard)
        }
    }
}
