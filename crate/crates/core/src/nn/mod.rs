//! Layers, initialization and optimization for the tagger.

mod lstm;
mod mlp;
mod optim;

pub use lstm::{BiLstm, BiLstmSpec, LstmCellOp, PackedLayout};
pub use mlp::{Activation, LayerSpec, Mlp, MlpSpec};
pub use optim::{clip_gradient_norm, global_norm, Adam, AdamConfig, PlateauSchedule, ScheduleStep};

use rand::Rng;

use crate::autodiff::{Mode, NodeId, Tape};
use crate::error::{invalid, Result};
use crate::sampler::SampleRng;
use crate::tensor::{Scalar, Tensor};

/// Glorot-uniform matrix: entries uniform in `±sqrt(6 / (rows + cols))`.
pub fn glorot_uniform<F: Scalar>(rows: usize, cols: usize, rng: &mut SampleRng) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(vec![rows, cols], data).expect("length matches shape")
}

/// Inverted dropout in training tapes, identity otherwise.
pub fn dropout<F: Scalar>(tape: &mut Tape<F>, x: NodeId, rate: f64, rng: &mut SampleRng) -> Result<NodeId> {
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 || tape.mode() == Mode::Inference {
        return Ok(x);
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let len = shape.iter().product();
    let mask = (0..len)
        .map(|_| if rng.gen::<f64>() < rate { F::zero() } else { keep })
        .collect();
    let mask = tape.input(Tensor::new(shape, mask)?)?;
    tape.mul(x, mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::substream;

    #[test]
    fn glorot_bounds() {
        let mut r = substream(0, 0, 0, 0);
        let w: Tensor<f64> = glorot_uniform(30, 70, &mut r);
        let b = (6.0f64 / 100.0).sqrt();
        assert!(w.data().iter().all(|v| v.abs() <= b));
        assert!(w.data().iter().any(|v| v.abs() > 0.9 * b));
    }

    #[test]
    fn dropout_modes() {
        let mut r = substream(0, 0, 0, 0);
        let x = Tensor::<f64>::filled(&[1000, 1000], 1.0);
        let mut tape = Tape::new(Mode::Train);
        let n = tape.input(x.clone()).unwrap();
        assert_eq!(dropout(&mut tape, n, 0.0, &mut r).unwrap(), n);
        let d = dropout(&mut tape, n, 0.2, &mut r).unwrap();
        let mean = tape.value(d).sum() / 1e6;
        assert!((mean - 1.0).abs() < 0.01);
        assert!(tape.value(d).data().iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        assert!(dropout(&mut tape, n, 1.0, &mut r).is_err());

        let mut infer = Tape::new(Mode::Inference);
        let n = infer.input(x).unwrap();
        assert_eq!(dropout(&mut infer, n, 0.5, &mut r).unwrap(), n);
    }
}
