use crate::autodiff::{NodeId, ParamId, ParamStore, Tape};
use crate::error::{invalid, shape_err, Result};
use crate::sampler::SampleRng;
use crate::tensor::{Scalar, Tensor};

use super::glorot_uniform;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub size: usize,
    pub activation: Activation,
    pub bias: bool,
}

/// Stack of affine layers applied to the rows of the input.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub layers: Vec<LayerSpec>,
}

impl MlpSpec {
    /// Every layer with the same activation and a bias.
    pub fn uniform(input: usize, sizes: &[usize], activation: Activation) -> Self {
        MlpSpec {
            input,
            layers: sizes
                .iter()
                .map(|&size| LayerSpec { size, activation, bias: true })
                .collect(),
        }
    }

    pub fn output(&self) -> usize {
        self.layers.last().map_or(self.input, |l| l.size)
    }
}

#[derive(Clone, Debug)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<ParamId>,
    biases: Vec<Option<ParamId>>,
}

impl Mlp {
    /// Registers Glorot weights and zero biases as `{name}.{layer}.weight/bias`.
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, spec: MlpSpec, rng: &mut SampleRng) -> Result<Self> {
        if spec.layers.is_empty() {
            return Err(invalid(format!("mlp {name} needs at least one layer")));
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut width = spec.input;
        for (i, layer) in spec.layers.iter().enumerate() {
            weights.push(store.add(format!("{name}.{i}.weight"), glorot_uniform(width, layer.size, rng)));
            biases.push(
                layer
                    .bias
                    .then(|| store.add(format!("{name}.{i}.bias"), Tensor::zeros(&[1, layer.size]))),
            );
            width = layer.size;
        }
        Ok(Mlp { spec, weights, biases })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> Option<ParamId> {
        self.biases[layer]
    }

    /// Maps an `r × input` node to `r × output`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, x: NodeId) -> Result<NodeId> {
        let cols = tape.shape(x).get(1).copied().unwrap_or(0);
        if cols != self.spec.input {
            return Err(shape_err(
                "mlp",
                format!("input width {cols}, expected {}", self.spec.input),
            ));
        }
        let mut h = x;
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let w = tape.param(store, self.weights[i]);
            h = tape.matmul(h, w)?;
            if let Some(b) = self.biases[i] {
                let b = tape.param(store, b);
                h = tape.add_row(h, b)?;
            }
            if layer.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mode;
    use crate::sampler::substream;

    #[test]
    fn identity_layer() {
        let mut store = ParamStore::<f64>::new();
        let mut r = substream(0, 0, 0, 0);
        let spec = MlpSpec { input: 3, layers: vec![LayerSpec { size: 3, activation: Activation::None, bias: false }] };
        let mlp = Mlp::new(&mut store, "m", spec, &mut r).unwrap();
        *store.get_mut(mlp.weight(0)) = Tensor::identity(3);
        let x = Tensor::from_f64(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, -7.0]).unwrap();
        let mut tape = Tape::new(Mode::Inference);
        let xn = tape.input(x.clone()).unwrap();
        let y = mlp.forward(&mut tape, &store, xn).unwrap();
        assert_eq!(tape.value(y), &x);
    }

    #[test]
    fn zero_weights_give_zero() {
        let mut store = ParamStore::<f64>::new();
        let mut r = substream(0, 0, 0, 0);
        let mlp = Mlp::new(&mut store, "m", MlpSpec::uniform(4, &[5, 2], Activation::Relu), &mut r).unwrap();
        for id in store.ids().collect::<Vec<_>>() {
            store.get_mut(id).scale_assign(0.0);
        }
        let mut tape = Tape::new(Mode::Inference);
        let xn = tape.input(Tensor::filled(&[3, 4], 2.0)).unwrap();
        let y = mlp.forward(&mut tape, &store, xn).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
        assert_eq!(tape.shape(y), &[3, 2]);
    }

    #[test]
    fn width_mismatch() {
        let mut store = ParamStore::<f64>::new();
        let mut r = substream(0, 0, 0, 0);
        let mlp = Mlp::new(&mut store, "m", MlpSpec::uniform(4, &[2], Activation::None), &mut r).unwrap();
        let mut tape = Tape::new(Mode::Inference);
        let xn = tape.input(Tensor::zeros(&[1, 3])).unwrap();
        assert!(mlp.forward(&mut tape, &store, xn).is_err());
        assert!(Mlp::new(&mut store, "e", MlpSpec { input: 2, layers: vec![] }, &mut r).is_err());
    }
}
