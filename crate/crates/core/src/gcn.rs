//! Direction-aware graph convolution over (soft) adjacency matrices.
//!
//! Rows are tokens. With `T[h][m]` the weight of arc `h → m`, one layer computes
//! `act(f(E) + Tᵀ g(E) + T h(E))`: row `m` of `Tᵀ g(E)` gathers `m`'s heads and
//! row `h` of `T h(E)` gathers `h`'s modifiers.

use crate::autodiff::{NodeId, ParamStore, Tape};
use crate::error::{shape_err, Result};
use crate::nn::{Activation, LayerSpec, Mlp, MlpSpec};
use crate::sampler::SampleRng;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcnLayerSpec {
    pub input: usize,
    pub width: usize,
    pub activation: Activation,
    /// Concatenate the layer input to its output.
    pub dense: bool,
}

impl GcnLayerSpec {
    pub fn output(&self) -> usize {
        if self.dense {
            self.input + self.width
        } else {
            self.width
        }
    }
}

#[derive(Clone, Debug)]
pub struct GcnLayer {
    spec: GcnLayerSpec,
    own: Mlp,
    from_heads: Mlp,
    from_modifiers: Mlp,
}

impl GcnLayer {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, spec: GcnLayerSpec, rng: &mut SampleRng) -> Result<Self> {
        let affine = MlpSpec {
            input: spec.input,
            layers: vec![LayerSpec { size: spec.width, activation: Activation::None, bias: true }],
        };
        Ok(GcnLayer {
            spec,
            own: Mlp::new(store, &format!("{name}.self"), affine.clone(), rng)?,
            from_heads: Mlp::new(store, &format!("{name}.heads"), affine.clone(), rng)?,
            from_modifiers: Mlp::new(store, &format!("{name}.modifiers"), affine, rng)?,
        })
    }

    pub fn spec(&self) -> &GcnLayerSpec {
        &self.spec
    }

    pub fn maps(&self) -> [&Mlp; 3] {
        [&self.own, &self.from_heads, &self.from_modifiers]
    }

    /// `e` is `L × input`, `t` is `L × L`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, store: &ParamStore<F>, e: NodeId, t: NodeId) -> Result<NodeId> {
        let (rows, _) = tape.value(e).dims2()?;
        let (tr, tc) = tape.value(t).dims2()?;
        if tr != rows || tc != rows {
            return Err(shape_err("gcn", format!("{rows} token rows with a {tr}×{tc} adjacency")));
        }
        let own = self.own.forward(tape, store, e)?;
        let g = self.from_heads.forward(tape, store, e)?;
        let h = self.from_modifiers.forward(tape, store, e)?;
        let heads = tape.matmul_t(t, true, g, false)?;
        let mods = tape.matmul(t, h)?;
        let sum = tape.add(own, heads)?;
        let mut out = tape.add(sum, mods)?;
        if self.spec.activation == Activation::Relu {
            out = tape.relu(out)?;
        }
        if self.spec.dense {
            out = tape.concat_cols(&[e, out])?;
        }
        Ok(out)
    }
}
