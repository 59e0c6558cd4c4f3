//! Gumbel noise, Perturb-and-MAP tree sampling and the unconstrained
//! head-selection sampler.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Axis, Mode, NodeId, Tape};
use crate::error::{Error, Result};
use crate::parser::{left_chain_heads, parse, ChartArena, ParseMode, SoftAdjacency};
use crate::tensor::{Scalar, Tensor};

/// Generator used for every stochastic choice in the crate.
pub type SampleRng = ChaCha8Rng;

const UNIFORM_CLAMP: f64 = 1e-12;

/// Independent stream for one `(seed, epoch, index)` triple.
///
/// The 32-byte ChaCha key is the little-endian concatenation of the seed,
/// epoch, index and a purpose tag, so streams never overlap and are identical
/// across platforms.
pub fn substream(seed: u64, epoch: u64, index: u64, tag: u64) -> SampleRng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&index.to_le_bytes());
    key[24..].copy_from_slice(&tag.to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Standard Gumbel quantile `-ln(-ln u)`, with `u` clamped into `[1e-12, 1 - 1e-12]`.
pub fn gumbel_from_uniform(u: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    -(-u.ln()).ln()
}

/// Tensor of i.i.d. standard Gumbel draws, filled in row-major order.
pub fn gumbel_sample<F: Scalar>(shape: &[usize], rng: &mut SampleRng) -> Tensor<F> {
    let len = shape.iter().product();
    let data = (0..len)
        .map(|_| F::from_f64_lossy(gumbel_from_uniform(rng.gen::<f64>())))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

/// Where perturbation noise comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    Gumbel,
    /// `G = 0`: deterministic MAP structure.
    Zero,
}

fn noise_for<F: Scalar>(tape: &Tape<F>, scores: NodeId, noise: Noise, rng: &mut SampleRng) -> Tensor<F> {
    let shape = tape.shape(scores).to_vec();
    match noise {
        Noise::Gumbel => gumbel_sample(&shape, rng),
        Noise::Zero => Tensor::zeros(&shape),
    }
}

/// Parses `W + G`. The noise is a constant on the tape, so gradients reach
/// `W` only through the perturbed scores.
pub fn perturb_and_parse<F: Scalar>(
    tape: &mut Tape<F>,
    scores: NodeId,
    rng: &mut SampleRng,
    noise: Noise,
    mode: ParseMode,
    temperature: f64,
    arena: &ChartArena<F>,
) -> Result<NodeId> {
    let perturbed = match noise {
        Noise::Zero => scores,
        Noise::Gumbel => {
            let g = noise_for(tape, scores, noise, rng);
            let g = tape.input(g)?;
            tape.add(scores, g)?
        }
    };
    parse(tape, perturbed, mode, temperature, arena)
}

// Pushes self-attachment far below any real score before the column softmax.
const SELF_ARC_PENALTY: f64 = -1e9;

/// Independent head choice per modifier column, with no tree constraint.
///
/// Discrete mode takes the Gumbel-max of each column (an exact categorical
/// draw); relaxed mode is a temperature softmax over each column of `W + G`;
/// straight-through uses the discrete choice forward and the softmax backward.
/// Column 0 is all zero and no token heads itself.
pub fn latent_head_sample<F: Scalar>(
    tape: &mut Tape<F>,
    scores: NodeId,
    rng: &mut SampleRng,
    noise: Noise,
    mode: ParseMode,
    temperature: f64,
) -> Result<NodeId> {
    if !(temperature > 0.0) {
        return Err(crate::error::invalid(format!("temperature must be positive, got {temperature}")));
    }
    let (s, c) = tape.value(scores).dims2()?;
    if s != c || s < 2 {
        return Err(Error::ShapeMismatch {
            op: "latent-head",
            shapes: format!("scores must be (n+1)×(n+1) with n ≥ 1, got {s}×{c}"),
        });
    }
    let g = noise_for(tape, scores, noise, rng);
    let mut hard = Tensor::<F>::zeros(&[s, s]);
    {
        let w = tape.value(scores);
        for m in 1..s {
            let mut best = usize::MAX;
            let mut best_v = F::neg_infinity();
            for h in (0..s).filter(|&h| h != m) {
                let v = w.at(h, m) + g.at(h, m);
                if v > best_v {
                    best = h;
                    best_v = v;
                }
            }
            hard.set(best, m, F::one());
        }
    }
    if mode == ParseMode::Discrete {
        if tape.mode() == Mode::Train {
            return Err(Error::NoGradientPath(
                "discrete head selection inside a training tape; use relaxed or straight-through".into(),
            ));
        }
        return tape.input(hard);
    }

    let mut offset = g;
    for i in 0..s {
        offset.set(i, i, offset.at(i, i) + F::from_f64_lossy(SELF_ARC_PENALTY));
    }
    let offset = tape.input(offset)?;
    let shifted = tape.add(scores, offset)?;
    let scaled = tape.scale(shifted, F::from_f64_lossy(1.0 / temperature))?;
    let probs = tape.softmax(scaled, Axis::Col)?;
    let mut keep = Tensor::<F>::filled(&[s, s], F::one());
    for i in 0..s {
        keep.set(i, 0, F::zero());
        keep.set(i, i, F::zero());
    }
    let keep = tape.input(keep)?;
    let soft = tape.mul(probs, keep)?;
    match mode {
        ParseMode::Relaxed => Ok(soft),
        _ => tape.straight_through(soft, hard),
    }
}

/// Fixed chain `0 → 1 → … → n`.
pub fn left_chain<F: Scalar>(n: usize) -> Result<SoftAdjacency<F>> {
    if n == 0 {
        return Err(crate::error::invalid("left chain needs n ≥ 1"));
    }
    SoftAdjacency::from_heads(&left_chain_heads(n))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_closed_forms() {
        assert!(gumbel_from_uniform((-1f64).exp()).abs() < 1e-15);
        assert!((gumbel_from_uniform((-std::f64::consts::E).exp()) + 1.0).abs() < 1e-12);
        assert!(gumbel_from_uniform(0.0).is_finite());
        assert!(gumbel_from_uniform(1.0).is_finite());
    }

    #[test]
    fn substreams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..4).map(|_| 0).scan(substream(1, 2, 3, 0), |r, _| Some(r.gen())).collect();
        let b: Vec<u64> = (0..4).map(|_| 0).scan(substream(1, 2, 3, 0), |r, _| Some(r.gen())).collect();
        let c: Vec<u64> = (0..4).map(|_| 0).scan(substream(1, 2, 4, 0), |r, _| Some(r.gen())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn left_chain_shapes() {
        let t = left_chain::<f64>(1).unwrap();
        assert_eq!(t.get(0, 1), 1.0);
        assert_eq!(left_chain::<f64>(3).unwrap().heads(), vec![0, 1, 2]);
        assert!(left_chain::<f64>(0).is_err());
    }
}
