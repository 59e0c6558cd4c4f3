//! Finite-difference checks of the scorer → perturbed parse → GCN pipeline,
//! and timing of the chart kernels.

use std::time::Instant;

use rand::Rng;

use crate::autodiff::{check_gradients, GradCheckReport, ParamStore, Tape};
use crate::error::{Error, Result};
use crate::gcn::{GcnLayer, GcnLayerSpec};
use crate::nn::{Activation, MlpSpec};
use crate::parser::{Chart, ChartArena, ParseMode, Rule};
use crate::sampler::{perturb_and_parse, substream, Noise};
use crate::scorer::ArcScorer;
use crate::tensor::Tensor;

const INPUT_WIDTH: usize = 4;
const HIDDEN: usize = 5;
const GCN_WIDTH: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Straight-through gradients are biased by construction.
    ExpectedMismatch,
    /// The discrete parse has no gradient path at all.
    NonDifferentiable,
}

#[derive(Clone, Debug)]
pub struct CheckRow {
    pub n: usize,
    pub seed: u64,
    pub mode: ParseMode,
    pub max_relative_error: Option<f64>,
    pub status: CheckStatus,
}

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<f64> {
    // Box-Muller keeps this free of a distributions dependency.
    let data = (0..rows * cols)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            let v: f64 = rng.gen();
            (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
        })
        .collect();
    Tensor::new(vec![rows, cols], data).expect("sized by rows × cols")
}

/// Gradient of `sum(w ⊙ GCN(x, parse(score(x) + G)))` with respect to the
/// token vectors `x`, for a random `n`-word sentence. Noise `G` is a fixed
/// Gumbel draw, so the function is deterministic.
pub fn composite_gradcheck(n: usize, seed: u64, mode: ParseMode, h: f64, tol: f64) -> Result<GradCheckReport> {
    let mut rng = substream(seed, n as u64, 0, 0);
    let mut store = ParamStore::<f64>::new();
    let mlp = MlpSpec::uniform(INPUT_WIDTH, &[HIDDEN, HIDDEN], Activation::Relu);
    let scorer = ArcScorer::new(&mut store, "scorer", mlp.clone(), mlp, Some(2), &mut rng)?;
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).starts_with("scorer.distance") {
            *store.get_mut(id) = gaussian(&mut rng, store.get(id).rows(), 1);
        }
    }
    let gcn = GcnLayer::new(
        &mut store,
        "gcn",
        GcnLayerSpec { input: INPUT_WIDTH, width: GCN_WIDTH, activation: Activation::Relu, dense: false },
        &mut rng,
    )?;
    let x = gaussian(&mut rng, n + 1, INPUT_WIDTH);
    let w = gaussian(&mut rng, n + 1, GCN_WIDTH);
    let arena = ChartArena::new(n);
    check_gradients(
        |tape: &mut Tape<f64>, x| {
            let scores = scorer.score(tape, &store, x)?;
            let mut noise_rng = substream(seed, n as u64, 1, 0);
            let t = perturb_and_parse(tape, scores, &mut noise_rng, Noise::Gumbel, mode, 1.0, &arena)?;
            let e = gcn.forward(tape, &store, x, t)?;
            let wn = tape.input(w.clone())?;
            let p = tape.mul(e, wn)?;
            tape.sum(p)
        },
        &x,
        h,
        tol,
    )
}

/// Runs `cases` checks spread evenly over `lengths` in the given mode.
pub fn gradient_suite(lengths: &[usize], cases: usize, mode: ParseMode, seed: u64) -> Result<Vec<CheckRow>> {
    if lengths.is_empty() {
        return Err(crate::error::invalid("gradient suite needs at least one length"));
    }
    let mut rows = Vec::with_capacity(cases);
    for c in 0..cases {
        let n = lengths[c % lengths.len()];
        let case_seed = seed.wrapping_add(c as u64);
        let row = match composite_gradcheck(n, case_seed, mode, 1e-4, 1e-4) {
            Ok(r) => {
                let status = match (r.pass, mode) {
                    (true, _) => CheckStatus::Pass,
                    (false, ParseMode::StraightThrough) => CheckStatus::ExpectedMismatch,
                    (false, _) => CheckStatus::Fail,
                };
                CheckRow { n, seed: case_seed, mode, max_relative_error: Some(r.max_relative_error), status }
            }
            Err(Error::NoGradientPath(_)) => {
                CheckRow { n, seed: case_seed, mode, max_relative_error: None, status: CheckStatus::NonDifferentiable }
            }
            Err(e) => return Err(e),
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Gaussian `(n+1)×(n+1)` scores in `f32`, flattened row-major.
pub fn random_scores(n: usize, rng: &mut impl Rng) -> Vec<f32> {
    gaussian(rng, n + 1, n + 1).data().iter().map(|&v| v as f32).collect()
}

/// Score for arcs touching padding: low enough that no real arc loses to it.
const PAD_SCORE: f32 = -100.0;

/// Copies `n`-word scores into the top-left corner of a `max_n`-word matrix.
pub fn pad_scores(scores: &[f32], n: usize, max_n: usize) -> Vec<f32> {
    let (s, m) = (n + 1, max_n + 1);
    let mut out = vec![PAD_SCORE; m * m];
    for h in 0..s {
        out[h * m..h * m + s].copy_from_slice(&scores[h * s..(h + 1) * s]);
    }
    out
}

/// Relaxed forward, backtrack and backward of one chart.
fn relaxed_round_trip(chart: &mut Chart<f32>, scores: &[f32], n: usize) -> Result<f32> {
    chart.build(scores, n, Rule::Softmax { temperature: 1.0 })?;
    let t = chart.backtrack()?;
    let g = chart.backward(&t)?;
    Ok(g.iter().copied().sum::<f32>())
}

/// Mean seconds per relaxed parse (forward and backward) at length `n`.
pub fn time_relaxed_parse(n: usize, repeats: usize, seed: u64) -> Result<f64> {
    if n == 0 || repeats == 0 {
        return Err(crate::error::invalid("bench needs n ≥ 1 and at least one repeat"));
    }
    let scores = random_scores(n, &mut substream(seed, n as u64, 0, 0));
    let mut chart = Chart::with_capacity(n);
    relaxed_round_trip(&mut chart, &scores, n)?;
    let start = Instant::now();
    let mut sink = 0.0;
    for _ in 0..repeats {
        sink += relaxed_round_trip(&mut chart, &scores, n)?;
    }
    std::hint::black_box(sink);
    Ok(start.elapsed().as_secs_f64() / repeats as f64)
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn log_log_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = points.iter().map(|&(n, _)| (n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|&(_, t)| t.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ys.iter().sum::<f64>() / k);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// `count` sentence lengths drawn uniformly from `min..=max`.
pub fn mixed_lengths(count: usize, min: usize, max: usize, seed: u64) -> Vec<usize> {
    let mut rng = substream(seed, 0, 0, 0x6d69_7864);
    (0..count).map(|_| rng.gen_range(min..=max)).collect()
}

/// Seconds to parse a mixed-length batch, either on each sentence's true
/// length with charts recycled through an arena, or with every sentence
/// padded to the longest one in a freshly allocated chart.
pub fn time_batch(lengths: &[usize], repeats: usize, padded: bool, seed: u64) -> Result<f64> {
    let max_n = lengths.iter().copied().max().ok_or_else(|| crate::error::invalid("empty batch"))?;
    let inputs: Vec<(usize, Vec<f32>)> = lengths
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let s = random_scores(n, &mut substream(seed, i as u64, 0, 0));
            if padded {
                (max_n, pad_scores(&s, n, max_n))
            } else {
                (n, s)
            }
        })
        .collect();
    let arena = ChartArena::<f32>::new(max_n);
    let run = |sink: &mut f32| -> Result<()> {
        for (n, s) in &inputs {
            if padded {
                *sink += relaxed_round_trip(&mut Chart::new(), s, *n)?;
            } else {
                *sink += relaxed_round_trip(&mut arena.take(), s, *n)?;
            }
        }
        Ok(())
    };
    let mut sink = 0.0;
    run(&mut sink)?;
    let start = Instant::now();
    for _ in 0..repeats.max(1) {
        run(&mut sink)?;
    }
    std::hint::black_box(sink);
    Ok(start.elapsed().as_secs_f64() / repeats.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_exact_power_law() {
        let pts: Vec<(usize, f64)> = [10, 20, 40].iter().map(|&n| (n, 2e-9 * (n as f64).powi(3))).collect();
        assert!((log_log_slope(&pts).unwrap() - 3.0).abs() < 1e-12);
        assert!(log_log_slope(&pts[..1]).is_none());
    }

    #[test]
    fn padding_keeps_the_real_tree() {
        let mut rng = substream(4, 0, 0, 0);
        let s = random_scores(3, &mut rng);
        let p = pad_scores(&s, 3, 6);
        let mut a = Chart::<f32>::new();
        a.build(&s, 3, Rule::Max).unwrap();
        let ta = a.backtrack().unwrap();
        let mut b = Chart::<f32>::new();
        b.build(&p, 6, Rule::Max).unwrap();
        let tb = b.backtrack().unwrap();
        for h in 0..4 {
            for m in 0..4 {
                assert_eq!(ta[h * 4 + m], tb[h * 7 + m]);
            }
        }
    }

    #[test]
    fn suite_flags_modes() {
        let rows = gradient_suite(&[3], 1, ParseMode::Discrete, 0).unwrap();
        assert_eq!(rows[0].status, CheckStatus::NonDifferentiable);
        let rows = gradient_suite(&[3], 2, ParseMode::Relaxed, 0).unwrap();
        assert!(rows.iter().all(|r| r.status == CheckStatus::Pass), "{rows:?}");
    }
}
