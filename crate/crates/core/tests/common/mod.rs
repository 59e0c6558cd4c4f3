#![allow(dead_code)]

use latentdep::parser::ArcScores;
use latentdep::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Tensor::from_f64(&[rows, cols], &data).unwrap()
}

pub fn gaussian_scores(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> ArcScores<f64> {
    ArcScores::new(gaussian_matrix(rng, n + 1, n + 1, scale)).unwrap()
}
