//! Projective dependency parsing with a discrete or softmax-relaxed Eisner chart.
//!
//! Token 0 is the root. Score and adjacency matrices are `(n+1)×(n+1)`,
//! row = head, column = modifier; column 0 and the diagonal are never used.

mod arena;
mod chart;
mod enumerate;
mod modes;

pub use arena::{ChartArena, PooledChart};
pub use chart::{Chart, Completeness, Direction, Item, Rule};
pub use enumerate::{count_projective_trees, enumerate_projective_trees, tree_score};
pub use modes::{eisner_relaxed, parse, ParseMode, RelaxedEisnerOp};

use crate::error::{invalid, Result};
use crate::tensor::{Scalar, Tensor};

/// Arc scores `W[h][m]` for a sentence of `n` words plus the root.
#[derive(Clone, Debug, PartialEq)]
pub struct ArcScores<F> {
    n: usize,
    scores: Tensor<F>,
}

impl<F: Scalar> ArcScores<F> {
    pub fn new(scores: Tensor<F>) -> Result<Self> {
        let (r, c) = scores.dims2()?;
        if r != c || r < 2 {
            return Err(invalid(format!(
                "arc scores must be (n+1)×(n+1) with n ≥ 1, got {r}×{c}"
            )));
        }
        if !scores.all_finite() {
            return Err(invalid("arc scores must be finite"));
        }
        Ok(ArcScores { n: r - 1, scores })
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let s = n + 1;
        let data: Vec<f64> = (0..s * s).map(|x| f(x / s, x % s)).collect();
        ArcScores::new(Tensor::from_f64(&[s, s], &data)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, head: usize, modifier: usize) -> F {
        self.scores.at(head, modifier)
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.scores
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.scores
    }
}

/// Adjacency matrix `T[h][m]` with entries in `[0, 1]`; discrete trees are the 0/1 case.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftAdjacency<F> {
    matrix: Tensor<F>,
}

impl<F: Scalar> SoftAdjacency<F> {
    pub fn new(matrix: Tensor<F>) -> Result<Self> {
        let (r, c) = matrix.dims2()?;
        if r != c || r < 2 {
            return Err(invalid(format!("adjacency must be square with n ≥ 1, got {r}×{c}")));
        }
        Ok(SoftAdjacency { matrix })
    }

    /// Discrete tree from a head array over tokens `1..=n` (`heads[m-1]` is the head of `m`).
    pub fn from_heads(heads: &[usize]) -> Result<Self> {
        let s = heads.len() + 1;
        let mut matrix = Tensor::zeros(&[s, s]);
        for (m, &h) in heads.iter().enumerate() {
            if h >= s {
                return Err(invalid(format!("head {h} out of range for {} words", s - 1)));
            }
            matrix.set(h, m + 1, F::one());
        }
        Ok(SoftAdjacency { matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows() - 1
    }

    pub fn get(&self, head: usize, modifier: usize) -> F {
        self.matrix.at(head, modifier)
    }

    pub fn tensor(&self) -> &Tensor<F> {
        &self.matrix
    }

    pub fn into_tensor(self) -> Tensor<F> {
        self.matrix
    }

    /// Highest-weight head per modifier (lowest index on ties).
    pub fn heads(&self) -> Vec<usize> {
        let s = self.n() + 1;
        (1..s)
            .map(|m| {
                let mut best = 0;
                for h in 1..s {
                    if self.get(h, m) > self.get(best, m) {
                        best = h;
                    }
                }
                best
            })
            .collect()
    }

    /// `Σ_h T[h][m]` for every modifier `m ≥ 1`.
    pub fn column_sums(&self) -> Vec<F> {
        let s = self.n() + 1;
        (1..s).map(|m| (0..s).map(|h| self.get(h, m)).sum()).collect()
    }

    /// Whether every entry is exactly 0 or 1.
    pub fn is_discrete(&self) -> bool {
        self.matrix
            .data()
            .iter()
            .all(|&v| v == F::zero() || v == F::one())
    }
}

/// Highest-scoring projective tree, with its score `Σ W[h][m] T[h][m]`.
pub fn eisner_map<F: Scalar>(scores: &ArcScores<F>) -> Result<(SoftAdjacency<F>, F)> {
    let mut chart = Chart::with_capacity(scores.n());
    eisner_map_with(&mut chart, scores)
}

/// [`eisner_map`] reusing the buffers of `chart`.
pub fn eisner_map_with<F: Scalar>(chart: &mut Chart<F>, scores: &ArcScores<F>) -> Result<(SoftAdjacency<F>, F)> {
    let n = scores.n();
    chart.build(scores.tensor().data(), n, Rule::Max)?;
    let t = chart.backtrack()?;
    let tree = SoftAdjacency::new(Tensor::new(vec![n + 1, n + 1], t)?)?;
    let score = tree_score(scores, &tree.heads());
    Ok((tree, score))
}

/// Relaxed chart: deduction with `softmax(s / temperature)` backpointers.
pub fn eisner_relaxed_forward<F: Scalar>(scores: &ArcScores<F>, temperature: f64) -> Result<Chart<F>> {
    let mut chart = Chart::with_capacity(scores.n());
    chart.build(scores.tensor().data(), scores.n(), Rule::Softmax { temperature })?;
    Ok(chart)
}

/// Contribution backtrack over a built chart.
pub fn eisner_relaxed_backtrack<F: Scalar>(chart: &mut Chart<F>) -> Result<SoftAdjacency<F>> {
    let n = chart.n();
    let t = chart.backtrack()?;
    SoftAdjacency::new(Tensor::new(vec![n + 1, n + 1], t)?)
}

/// Checks that `heads` (over tokens `1..=n`) is a projective tree rooted at 0:
/// one head per word, no cycles, no crossing arcs.
pub fn validate_projective(heads: &[usize]) -> std::result::Result<(), String> {
    let n = heads.len();
    for (i, &h) in heads.iter().enumerate() {
        let m = i + 1;
        if h > n {
            return Err(format!("token {m} has out-of-range head {h}"));
        }
        if h == m {
            return Err(format!("token {m} heads itself"));
        }
    }
    for start in 1..=n {
        let mut cur = start;
        let mut steps = 0;
        while cur != 0 {
            cur = heads[cur - 1];
            steps += 1;
            if steps > n {
                return Err(format!("cycle through token {start}"));
            }
        }
    }
    let arcs: Vec<(usize, usize)> = heads
        .iter()
        .enumerate()
        .map(|(i, &h)| (h.min(i + 1), h.max(i + 1)))
        .collect();
    for (a, &(l1, r1)) in arcs.iter().enumerate() {
        for &(l2, r2) in &arcs[a + 1..] {
            let crossing = (l1 < l2 && l2 < r1 && r1 < r2) || (l2 < l1 && l1 < r2 && r2 < r1);
            if crossing {
                return Err(format!("arcs ({l1},{r1}) and ({l2},{r2}) cross"));
            }
        }
    }
    Ok(())
}

/// Left-to-right chain `0 → 1 → … → n`.
pub fn left_chain_heads(n: usize) -> Vec<usize> {
    (0..n).collect()
}
