//! First-order Eisner chart with a pluggable choice rule.
//!
//! Items are `[i, j, d, c]` over span `i..=j`. Every non-axiom item picks a
//! distribution `b` over its split points: one-hot at the best split for
//! [`Rule::Max`], `softmax(s / τ)` for [`Rule::Softmax`]. The item weight is
//! `bᵀs`, plus the arc score for incomplete items. Backtracking pushes each
//! item's contribution to the antecedents of every split in proportion to `b`,
//! so the same code yields a 0/1 tree or its relaxation.

use std::fmt::Write as _;

use crate::error::{invalid, Error, Result};
use crate::tensor::Scalar;

/// Head side of a span.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// All words of the span descend from its left end `i`.
    Right,
    /// All words of the span descend from its right end `j`.
    Left,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Completeness {
    Complete,
    Incomplete,
}

/// Chart item `[i, j, d, c]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Item {
    pub i: usize,
    pub j: usize,
    pub dir: Direction,
    pub comp: Completeness,
}

/// How an item chooses among its split points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rule {
    /// One-hot on the highest-scoring split, lowest index on ties.
    Max,
    /// `softmax(s / temperature)`.
    Softmax { temperature: f64 },
}

// Item families, used as the outer index of the flat buffers.
const RI: usize = 0; // [i, j, →, ⊥]: arc i → j
const LI: usize = 1; // [i, j, ←, ⊥]: arc j → i
const RC: usize = 2; // [i, j, →, ⊤]
const LC: usize = 3; // [i, j, ←, ⊤]
const FAMILIES: usize = 4;

fn family(dir: Direction, comp: Completeness) -> usize {
    match (dir, comp) {
        (Direction::Right, Completeness::Incomplete) => RI,
        (Direction::Left, Completeness::Incomplete) => LI,
        (Direction::Right, Completeness::Complete) => RC,
        (Direction::Left, Completeness::Complete) => LC,
    }
}

/// Chart state for one sentence. Buffers are kept across [`Chart::build`]
/// calls so a chart can be reused for sentences of different lengths.
#[derive(Clone, Debug)]
pub struct Chart<F> {
    n: usize,
    stride: usize,
    rule: Rule,
    weight: Vec<F>,
    contrib: Vec<F>,
    offset: Vec<usize>,
    split_score: Vec<F>,
    split_prob: Vec<F>,
    built: bool,
    backtracked: bool,
}

impl<F: Scalar> Default for Chart<F> {
    fn default() -> Self {
        Chart::new()
    }
}

impl<F: Scalar> Chart<F> {
    pub fn new() -> Self {
        Chart {
            n: 0,
            stride: 1,
            rule: Rule::Max,
            weight: Vec::new(),
            contrib: Vec::new(),
            offset: Vec::new(),
            split_score: Vec::new(),
            split_prob: Vec::new(),
            built: false,
            backtracked: false,
        }
    }

    /// A chart whose buffers already fit sentences of up to `max_n` words.
    pub fn with_capacity(max_n: usize) -> Self {
        let s = max_n + 1;
        let splits = Self::split_count(max_n);
        Chart {
            weight: Vec::with_capacity(FAMILIES * s * s),
            contrib: Vec::with_capacity(FAMILIES * s * s),
            offset: Vec::with_capacity(FAMILIES * s * s),
            split_score: Vec::with_capacity(splits),
            split_prob: Vec::with_capacity(splits),
            ..Chart::new()
        }
    }

    fn split_count(n: usize) -> usize {
        // each family has (width) splits for every span of that width
        let per_family: usize = (1..=n).map(|w| (n + 1 - w) * w).sum();
        FAMILIES * per_family
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    pub fn is_built(&self) -> bool {
        self.built
    }

    #[inline]
    fn idx(&self, fam: usize, i: usize, j: usize) -> usize {
        (fam * self.stride + i) * self.stride + j
    }

    /// Whether `item` exists: spans inside `0..=n`, and no span headed at its
    /// right end may include the root.
    pub fn is_valid(&self, item: Item) -> bool {
        item.i <= item.j
            && item.j <= self.n
            && !(item.dir == Direction::Left && item.i == 0)
            && !(item.comp == Completeness::Incomplete && item.i == item.j)
    }

    /// Runs the bottom-up deduction over `scores`, an `(n+1)×(n+1)` row-major
    /// matrix with `scores[h * (n+1) + m]` the score of arc `h → m`.
    pub fn build(&mut self, scores: &[F], n: usize, rule: Rule) -> Result<()> {
        if n == 0 {
            return Err(invalid("parsing needs at least one word"));
        }
        let s = n + 1;
        if scores.len() != s * s {
            return Err(invalid(format!(
                "score matrix has {} entries, expected {}",
                scores.len(),
                s * s
            )));
        }
        let inv_temp = match rule {
            Rule::Max => F::zero(),
            Rule::Softmax { temperature } => {
                if !(temperature > 0.0) || !temperature.is_finite() {
                    return Err(invalid(format!("temperature must be positive, got {temperature}")));
                }
                F::from_f64_lossy(1.0 / temperature)
            }
        };
        self.n = n;
        self.stride = s;
        self.rule = rule;
        self.weight.clear();
        self.weight.resize(FAMILIES * s * s, F::zero());
        self.offset.clear();
        self.offset.resize(FAMILIES * s * s, usize::MAX);
        let splits = Self::split_count(n);
        self.split_score.clear();
        self.split_score.resize(splits, F::zero());
        self.split_prob.clear();
        self.split_prob.resize(splits, F::zero());
        self.built = false;
        self.backtracked = false;

        let mut next = 0usize;
        for w in 1..=n {
            for i in 0..=n - w {
                let j = i + w;
                // incomplete items share their antecedent pairs
                for fam in [RI, LI] {
                    if fam == LI && i == 0 {
                        continue;
                    }
                    let off = next;
                    next += w;
                    for (t, k) in (i..j).enumerate() {
                        self.split_score[off + t] =
                            self.weight[self.idx(RC, i, k)] + self.weight[self.idx(LC, k + 1, j)];
                    }
                    let arc = if fam == RI { scores[i * s + j] } else { scores[j * s + i] };
                    let v = self.choose(off, w, inv_temp) + arc;
                    let x = self.idx(fam, i, j);
                    self.weight[x] = v;
                    self.offset[x] = off;
                }
                // [i, j, →, ⊤] from [i, k, →, ⊥] + [k, j, →, ⊤], i < k ≤ j
                let off = next;
                next += w;
                for (t, k) in (i + 1..=j).enumerate() {
                    self.split_score[off + t] =
                        self.weight[self.idx(RI, i, k)] + self.weight[self.idx(RC, k, j)];
                }
                let v = self.choose(off, w, inv_temp);
                let x = self.idx(RC, i, j);
                self.weight[x] = v;
                self.offset[x] = off;
                // [i, j, ←, ⊤] from [i, k, ←, ⊤] + [k, j, ←, ⊥], i ≤ k < j
                if i >= 1 {
                    let off = next;
                    next += w;
                    for (t, k) in (i..j).enumerate() {
                        self.split_score[off + t] =
                            self.weight[self.idx(LC, i, k)] + self.weight[self.idx(LI, k, j)];
                    }
                    let v = self.choose(off, w, inv_temp);
                    let x = self.idx(LC, i, j);
                    self.weight[x] = v;
                    self.offset[x] = off;
                }
            }
        }
        debug_assert!(next <= splits);
        self.built = true;
        Ok(())
    }

    /// Fills `split_prob[off..off+len]` and returns `bᵀs`.
    #[inline]
    fn choose(&mut self, off: usize, len: usize, inv_temp: F) -> F {
        let s = &self.split_score[off..off + len];
        let b = &mut self.split_prob[off..off + len];
        let mut best = 0;
        for t in 1..len {
            if s[t] > s[best] {
                best = t;
            }
        }
        let mx = s[best];
        match self.rule {
            Rule::Max => {
                b.iter_mut().for_each(|x| *x = F::zero());
                b[best] = F::one();
                mx
            }
            Rule::Softmax { .. } => {
                let mut z = F::zero();
                for (bt, &st) in b.iter_mut().zip(s) {
                    *bt = ((st - mx) * inv_temp).exp();
                    z += *bt;
                }
                let mut v = F::zero();
                for (bt, &st) in b.iter_mut().zip(s) {
                    *bt /= z;
                    v += *bt * st;
                }
                v
            }
        }
    }

    /// Antecedent pairs of `(fam, i, j)` in split order.
    #[inline]
    fn antecedents(&self, fam: usize, i: usize, j: usize, t: usize) -> (usize, usize) {
        match fam {
            RI | LI => {
                let k = i + t;
                (self.idx(RC, i, k), self.idx(LC, k + 1, j))
            }
            RC => {
                let k = i + 1 + t;
                (self.idx(RI, i, k), self.idx(RC, k, j))
            }
            _ => {
                let k = i + t;
                (self.idx(LC, i, k), self.idx(LI, k, j))
            }
        }
    }

    fn families_at(i: usize) -> &'static [usize] {
        if i == 0 {
            &[RC, RI]
        } else {
            &[RC, LC, RI, LI]
        }
    }

    /// Propagates contributions top-down from the goal item and returns the
    /// `(n+1)×(n+1)` adjacency matrix, row = head, column = modifier.
    pub fn backtrack(&mut self) -> Result<Vec<F>> {
        if !self.built {
            return Err(Error::UnvisitedChart);
        }
        let (n, s) = (self.n, self.stride);
        self.contrib.clear();
        self.contrib.resize(FAMILIES * s * s, F::zero());
        let goal = self.idx(RC, 0, n);
        self.contrib[goal] = F::one();
        for w in (1..=n).rev() {
            // completes before incompletes: [i,j,→,⊤] feeds [i,j,→,⊥] at the same width
            for i in 0..=n - w {
                let j = i + w;
                for &fam in Self::families_at(i) {
                    let x = self.idx(fam, i, j);
                    let c = self.contrib[x];
                    if c == F::zero() {
                        continue;
                    }
                    let off = self.offset[x];
                    for t in 0..w {
                        let share = self.split_prob[off + t] * c;
                        let (a, b) = self.antecedents(fam, i, j, t);
                        self.contrib[a] += share;
                        self.contrib[b] += share;
                    }
                }
            }
        }
        self.backtracked = true;
        let mut t = vec![F::zero(); s * s];
        for i in 0..n {
            for j in i + 1..=n {
                t[i * s + j] = self.contrib[self.idx(RI, i, j)];
                if i >= 1 {
                    t[j * s + i] = self.contrib[self.idx(LI, i, j)];
                }
            }
        }
        Ok(t)
    }

    /// Vector-Jacobian product of `backtrack ∘ build` under the softmax rule:
    /// given `dL/dT`, returns `dL/dW` as an `(n+1)×(n+1)` matrix.
    pub fn backward(&self, t_adjoint: &[F]) -> Result<Vec<F>> {
        let Rule::Softmax { temperature } = self.rule else {
            return Err(Error::NoGradientPath("a max-rule chart is piecewise constant".into()));
        };
        if !self.backtracked {
            return Err(Error::UnvisitedChart);
        }
        let (n, s) = (self.n, self.stride);
        if t_adjoint.len() != s * s {
            return Err(invalid("adjacency adjoint has the wrong size"));
        }
        let inv_temp = F::from_f64_lossy(1.0 / temperature);

        // Reverse of the backtrack: contribution adjoints, narrow to wide.
        let mut c_adj = vec![F::zero(); FAMILIES * s * s];
        let mut b_adj = vec![F::zero(); self.split_prob.len()];
        for i in 0..n {
            for j in i + 1..=n {
                c_adj[self.idx(RI, i, j)] = t_adjoint[i * s + j];
                if i >= 1 {
                    c_adj[self.idx(LI, i, j)] = t_adjoint[j * s + i];
                }
            }
        }
        for w in 1..=n {
            for i in 0..=n - w {
                let j = i + w;
                for &fam in Self::families_at(i).iter().rev() {
                    let x = self.idx(fam, i, j);
                    let off = self.offset[x];
                    let c = self.contrib[x];
                    let mut acc = F::zero();
                    for t in 0..w {
                        let (a, b) = self.antecedents(fam, i, j, t);
                        let down = c_adj[a] + c_adj[b];
                        acc += self.split_prob[off + t] * down;
                        b_adj[off + t] = c * down;
                    }
                    c_adj[x] += acc;
                }
            }
        }

        // Reverse of the deduction: weight adjoints, wide to narrow.
        let mut w_adj = vec![F::zero(); FAMILIES * s * s];
        let mut out = vec![F::zero(); s * s];
        for w in (1..=n).rev() {
            for i in 0..=n - w {
                let j = i + w;
                for &fam in Self::families_at(i) {
                    let x = self.idx(fam, i, j);
                    let off = self.offset[x];
                    let wa = w_adj[x];
                    match fam {
                        RI => out[i * s + j] += wa,
                        LI => out[j * s + i] += wa,
                        _ => {}
                    }
                    let probs = &self.split_prob[off..off + w];
                    let scores = &self.split_score[off..off + w];
                    let mut dot = F::zero();
                    for t in 0..w {
                        dot += probs[t] * (b_adj[off + t] + wa * scores[t]);
                    }
                    for t in 0..w {
                        let total = b_adj[off + t] + wa * scores[t];
                        let ds = wa * probs[t] + probs[t] * inv_temp * (total - dot);
                        if ds != F::zero() {
                            let (a, b) = self.antecedents(fam, i, j, t);
                            w_adj[a] += ds;
                            w_adj[b] += ds;
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn weight(&self, item: Item) -> Option<F> {
        (self.built && self.is_valid(item)).then(|| self.weight[self.idx(family(item.dir, item.comp), item.i, item.j)])
    }

    pub fn contrib(&self, item: Item) -> Option<F> {
        (self.backtracked && self.is_valid(item))
            .then(|| self.contrib[self.idx(family(item.dir, item.comp), item.i, item.j)])
    }

    /// Split distribution of a non-axiom item, in increasing split order.
    pub fn backptr(&self, item: Item) -> Option<&[F]> {
        if !self.built || !self.is_valid(item) || item.i == item.j {
            return None;
        }
        let off = self.offset[self.idx(family(item.dir, item.comp), item.i, item.j)];
        Some(&self.split_prob[off..off + item.j - item.i])
    }

    /// Weight of the goal item `[0, n, →, ⊤]`.
    pub fn goal_weight(&self) -> Result<F> {
        if !self.built {
            return Err(Error::UnvisitedChart);
        }
        Ok(self.weight[self.idx(RC, 0, self.n)])
    }

    /// Every valid item, narrow spans first.
    pub fn items(&self) -> Vec<Item> {
        use Completeness::*;
        use Direction::*;
        let mut out = Vec::new();
        for w in 0..=self.n {
            for i in 0..=self.n - w {
                for (dir, comp) in [(Right, Complete), (Left, Complete), (Right, Incomplete), (Left, Incomplete)] {
                    let item = Item { i, j: i + w, dir, comp };
                    if self.is_valid(item) {
                        out.push(item);
                    }
                }
            }
        }
        out
    }

    /// Plain-text dump: one item per line, `i j d c weight contrib`, with `d`
    /// in `{R, L}` and `c` in `{C, I}`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for item in self.items() {
            let d = if item.dir == Direction::Right { 'R' } else { 'L' };
            let c = if item.comp == Completeness::Complete { 'C' } else { 'I' };
            let w = self.weight(item).map_or(f64::NAN, F::as_f64);
            let k = self.contrib(item).map_or(f64::NAN, F::as_f64);
            let _ = writeln!(out, "{} {} {} {} {:.6} {:.6}", item.i, item.j, d, c, w, k);
        }
        out
    }
}
