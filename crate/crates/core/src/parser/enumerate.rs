//! Exhaustive projective-tree enumeration, used as a test oracle.

use super::ArcScores;
use crate::error::{invalid, Result};
use crate::tensor::Scalar;

/// `Σ_m W[heads[m-1]][m]`, summed in increasing modifier order.
pub fn tree_score<F: Scalar>(scores: &ArcScores<F>, heads: &[usize]) -> F {
    heads
        .iter()
        .enumerate()
        .fold(F::zero(), |acc, (i, &h)| acc + scores.get(h, i + 1))
}

/// All projective trees over `n` words rooted at token 0 (several root
/// children allowed), as head arrays.
///
/// A projective subtree covers a contiguous span, so the dependents of a head
/// on one side partition that side into consecutive spans, one per dependent.
pub fn enumerate_projective_trees(n: usize) -> Result<Vec<Vec<usize>>> {
    if n == 0 || n > 9 {
        return Err(invalid(format!("enumeration supports 1 ≤ n ≤ 9, got {n}")));
    }
    let mut out = Vec::new();
    let mut heads = vec![usize::MAX; n];
    attach(0, 1, n, &mut heads, &mut |h| out.push(h.to_vec()));
    Ok(out)
}

/// Calls `emit` for every way of hanging tokens `lo..=hi` (all on one side
/// of `head`) under `head`.
fn attach(head: usize, lo: usize, hi: usize, heads: &mut Vec<usize>, emit: &mut dyn FnMut(&[usize])) {
    if lo > hi {
        emit(heads);
        return;
    }
    // first dependent `c` owns the span lo..=end
    for end in lo..=hi {
        for c in lo..=end {
            heads[c - 1] = head;
            let mut rest = |h: &[usize]| {
                let mut h = h.to_vec();
                attach(head, end + 1, hi, &mut h, emit);
            };
            attach_pair(c, lo, c - 1, c + 1, end, heads, &mut rest);
        }
    }
}

/// Left dependents of `c` over `l_lo..=l_hi` and right dependents over `r_lo..=r_hi`.
fn attach_pair(
    c: usize,
    l_lo: usize,
    l_hi: usize,
    r_lo: usize,
    r_hi: usize,
    heads: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    let mut right = |h: &[usize]| {
        let mut h = h.to_vec();
        attach(c, r_lo, r_hi, &mut h, emit);
    };
    if l_lo > l_hi {
        right(heads);
    } else {
        attach(c, l_lo, l_hi, heads, &mut right);
    }
}

/// Number of projective trees over `n` words, by counting Eisner derivations
/// (each tree has exactly one derivation).
pub fn count_projective_trees(n: usize) -> u128 {
    let s = n + 1;
    // [complete/incomplete][right/left][i][j]
    let mut rc = vec![vec![0u128; s]; s];
    let mut lc = vec![vec![0u128; s]; s];
    let mut ri = vec![vec![0u128; s]; s];
    let mut li = vec![vec![0u128; s]; s];
    for i in 0..s {
        rc[i][i] = 1;
        lc[i][i] = u128::from(i > 0);
    }
    for w in 1..s {
        for i in 0..s - w {
            let j = i + w;
            let inc: u128 = (i..j).map(|k| rc[i][k] * lc[k + 1][j]).sum();
            ri[i][j] = inc;
            li[i][j] = if i == 0 { 0 } else { inc };
            rc[i][j] = (i + 1..=j).map(|k| ri[i][k] * rc[k][j]).sum();
            if i > 0 {
                lc[i][j] = (i..j).map(|k| lc[i][k] * li[k][j]).sum();
            }
        }
    }
    rc[0][n]
}
