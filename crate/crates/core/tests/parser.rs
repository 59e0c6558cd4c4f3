mod common;

use common::{gaussian_matrix, gaussian_scores, rng};
use latentdep::autodiff::{check_gradients, Mode, Tape};
use latentdep::parser::{
    count_projective_trees, eisner_map, eisner_relaxed_backtrack, eisner_relaxed_forward, enumerate_projective_trees,
    parse, tree_score, validate_projective, ArcScores, Chart, ChartArena, Completeness, Direction, Item, ParseMode,
    Rule, SoftAdjacency,
};
use latentdep::{Error, Tensor};
use proptest::prelude::*;

#[test]
fn map_score_equals_brute_force_maximum() {
    let mut r = rng(11);
    for n in 1..=8 {
        let trees = enumerate_projective_trees(n).unwrap();
        for _ in 0..100 {
            let scores = gaussian_scores(&mut r, n, 1.0);
            let best = trees
                .iter()
                .map(|h| tree_score(&scores, h))
                .fold(f64::NEG_INFINITY, f64::max);
            let (tree, score) = eisner_map(&scores).unwrap();
            assert_eq!(score, best, "n = {n}");
            assert_eq!(tree_score(&scores, &tree.heads()), best);
            assert!(tree.is_discrete());
        }
    }
}

/// Expected adjacency under the distribution over derivations defined by the
/// chart's backpointers, by explicit expansion of every derivation.
fn expected_arcs(chart: &Chart<f64>) -> Vec<f64> {
    fn expand(chart: &Chart<f64>, item: Item) -> Vec<(f64, Vec<(usize, usize)>)> {
        if item.i == item.j {
            return vec![(1.0, Vec::new())];
        }
        let b = chart.backptr(item).unwrap().to_vec();
        let (i, j) = (item.i, item.j);
        let mut out = Vec::new();
        for (t, &p) in b.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            let (a, c) = match (item.dir, item.comp) {
                (_, Completeness::Incomplete) => (
                    Item { i, j: i + t, dir: Direction::Right, comp: Completeness::Complete },
                    Item { i: i + t + 1, j, dir: Direction::Left, comp: Completeness::Complete },
                ),
                (Direction::Right, Completeness::Complete) => (
                    Item { i, j: i + 1 + t, dir: Direction::Right, comp: Completeness::Incomplete },
                    Item { i: i + 1 + t, j, dir: Direction::Right, comp: Completeness::Complete },
                ),
                (Direction::Left, Completeness::Complete) => (
                    Item { i, j: i + t, dir: Direction::Left, comp: Completeness::Complete },
                    Item { i: i + t, j, dir: Direction::Left, comp: Completeness::Incomplete },
                ),
            };
            let left = expand(chart, a);
            let right = expand(chart, c);
            for (pl, al) in &left {
                for (pr, ar) in &right {
                    let mut arcs = al.clone();
                    arcs.extend(ar);
                    if item.comp == Completeness::Incomplete {
                        arcs.push(if item.dir == Direction::Right { (i, j) } else { (j, i) });
                    }
                    out.push((p * pl * pr, arcs));
                }
            }
        }
        out
    }
    let n = chart.n();
    let s = n + 1;
    let goal = Item { i: 0, j: n, dir: Direction::Right, comp: Completeness::Complete };
    let mut t = vec![0.0; s * s];
    let derivations = expand(chart, goal);
    let total: f64 = derivations.iter().map(|d| d.0).sum();
    assert!((total - 1.0).abs() < 1e-12);
    for (p, arcs) in derivations {
        for (h, m) in arcs {
            t[h * s + m] += p;
        }
    }
    t
}

#[test]
fn relaxed_backtrack_is_expected_adjacency() {
    let mut r = rng(3);
    for n in 1..=6 {
        for _ in 0..10 {
            let scores = gaussian_scores(&mut r, n, 1.0);
            let mut chart = eisner_relaxed_forward(&scores, 1.0).unwrap();
            let t = eisner_relaxed_backtrack(&mut chart).unwrap();
            let oracle = expected_arcs(&chart);
            for (a, b) in t.tensor().data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-12, "n = {n}: {a} vs {b}");
            }
            for c in t.column_sums() {
                assert!((c - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn low_temperature_weights_approach_max_chart() {
    let mut r = rng(5);
    for n in 2..=8 {
        let scores = gaussian_scores(&mut r, n, 5.0);
        let soft = eisner_relaxed_forward(&scores, 1e-3).unwrap();
        let mut hard = Chart::new();
        hard.build(scores.tensor().data(), n, Rule::Max).unwrap();
        for item in hard.items() {
            let (a, b) = (soft.weight(item).unwrap(), hard.weight(item).unwrap());
            assert!((a - b).abs() < 1e-3, "{item:?}: {a} vs {b}");
        }
    }
}

#[test]
fn low_temperature_tree_matches_map() {
    let mut r = rng(6);
    for n in 2..=8 {
        for _ in 0..10 {
            let scores = gaussian_scores(&mut r, n, 5.0);
            let mut chart = eisner_relaxed_forward(&scores, 1e-4).unwrap();
            let soft = eisner_relaxed_backtrack(&mut chart).unwrap();
            let (hard, _) = eisner_map(&scores).unwrap();
            assert!(soft.tensor().max_abs_diff(hard.tensor()) < 1e-3);
        }
    }
}

fn column_peaks(scores: &ArcScores<f64>, tau: f64) -> Vec<f64> {
    let n = scores.n();
    let mut chart = eisner_relaxed_forward(scores, tau).unwrap();
    let t = eisner_relaxed_backtrack(&mut chart).unwrap();
    (1..=n).map(|m| (0..=n).map(|h| t.get(h, m)).fold(0.0, f64::max)).collect()
}

fn top_two_gap(scores: &ArcScores<f64>, trees: &[Vec<usize>]) -> f64 {
    let mut ts: Vec<f64> = trees.iter().map(|h| tree_score(scores, h)).collect();
    ts.sort_by(|a, b| b.total_cmp(a));
    ts[0] - ts[1]
}

#[test]
fn sharpening_with_temperature() {
    let n = 6;
    let trees = enumerate_projective_trees(n).unwrap();
    let mut r = rng(8);
    let mut checked = 0;
    while checked < 100 {
        let scores = gaussian_scores(&mut r, n, 1.0);
        if top_two_gap(&scores, &trees) < 0.5 {
            continue;
        }
        checked += 1;
        let mut prev = vec![0.0; n];
        for tau in [1.0, 0.1, 0.01] {
            let peaks = column_peaks(&scores, tau);
            for m in 0..n {
                assert!(peaks[m] >= prev[m] - 1e-12, "tau {tau} m {}: {} < {}", m + 1, peaks[m], prev[m]);
            }
            prev = peaks;
        }
    }
}

#[test]
fn sharpening_can_fail_near_ties() {
    // a distinct but narrow best tree: at the middle temperature the two leading
    // derivations still share mass, and a column peak can drop
    let trees = enumerate_projective_trees(2).unwrap();
    let mut r = rng(8);
    let found = (0..2000).any(|_| {
        let scores = gaussian_scores(&mut r, 2, 1.0);
        let gap = top_two_gap(&scores, &trees);
        let hi = column_peaks(&scores, 1.0);
        let mid = column_peaks(&scores, 0.1);
        gap > 0.05 && hi.iter().zip(&mid).any(|(a, b)| b < &(a - 0.01))
    });
    assert!(found);
}

#[test]
fn relaxed_parse_gradients_match_finite_differences() {
    let mut r = rng(21);
    for n in 3..=7 {
        for _ in 0..4 {
            let w = gaussian_matrix(&mut r, n + 1, n + 1, 1.0);
            let c = gaussian_matrix(&mut r, n + 1, n + 1, 1.0);
            let arena = ChartArena::new(n);
            let report = check_gradients(
                |tape, x| {
                    let t = parse(tape, x, ParseMode::Relaxed, 1.0, &arena)?;
                    let cn = tape.input(c.clone())?;
                    let p = tape.mul(t, cn)?;
                    tape.sum(p)
                },
                &w,
                1e-4,
                1e-4,
            )
            .unwrap();
            assert!(report.pass, "n = {n}: {}", report.max_relative_error);
        }
    }
}

#[test]
fn relaxed_gradients_at_other_temperatures() {
    let mut r = rng(22);
    for tau in [0.5, 2.0] {
        let n = 5;
        let w = gaussian_matrix(&mut r, n + 1, n + 1, 1.0);
        let c = gaussian_matrix(&mut r, n + 1, n + 1, 1.0);
        let arena = ChartArena::new(n);
        let report = check_gradients(
            |tape, x| {
                let t = parse(tape, x, ParseMode::Relaxed, tau, &arena)?;
                let cn = tape.input(c.clone())?;
                let p = tape.mul(t, cn)?;
                tape.sum(p)
            },
            &w,
            1e-4,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "tau = {tau}: {}", report.max_relative_error);
    }
}

#[test]
fn discrete_loss_fails_gradient_check() {
    // two trees tie up to 1e-6 so the finite-difference probe crosses the boundary
    let mut w = Tensor::<f64>::zeros(&[3, 3]);
    w.set(0, 1, 1.0);
    w.set(0, 2, 1.0);
    w.set(1, 2, 1.0 + 1e-6);
    let c = Tensor::from_f64(&[3, 3], &[0.0, 5.0, 3.0, 0.0, 0.0, -4.0, 0.0, 2.0, 0.0]).unwrap();
    let report = check_gradients(
        |tape, x| {
            let scores = ArcScores::new(tape.value(x).clone())?;
            let tree = eisner_map(&scores)?.0.into_tensor();
            let t = tape.input(tree)?;
            let cn = tape.input(c.clone())?;
            let p = tape.mul(t, cn)?;
            let s = tape.sum(p)?;
            // keep the variable on the graph with a zero coefficient
            let z = tape.scale(x, 0.0)?;
            let zs = tape.sum(z)?;
            tape.add(s, zs)
        },
        &w,
        1e-4,
        1e-4,
    )
    .unwrap();
    assert!(report.analytic.iter().all(|&g| g == 0.0));
    assert!(!report.pass);
}

#[test]
fn straight_through_forward_is_discrete_tree() {
    let mut r = rng(31);
    for n in 2..=8 {
        let scores = gaussian_scores(&mut r, n, 1.0);
        let arena = ChartArena::new(n);
        let mut tape = Tape::new(Mode::Train);
        let w = tape.variable(scores.tensor().clone()).unwrap();
        let st = parse(&mut tape, w, ParseMode::StraightThrough, 1.0, &arena).unwrap();
        let mut infer = Tape::new(Mode::Inference);
        let w2 = infer.input(scores.tensor().clone()).unwrap();
        let d = parse(&mut infer, w2, ParseMode::Discrete, 1.0, &arena).unwrap();
        assert_eq!(tape.value(st), infer.value(d));
        // backward goes through the relaxed chart
        let c = tape.input(gaussian_matrix(&mut r, n + 1, n + 1, 1.0)).unwrap();
        let p = tape.mul(st, c).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        assert!(g.variable(w).unwrap().data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn discrete_mode_in_training_tape_is_an_error() {
    let arena = ChartArena::new(3);
    let mut tape = Tape::<f64>::new(Mode::Train);
    let w = tape.variable(Tensor::zeros(&[4, 4])).unwrap();
    assert!(matches!(
        parse(&mut tape, w, ParseMode::Discrete, 1.0, &arena),
        Err(Error::NoGradientPath(_))
    ));
}

#[test]
fn two_word_support() {
    assert_eq!(count_projective_trees(2), 3);
    assert_eq!(enumerate_projective_trees(2).unwrap().len(), 3);
}

proptest! {
    #[test]
    fn map_trees_are_valid(n in 1usize..14, seed in any::<u64>()) {
        let mut r = rng(seed);
        let scores = gaussian_scores(&mut r, n, 3.0);
        let (tree, _) = eisner_map(&scores).unwrap();
        prop_assert!(tree.is_discrete());
        prop_assert_eq!(tree.get(0, 0), 0.0);
        for m in 0..=n {
            prop_assert_eq!(tree.get(m, 0), 0.0);
        }
        for c in tree.column_sums() {
            prop_assert_eq!(c, 1.0);
        }
        prop_assert!(validate_projective(&tree.heads()).is_ok());
    }

    #[test]
    fn relaxed_columns_sum_to_one(n in 1usize..=10, seed in any::<u64>(), scale in 0.01f64..20.0, tau in 0.01f64..10.0) {
        let mut r = rng(seed);
        let scores = gaussian_scores(&mut r, n, scale);
        let mut chart = eisner_relaxed_forward(&scores, tau).unwrap();
        let t = eisner_relaxed_backtrack(&mut chart).unwrap();
        for c in t.column_sums() {
            prop_assert!((c - 1.0).abs() < 1e-6);
        }
        for &v in t.tensor().data() {
            prop_assert!((-1e-12..=1.0 + 1e-9).contains(&v));
        }
        for m in 0..=n {
            prop_assert_eq!(t.get(m, 0), 0.0);
            prop_assert_eq!(t.get(m, m), 0.0);
        }
    }

    #[test]
    fn discrete_tree_from_heads_round_trips(n in 1usize..12, seed in any::<u64>()) {
        let mut r = rng(seed);
        let scores = gaussian_scores(&mut r, n, 1.0);
        let (tree, _) = eisner_map(&scores).unwrap();
        let rebuilt = SoftAdjacency::<f64>::from_heads(&tree.heads()).unwrap();
        prop_assert_eq!(rebuilt, tree);
    }
}
