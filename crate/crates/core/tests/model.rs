mod common;

use latentdep::autodiff::{Mode, ParamStore, Tape};
use latentdep::gcn::{GcnLayer, GcnLayerSpec};
use latentdep::listops::{encode, label_set, to_dependencies, vocabulary_size, EncodedExample, Expression, Operator};
use latentdep::nn::{Activation, MlpSpec};
use latentdep::parser::ChartArena;
use latentdep::sampler::{substream, SampleRng};
use latentdep::scorer::ArcScorer;
use latentdep::tagger::{nll_loss, Estimator, Relaxation, StructureConfig, StructureMode, TaggerModel, TaggerSpec};
use latentdep::{Error, Tensor};
use rand::Rng;

use common::{gaussian_matrix, rng};

fn scorer(store: &mut ParamStore<f64>, seed: u64) -> ArcScorer {
    let mlp = MlpSpec::uniform(6, &[5, 4], Activation::Relu);
    let s = ArcScorer::new(store, "s", mlp.clone(), mlp, Some(2), &mut substream(seed, 0, 0, 0)).unwrap();
    // nonzero biases everywhere so every term of the score matters
    let mut r = rng(seed);
    for id in store.ids().collect::<Vec<_>>() {
        if store.name(id).contains("bias") || store.name(id).contains("distance") {
            let (rows, cols) = store.get(id).dims2().unwrap();
            *store.get_mut(id) = gaussian_matrix(&mut r, rows, cols, 0.5);
        }
    }
    s
}

#[test]
fn scorer_matches_a_per_pair_oracle() {
    let mut r = rng(31);
    for case in 0..20 {
        let mut store = ParamStore::<f64>::new();
        let s = scorer(&mut store, case);
        let len = r.gen_range(2..9);
        let x = gaussian_matrix(&mut r, len, 6, 1.0);
        let mut tape = Tape::new(Mode::Inference);
        let xn = tape.input(x.clone()).unwrap();
        let w = s.score(&mut tape, &store, xn).unwrap();
        let w = tape.value(w).clone();

        let (hp, mp) = s.project(&mut tape, &store, xn).unwrap();
        let (hp, mp) = (tape.value(hp).clone(), tape.value(mp).clone());
        let bias = s.bias().unwrap();
        let table = store.get(bias.table());
        for h in 0..len {
            for m in 0..len {
                let dot: f64 = hp.row(h).iter().zip(mp.row(m)).map(|(a, b)| a * b).sum();
                let d = (h as i64 - m as i64).clamp(-3, 3);
                let expected = dot + table.at((d + 3) as usize, 0);
                assert!((w.at(h, m) - expected).abs() < 1e-6, "case {case} ({h}, {m})");
            }
        }
    }
}

#[test]
fn zero_scorer_gives_zero_scores() {
    let mut store = ParamStore::<f64>::new();
    let s = ArcScorer::new(
        &mut store,
        "s",
        MlpSpec::uniform(3, &[4], Activation::Relu),
        MlpSpec::uniform(3, &[4], Activation::Relu),
        Some(10),
        &mut substream(0, 0, 0, 0),
    )
    .unwrap();
    for id in store.ids().collect::<Vec<_>>() {
        let shape = store.get(id).shape().to_vec();
        *store.get_mut(id) = Tensor::zeros(&shape);
    }
    let mut tape = Tape::new(Mode::Inference);
    let x = tape.input(gaussian_matrix(&mut rng(1), 7, 3, 1.0)).unwrap();
    let w = s.score(&mut tape, &store, x).unwrap();
    assert_eq!(tape.value(w).shape(), &[7, 7]);
    assert!(tape.value(w).data().iter().all(|&v| v == 0.0));
}

#[test]
fn scorer_gradient_reaches_both_projections_and_the_bias() {
    let mut store = ParamStore::<f64>::new();
    let s = scorer(&mut store, 5);
    let mut tape = Tape::new(Mode::Train);
    let x = tape.input(gaussian_matrix(&mut rng(2), 6, 6, 1.0)).unwrap();
    let w = s.score(&mut tape, &store, x).unwrap();
    let wt = tape.input(gaussian_matrix(&mut rng(3), 6, 6, 1.0)).unwrap();
    let p = tape.mul(w, wt).unwrap();
    let loss = tape.sum(p).unwrap();
    let grads = tape.backward(loss).unwrap();
    for id in [s.head().weight(0), s.head().weight(1), s.modifier().weight(0), s.modifier().weight(1), s.bias().unwrap().table()] {
        let g = grads.param(id).unwrap_or_else(|| panic!("{} unreached", store.name(id)));
        assert!(g.data().iter().any(|&v| v != 0.0), "{}", store.name(id));
    }
}

fn gcn(store: &mut ParamStore<f64>, input: usize, width: usize, seed: u64) -> GcnLayer {
    let spec = GcnLayerSpec { input, width, activation: Activation::Relu, dense: false };
    let layer = GcnLayer::new(store, &format!("g{seed}"), spec, &mut substream(seed, 0, 0, 0)).unwrap();
    let mut r = rng(seed + 100);
    for m in layer.maps() {
        let b = m.bias(0).unwrap();
        *store.get_mut(b) = gaussian_matrix(&mut r, 1, width, 0.5);
    }
    layer
}

fn affine(store: &ParamStore<f64>, layer: &GcnLayer, which: usize, e: &Tensor<f64>) -> Tensor<f64> {
    let m = layer.maps()[which];
    let w = store.get(m.weight(0));
    let b = store.get(m.bias(0).unwrap());
    let mut out = Tensor::zeros(&[e.rows(), w.cols()]);
    for i in 0..e.rows() {
        for j in 0..w.cols() {
            let v = b.at(0, j) + (0..w.rows()).map(|k| e.at(i, k) * w.at(k, j)).sum::<f64>();
            out.set(i, j, v);
        }
    }
    out
}

fn run_gcn(store: &ParamStore<f64>, layers: &[&GcnLayer], e: &Tensor<f64>, t: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::new(Mode::Inference);
    let mut x = tape.input(e.clone()).unwrap();
    let tn = tape.input(t.clone()).unwrap();
    for l in layers {
        x = l.forward(&mut tape, store, x, tn).unwrap();
    }
    tape.value(x).clone()
}

#[test]
fn empty_graph_leaves_only_the_self_map() {
    let mut store = ParamStore::new();
    let layer = gcn(&mut store, 4, 3, 1);
    let e = gaussian_matrix(&mut rng(4), 5, 4, 1.0);
    let out = run_gcn(&store, &[&layer], &e, &Tensor::zeros(&[5, 5]));
    let expected = affine(&store, &layer, 0, &e).map(|v| v.max(0.0));
    assert!(out.max_abs_diff(&expected) < 1e-12);
}

#[test]
fn single_arc_feeds_head_and_modifier_through_separate_maps() {
    let mut store = ParamStore::new();
    let layer = gcn(&mut store, 4, 3, 2);
    let e = gaussian_matrix(&mut rng(5), 4, 4, 1.0);
    let mut t = Tensor::zeros(&[4, 4]);
    t.set(1, 3, 1.0);
    let out = run_gcn(&store, &[&layer], &e, &t);
    let (f, g, h) = (affine(&store, &layer, 0, &e), affine(&store, &layer, 1, &e), affine(&store, &layer, 2, &e));
    for j in 0..3 {
        assert!((out.at(3, j) - (f.at(3, j) + g.at(1, j)).max(0.0)).abs() < 1e-12);
        assert!((out.at(1, j) - (f.at(1, j) + h.at(3, j)).max(0.0)).abs() < 1e-12);
        for i in [0, 2] {
            assert!((out.at(i, j) - f.at(i, j).max(0.0)).abs() < 1e-12);
        }
    }
}

#[test]
fn soft_graphs_match_a_neighbour_sum_oracle() {
    let mut r = rng(6);
    for case in 0..100 {
        let mut store = ParamStore::new();
        let layer = gcn(&mut store, 3, 4, case);
        let len = r.gen_range(1..8);
        let e = gaussian_matrix(&mut r, len, 3, 1.0);
        let t = gaussian_matrix(&mut r, len, len, 1.0).map(|v: f64| 1.0 / (1.0 + (-v).exp()));
        let out = run_gcn(&store, &[&layer], &e, &t);
        let (f, g, h) = (affine(&store, &layer, 0, &e), affine(&store, &layer, 1, &e), affine(&store, &layer, 2, &e));
        for i in 0..len {
            for j in 0..4 {
                let mut v = f.at(i, j);
                for k in 0..len {
                    v += t.at(k, i) * g.at(k, j) + t.at(i, k) * h.at(k, j);
                }
                assert!((out.at(i, j) - v.max(0.0)).abs() < 1e-10, "case {case}");
            }
        }
    }
}

#[test]
fn stacked_layers_see_exactly_k_hops() {
    // chain 0 → 1 → … → 6; perturbing token 0 reaches tokens 1..=k after k layers
    let n = 7;
    let mut t = Tensor::zeros(&[n, n]);
    for i in 0..n - 1 {
        t.set(i, i + 1, 1.0);
    }
    let mut store = ParamStore::new();
    let layers: Vec<GcnLayer> = (0..3).map(|i| gcn(&mut store, 4, 4, 40 + i)).collect();
    let e = gaussian_matrix(&mut rng(7), n, 4, 1.0);
    let mut moved = e.clone();
    for j in 0..4 {
        moved.set(0, j, e.at(0, j) + 3.0);
    }
    for k in 1..=3 {
        let refs: Vec<&GcnLayer> = layers[..k].iter().collect();
        let a = run_gcn(&store, &refs, &e, &t);
        let b = run_gcn(&store, &refs, &moved, &t);
        for i in k + 1..n {
            assert_eq!(a.row(i), b.row(i), "k = {k}, token {i}");
        }
        assert!((0..=k).any(|i| a.row(i) != b.row(i)));
    }
}

fn tiny_tagger(store: &mut ParamStore<f64>) -> TaggerModel {
    let spec = TaggerSpec {
        embedding: 6,
        lstm_hidden: 4,
        attention: vec![5],
        distance_radius: Some(2),
        gcn_width: 5,
        tagger_hidden: 5,
        ..TaggerSpec::listops(vocabulary_size(), label_set(5).len())
    };
    TaggerModel::new(store, spec, &mut substream(8, 0, 0, 0)).unwrap()
}

fn encoded(expr: &Expression) -> EncodedExample {
    encode(&to_dependencies(expr).unwrap(), &label_set(5)).unwrap()
}

fn logits(model: &TaggerModel, store: &ParamStore<f64>, batch: &[&EncodedExample], mode: StructureMode) -> (Tensor<f64>, Vec<usize>) {
    let mut rngs: Vec<SampleRng> = (0..batch.len()).map(|i| substream(0, 0, i as u64, 0)).collect();
    let mut tape = Tape::new(Mode::Inference);
    let structure = StructureConfig::new(mode, Estimator::Mc, Relaxation::ForwardRelaxed);
    let out = model
        .forward(&mut tape, store, batch, &structure, &mut rngs, &mut substream(0, 0, 0, 1), &ChartArena::new(32))
        .unwrap();
    (tape.value(out.logits).clone(), out.offsets)
}

#[test]
fn logits_cover_every_token_of_every_example() {
    let mut store = ParamStore::new();
    let model = tiny_tagger(&mut store);
    let a = encoded(&Expression::Apply(Operator::Max, vec![Expression::Value(1), Expression::Value(2)]));
    let b = encoded(&Expression::Apply(
        Operator::Sm,
        vec![Expression::Value(3), Expression::Apply(Operator::Min, vec![Expression::Value(4), Expression::Value(5)])],
    ));
    for mode in [StructureMode::Gold, StructureMode::LatentTree, StructureMode::LatentHead, StructureMode::LeftChain] {
        let (l, offsets) = logits(&model, &store, &[&a, &b], mode);
        assert_eq!(l.shape(), &[a.token_ids.len() + b.token_ids.len(), 6]);
        assert_eq!(offsets, vec![0, a.token_ids.len()]);
    }
}

#[test]
fn swapping_sibling_subtrees_permutes_gold_logits() {
    let mut store = ParamStore::new();
    let model = tiny_tagger(&mut store);
    let inner = Expression::Apply(Operator::Min, vec![Expression::Value(2), Expression::Value(3), Expression::Value(4)]);
    let one = Expression::Value(1);
    // * [MAX 1 [MIN 2 3 4 ] ]   vs   * [MAX [MIN 2 3 4 ] 1 ]
    let a = encoded(&Expression::Apply(Operator::Max, vec![one.clone(), inner.clone()]));
    let b = encoded(&Expression::Apply(Operator::Max, vec![inner, one]));
    let (la, _) = logits(&model, &store, &[&a], StructureMode::Gold);
    let (lb, _) = logits(&model, &store, &[&b], StructureMode::Gold);
    // token positions in a → positions in b
    let map = [(0, 0), (1, 1), (2, 7), (3, 2), (4, 3), (5, 4), (6, 5), (7, 6), (8, 8)];
    for (i, j) in map {
        for (x, y) in la.row(i).iter().zip(lb.row(j)) {
            assert!((x - y).abs() < 1e-12, "token {i} vs {j}");
        }
    }
}

#[test]
fn cross_entropy_of_uniform_logits_is_log_k() {
    for k in [2usize, 3, 6, 11] {
        let mut tape = Tape::<f64>::new(Mode::Train);
        let l = tape.input(Tensor::zeros(&[4, k])).unwrap();
        let loss = nll_loss(&mut tape, l, &[0, 1, k - 1, 0]).unwrap();
        assert!((tape.value(loss).item() - (k as f64).ln()).abs() < 1e-12);
    }
}

#[test]
fn cross_entropy_by_hand() {
    let mut tape = Tape::<f64>::new(Mode::Train);
    let l = tape.input(Tensor::from_f64(&[2, 3], &[1.0, 2.0, 3.0, 0.0, 0.0, 2f64.ln()]).unwrap()).unwrap();
    let loss = nll_loss(&mut tape, l, &[2, 0]).unwrap();
    // row 1: log(e + e² + e³) − 3; row 2: log(1 + 1 + 2) − 0
    let e = std::f64::consts::E;
    let expected = ((e + e * e + e.powi(3)).ln() - 3.0 + 4f64.ln()) / 2.0;
    assert!((tape.value(loss).item() - expected).abs() < 1e-10);
}

#[test]
fn cross_entropy_rejects_bad_tags() {
    let mut tape = Tape::<f64>::new(Mode::Train);
    let l = tape.input(Tensor::zeros(&[2, 3])).unwrap();
    assert!(matches!(nll_loss(&mut tape, l, &[0, 3]), Err(Error::InvalidArgument(_))));
    assert!(nll_loss(&mut tape, l, &[0]).is_err());
}

#[test]
fn batching_matches_one_example_at_a_time() {
    let mut store = ParamStore::new();
    let model = tiny_tagger(&mut store);
    let v = Expression::Value;
    let exprs = [
        Expression::Apply(Operator::Max, vec![v(1), v(2)]),
        Expression::Apply(Operator::Sm, vec![v(3), Expression::Apply(Operator::Min, vec![v(4), v(5), v(6)]), v(7)]),
        Expression::Apply(Operator::Med, vec![v(8)]),
    ];
    let examples: Vec<EncodedExample> = exprs.iter().map(encoded).collect();
    let batch: Vec<&EncodedExample> = examples.iter().collect();
    let scores = |batch: &[&EncodedExample]| {
        let mut tape = Tape::new(Mode::Train);
        let w = model.arc_scores(&mut tape, &store, batch, &mut substream(0, 0, 0, 1)).unwrap();
        w.iter().map(|&w| tape.value(w).clone()).collect::<Vec<_>>()
    };
    let together = scores(&batch);
    for (i, e) in examples.iter().enumerate() {
        let alone = scores(&[e]);
        for (x, y) in together[i].data().iter().zip(alone[0].data()) {
            assert!((x - y).abs() < 1e-12, "example {i}");
        }
    }
    for mode in [StructureMode::Gold, StructureMode::LatentTree] {
        let (all, offsets) = logits(&model, &store, &batch, mode);
        for (i, e) in examples.iter().enumerate() {
            let mut rngs = vec![substream(0, 0, i as u64, 0)];
            let mut tape = Tape::new(Mode::Inference);
            let structure = StructureConfig::new(mode, Estimator::Mc, Relaxation::ForwardRelaxed);
            let out = model
                .forward(&mut tape, &store, &[e], &structure, &mut rngs, &mut substream(0, 0, 0, 1), &ChartArena::new(32))
                .unwrap();
            let alone = tape.value(out.logits);
            for r in 0..e.token_ids.len() {
                for (x, y) in all.row(offsets[i] + r).iter().zip(alone.row(r)) {
                    assert!((x - y).abs() < 1e-12, "{mode:?} example {i} token {r}");
                }
            }
        }
    }
}
