use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use latentdep::experiment::diagnostics::{mixed_lengths, pad_scores, random_scores};
use latentdep::parser::{Chart, ChartArena, Rule};
use latentdep::sampler::substream;

fn relaxed(c: &mut Criterion) {
    let mut group = c.benchmark_group("relaxed-parse");
    group.sample_size(20);
    for n in [10usize, 20, 40, 80] {
        let scores = random_scores(n, &mut substream(0, n as u64, 0, 0));
        let mut chart = Chart::<f32>::with_capacity(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                chart.build(&scores, n, Rule::Softmax { temperature: 1.0 }).unwrap();
                let t = chart.backtrack().unwrap();
                chart.backward(&t).unwrap()
            })
        });
    }
    group.finish();
}

fn map(c: &mut Criterion) {
    let mut group = c.benchmark_group("map-parse");
    group.sample_size(20);
    for n in [10usize, 20, 40, 80] {
        let scores = random_scores(n, &mut substream(0, n as u64, 0, 0));
        let mut chart = Chart::<f32>::with_capacity(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, &n| {
            b.iter(|| {
                chart.build(&scores, n, Rule::Max).unwrap();
                chart.backtrack().unwrap()
            })
        });
    }
    group.finish();
}

fn mixed_batch(c: &mut Criterion) {
    let lengths = mixed_lengths(64, 5, 40, 0);
    let max_n = *lengths.iter().max().unwrap();
    let exact: Vec<(usize, Vec<f32>)> =
        lengths.iter().enumerate().map(|(i, &n)| (n, random_scores(n, &mut substream(0, i as u64, 0, 0)))).collect();
    let padded: Vec<Vec<f32>> = exact.iter().map(|(n, s)| pad_scores(s, *n, max_n)).collect();
    let arena = ChartArena::<f32>::new(max_n);
    let mut group = c.benchmark_group("mixed-batch");
    group.sample_size(10);
    group.bench_function("arena", |b| {
        b.iter(|| {
            for (n, s) in &exact {
                let mut chart = arena.take();
                chart.build(s, *n, Rule::Softmax { temperature: 1.0 }).unwrap();
                let t = chart.backtrack().unwrap();
                chart.backward(&t).unwrap();
            }
        })
    });
    group.bench_function("padded", |b| {
        b.iter(|| {
            for s in &padded {
                let mut chart = Chart::<f32>::new();
                chart.build(s, max_n, Rule::Softmax { temperature: 1.0 }).unwrap();
                let t = chart.backtrack().unwrap();
                chart.backward(&t).unwrap();
            }
        })
    });
    group.finish();
}

criterion_group!(benches, relaxed, map, mixed_batch);
criterion_main!(benches);
