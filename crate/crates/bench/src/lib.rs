//! Fixtures shared by the benchmarks.

use latentdep::autodiff::{Mode, ParamStore, Tape};
use latentdep::listops::{encode, generate, label_set, vocabulary_size, EncodedExample, GeneratorConfig};
use latentdep::parser::ChartArena;
use latentdep::sampler::{substream, SampleRng};
use latentdep::tagger::{batch_loss, StructureConfig, TaggerModel, TaggerSpec};

/// A ListOps tagger at experiment size with a batch of generated examples.
pub struct StepFixture {
    pub model: TaggerModel,
    pub store: ParamStore<f32>,
    pub batch: Vec<EncodedExample>,
    pub arena: ChartArena<f32>,
}

impl StepFixture {
    pub fn new(batch_size: usize, max_length: usize) -> Self {
        let cfg = GeneratorConfig { count: batch_size, max_length, ..GeneratorConfig::default() };
        let labels = label_set(cfg.max_arity);
        let batch = generate(&mut substream(7, 0, 0, 0), &cfg)
            .expect("generator bounds are valid")
            .iter()
            .map(|e| encode(e, &labels).expect("generated tags are in the label set"))
            .collect();
        let mut store = ParamStore::new();
        let spec = TaggerSpec::listops(vocabulary_size(), labels.len());
        let model = TaggerModel::new(&mut store, spec, &mut substream(7, 0, 0, 1)).expect("valid spec");
        StepFixture { model, store, batch, arena: ChartArena::new(max_length) }
    }

    /// Forward and backward of one minibatch; returns the loss.
    pub fn step(&self, structure: &StructureConfig) -> f32 {
        let batch: Vec<&EncodedExample> = self.batch.iter().collect();
        let mut rngs: Vec<SampleRng> = (0..batch.len()).map(|i| substream(7, 1, i as u64, 3)).collect();
        let mut tape = Tape::new(Mode::Train);
        let out = self
            .model
            .forward(&mut tape, &self.store, &batch, structure, &mut rngs, &mut substream(7, 1, 0, 4), &self.arena)
            .expect("forward");
        let loss = batch_loss(&mut tape, &out, &batch).expect("loss");
        let grads = tape.backward(loss).expect("backward");
        std::hint::black_box(grads);
        tape.value(loss).item()
    }
}
