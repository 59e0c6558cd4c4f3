//! The ListOps valency tagger: BiLSTM → arc scorer → latent structure →
//! unlexicalized GCN → per-token label classifier.
//!
//! The GCN input is one learned vector shared by every token, so the tagger
//! can only tell operators apart through the structure it is given.

use crate::autodiff::{Mode, NodeId, ParamId, ParamStore, Tape};
use crate::error::{invalid, Result};
use crate::gcn::{GcnLayer, GcnLayerSpec};
use crate::listops::EncodedExample;
use crate::nn::{dropout, glorot_uniform, Activation, BiLstm, BiLstmSpec, LayerSpec, Mlp, MlpSpec, PackedLayout};
use crate::parser::{left_chain_heads, ChartArena, ParseMode, SoftAdjacency};
use crate::sampler::{latent_head_sample, perturb_and_parse, Noise, SampleRng};
use crate::scorer::ArcScorer;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructureMode {
    LatentTree,
    LatentHead,
    LeftChain,
    Gold,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Estimator {
    /// One Gumbel perturbation per example and step.
    Mc,
    /// `G = 0`.
    ZeroNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Relaxation {
    ForwardRelaxed,
    StraightThrough,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StructureConfig {
    pub mode: StructureMode,
    pub estimator: Estimator,
    pub relaxation: Relaxation,
    pub temperature: f64,
    /// Perturb scores in inference tapes too (tree inspection only).
    pub sample_at_eval: bool,
}

impl StructureConfig {
    pub fn new(mode: StructureMode, estimator: Estimator, relaxation: Relaxation) -> Self {
        StructureConfig { mode, estimator, relaxation, temperature: 1.0, sample_at_eval: false }
    }

    fn noise(&self, mode: Mode) -> Noise {
        match (mode, self.estimator) {
            (Mode::Train, Estimator::Mc) => Noise::Gumbel,
            (Mode::Inference, _) if self.sample_at_eval => Noise::Gumbel,
            _ => Noise::Zero,
        }
    }

    fn parse_mode(&self, mode: Mode) -> ParseMode {
        match (mode, self.relaxation) {
            (Mode::Inference, _) => ParseMode::Discrete,
            (Mode::Train, Relaxation::ForwardRelaxed) => ParseMode::Relaxed,
            (Mode::Train, Relaxation::StraightThrough) => ParseMode::StraightThrough,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerSpec {
    pub vocabulary: usize,
    pub labels: usize,
    pub embedding: usize,
    pub lstm_hidden: usize,
    pub lstm_stacks: usize,
    pub attention: Vec<usize>,
    pub distance_radius: Option<usize>,
    pub gcn_layers: usize,
    pub gcn_width: usize,
    pub gcn_dense: bool,
    pub tagger_hidden: usize,
    pub dropout: f64,
}

impl TaggerSpec {
    /// Sizes used for the ListOps experiments.
    pub fn listops(vocabulary: usize, labels: usize) -> Self {
        TaggerSpec {
            vocabulary,
            labels,
            embedding: 100,
            lstm_hidden: 100,
            lstm_stacks: 2,
            attention: vec![100, 100],
            distance_radius: Some(10),
            gcn_layers: 1,
            gcn_width: 100,
            gcn_dense: false,
            tagger_hidden: 100,
            dropout: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TaggerModel {
    spec: TaggerSpec,
    embedding: ParamId,
    lstm: BiLstm,
    scorer: ArcScorer,
    unlexicalized: ParamId,
    gcn: Vec<GcnLayer>,
    classifier: Mlp,
}

/// Result of a batched forward pass.
#[derive(Debug)]
pub struct TaggerOutput {
    /// Logits for every token of every example, stacked (`Σ (n_b + 1) × labels`).
    pub logits: NodeId,
    /// First logit row of each example.
    pub offsets: Vec<usize>,
    /// Adjacency node per example.
    pub structures: Vec<NodeId>,
}

impl TaggerModel {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, spec: TaggerSpec, rng: &mut SampleRng) -> Result<Self> {
        if spec.labels < 2 || spec.vocabulary == 0 {
            return Err(invalid(format!("tagger needs a vocabulary and ≥ 2 labels, got {spec:?}")));
        }
        let embedding = store.add("embedding", glorot_uniform(spec.vocabulary, spec.embedding, rng));
        let lstm = BiLstm::new(
            store,
            "bilstm",
            BiLstmSpec { input: spec.embedding, hidden: spec.lstm_hidden, stacks: spec.lstm_stacks },
            rng,
        )?;
        let attention = MlpSpec::uniform(2 * spec.lstm_hidden, &spec.attention, Activation::Relu);
        let scorer = ArcScorer::new(store, "scorer", attention.clone(), attention, spec.distance_radius, rng)?;
        let unlexicalized = store.add("gcn.input", glorot_uniform(1, spec.embedding, rng));
        let mut gcn = Vec::new();
        let mut width = spec.embedding;
        for i in 0..spec.gcn_layers {
            let layer_spec = GcnLayerSpec { input: width, width: spec.gcn_width, activation: Activation::Relu, dense: spec.gcn_dense };
            width = layer_spec.output();
            gcn.push(GcnLayer::new(store, &format!("gcn.{i}"), layer_spec, rng)?);
        }
        let classifier = Mlp::new(
            store,
            "classifier",
            MlpSpec {
                input: width,
                layers: vec![
                    LayerSpec { size: spec.tagger_hidden, activation: Activation::Relu, bias: true },
                    LayerSpec { size: spec.labels, activation: Activation::None, bias: false },
                ],
            },
            rng,
        )?;
        Ok(TaggerModel { spec, embedding, lstm, scorer, unlexicalized, gcn, classifier })
    }

    pub fn spec(&self) -> &TaggerSpec {
        &self.spec
    }

    /// Arc score node per example, from one batched BiLSTM pass.
    pub fn arc_scores<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &[&EncodedExample],
        dropout_rng: &mut SampleRng,
    ) -> Result<Vec<NodeId>> {
        let b = batch.len();
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(batch[i].token_ids.len()));
        let lengths: Vec<usize> = order.iter().map(|&i| batch[i].token_ids.len()).collect();
        let layout = PackedLayout::new(&lengths)?;
        let mut ids = vec![0; layout.rows()];
        for (pos, &i) in order.iter().enumerate() {
            for (t, &id) in batch[i].token_ids.iter().enumerate() {
                ids[layout.row(t, pos)] = id;
            }
        }
        let table = tape.param(store, self.embedding);
        let x = tape.gather_rows(table, &ids)?;
        let x = dropout(tape, x, self.spec.dropout, dropout_rng)?;
        let h = self.lstm.forward(tape, store, x, &layout)?;
        let h = dropout(tape, h, self.spec.dropout, dropout_rng)?;
        let (hp, mp) = self.scorer.project(tape, store, h)?;
        let mut out = vec![None; b];
        for (pos, &i) in order.iter().enumerate() {
            let rows = layout.sequence_rows(pos);
            let hb = tape.gather_rows(hp, &rows)?;
            let mb = tape.gather_rows(mp, &rows)?;
            out[i] = Some(self.scorer.pair_scores(tape, store, hb, mb)?);
        }
        let out = out.into_iter().map(|w| w.expect("every example scored")).collect();
        Ok(out)
    }

    /// Structure node for each example under `config`. Training tapes get the
    /// relaxed or straight-through structure; inference tapes get discrete ones.
    #[allow(clippy::too_many_arguments)]
    pub fn structures<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &[&EncodedExample],
        config: &StructureConfig,
        rngs: &mut [SampleRng],
        dropout_rng: &mut SampleRng,
        arena: &ChartArena<F>,
    ) -> Result<Vec<NodeId>> {
        if rngs.len() != batch.len() {
            return Err(invalid(format!("{} streams for {} examples", rngs.len(), batch.len())));
        }
        let fixed = |heads: &[usize]| SoftAdjacency::<F>::from_heads(heads).map(SoftAdjacency::into_tensor);
        match config.mode {
            StructureMode::Gold => batch.iter().map(|e| tape.input(fixed(&e.heads)?)).collect(),
            StructureMode::LeftChain => batch.iter().map(|e| tape.input(fixed(&left_chain_heads(e.len()))?)).collect(),
            StructureMode::LatentTree | StructureMode::LatentHead => {
                let scores = self.arc_scores(tape, store, batch, dropout_rng)?;
                let noise = config.noise(tape.mode());
                let mode = config.parse_mode(tape.mode());
                scores
                    .into_iter()
                    .zip(rngs.iter_mut())
                    .map(|(w, rng)| match config.mode {
                        StructureMode::LatentTree => {
                            perturb_and_parse(tape, w, rng, noise, mode, config.temperature, arena)
                        }
                        _ => latent_head_sample(tape, w, rng, noise, mode, config.temperature),
                    })
                    .collect()
            }
        }
    }

    /// Full forward pass over a batch.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        store: &ParamStore<F>,
        batch: &[&EncodedExample],
        config: &StructureConfig,
        rngs: &mut [SampleRng],
        dropout_rng: &mut SampleRng,
        arena: &ChartArena<F>,
    ) -> Result<TaggerOutput> {
        if batch.is_empty() || batch.iter().any(|e| e.is_empty()) {
            return Err(invalid("tagger needs non-empty examples"));
        }
        let structures = self.structures(tape, store, batch, config, rngs, dropout_rng, arena)?;
        let unlex = tape.param(store, self.unlexicalized);
        let mut encoded = Vec::with_capacity(batch.len());
        let mut offsets = Vec::with_capacity(batch.len());
        let mut offset = 0;
        for (e, &t) in batch.iter().zip(&structures) {
            let len = e.token_ids.len();
            let mut x = tape.gather_rows(unlex, &vec![0; len])?;
            for layer in &self.gcn {
                x = layer.forward(tape, store, x, t)?;
            }
            encoded.push(x);
            offsets.push(offset);
            offset += len;
        }
        let all = if encoded.len() == 1 { encoded[0] } else { tape.concat_rows(&encoded)? };
        let logits = self.classifier.forward(tape, store, all)?;
        Ok(TaggerOutput { logits, offsets, structures })
    }

    /// Predicted heads (argmax per column) and tags (argmax per row), root excluded.
    pub fn decode<F: Scalar>(&self, tape: &Tape<F>, out: &TaggerOutput, batch: &[&EncodedExample]) -> Vec<(Vec<usize>, Vec<usize>)> {
        let logits = tape.value(out.logits);
        batch
            .iter()
            .zip(&out.offsets)
            .zip(&out.structures)
            .map(|((e, &off), &t)| {
                let heads = SoftAdjacency::new(tape.value(t).clone()).map(|a| a.heads()).unwrap_or_default();
                let tags = (1..e.token_ids.len())
                    .map(|i| {
                        let row = logits.row(off + i);
                        let mut best = 0;
                        for (k, &v) in row.iter().enumerate() {
                            if v > row[best] {
                                best = k;
                            }
                        }
                        best
                    })
                    .collect();
                (heads, tags)
            })
            .collect()
    }
}

/// Mean over rows of the cross-entropy of `logits` against `tags`.
pub fn nll_loss<F: Scalar>(tape: &mut Tape<F>, logits: NodeId, tags: &[usize]) -> Result<NodeId> {
    let (rows, labels) = tape.value(logits).dims2()?;
    if tags.len() != rows || rows == 0 {
        return Err(invalid(format!("{} tags for {rows} logit rows", tags.len())));
    }
    if let Some(t) = tags.iter().find(|&&t| t >= labels) {
        return Err(invalid(format!("tag {t} outside the {labels}-label set")));
    }
    let w = F::from_f64_lossy(1.0 / rows as f64);
    tape.cross_entropy(logits, tags, &vec![w; rows])
}

/// Mean over examples of the per-example mean cross-entropy over non-root tokens.
pub fn batch_loss<F: Scalar>(tape: &mut Tape<F>, out: &TaggerOutput, batch: &[&EncodedExample]) -> Result<NodeId> {
    let labels = tape.value(out.logits).cols();
    let mut targets = Vec::new();
    let mut weights = Vec::new();
    let b = batch.len() as f64;
    for e in batch {
        if let Some(t) = e.tags.iter().find(|&&t| t >= labels) {
            return Err(invalid(format!("tag {t} outside the {labels}-label set")));
        }
        let w = F::from_f64_lossy(1.0 / (e.len() as f64 * b));
        for (i, &t) in e.tags.iter().enumerate() {
            targets.push(t);
            weights.push(if i == 0 { F::zero() } else { w });
        }
    }
    tape.cross_entropy(out.logits, &targets, &weights)
}
