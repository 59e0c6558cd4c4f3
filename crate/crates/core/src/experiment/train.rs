//! Training loop, evaluation and per-epoch metric logging.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, TrainingState};
use super::config::RunConfig;
use super::data::read_split;
use crate::autodiff::{Mode, ParamStore, Tape};
use crate::error::{invalid, Error, Result};
use crate::listops::{encode, label_set, vocabulary_size, EncodedExample, Example};
use crate::nn::{clip_gradient_norm, Adam, PlateauSchedule};
use crate::parser::ChartArena;
use crate::sampler::{substream, SampleRng};
use crate::tagger::{batch_loss, StructureConfig, TaggerModel};
use crate::tensor::Scalar;

const INIT_TAG: u64 = 1;
const SHUFFLE_TAG: u64 = 2;
const NOISE_TAG: u64 = 3;
const DROPOUT_TAG: u64 = 4;

pub const EVAL_BATCH: usize = 64;
pub const METRICS_HEADER: &str = "epoch,train_loss,dev_acc,dev_acc_ops,dev_att,lr";

/// Corpus-level scores; every ratio pools tokens across examples.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Tagging accuracy over all non-root tokens.
    pub acc: f64,
    /// Tagging accuracy over operator tokens.
    pub acc_ops: f64,
    /// Attachment score over non-root tokens.
    pub att: f64,
    pub examples: usize,
    pub tokens: usize,
}

/// Predicted heads and label ids for one example, root excluded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub heads: Vec<usize>,
    pub tags: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev: Metrics,
    pub lr: f64,
    pub improved: bool,
}

impl EpochRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6e}",
            self.epoch, self.train_loss, self.dev.acc, self.dev.acc_ops, self.dev.att, self.lr
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub preset: String,
    pub seed: u64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub dev: Metrics,
    pub test: Option<Metrics>,
}

/// Model, weights and label set bundled for evaluation.
pub struct Tagger {
    pub config: RunConfig,
    pub model: TaggerModel,
    pub store: ParamStore<f32>,
    pub labels: Vec<String>,
}

impl Tagger {
    /// Freshly initialized model for `config`.
    pub fn new(config: &RunConfig) -> Result<Self> {
        let labels = label_set(config.max_arity);
        let mut store = ParamStore::new();
        let spec = config.tagger_spec(vocabulary_size(), labels.len());
        let model = TaggerModel::new(&mut store, spec, &mut substream(config.seed, 0, 0, INIT_TAG))?;
        Ok(Tagger { config: config.clone(), model, store, labels })
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint<f32>) -> Result<Self> {
        let mut t = Tagger::new(&ckpt.config)?;
        t.store.assign_from(&ckpt.params).map_err(|e| Error::Format(format!("checkpoint does not fit its model: {e}")))?;
        Ok(t)
    }

    pub fn encode_all(&self, examples: &[Example]) -> Result<Vec<EncodedExample>> {
        examples.iter().map(|e| encode(e, &self.labels)).collect()
    }

    /// Decodes every example in fixed batches of [`EVAL_BATCH`].
    ///
    /// Structures are discrete: `G = 0` MAP trees unless `sample_seed` is
    /// given, in which case each example gets its own Gumbel perturbation.
    pub fn predict(&self, examples: &[EncodedExample], sample_seed: Option<u64>) -> Result<Vec<Prediction>> {
        let mut structure = self.config.structure_config();
        structure.sample_at_eval = sample_seed.is_some();
        predict_with(&self.model, &self.store, examples, &structure, sample_seed.unwrap_or(0))
    }

    pub fn evaluate(&self, examples: &[EncodedExample]) -> Result<Metrics> {
        score(examples, &self.predict(examples, None)?)
    }
}

fn max_len(examples: &[EncodedExample]) -> usize {
    examples.iter().map(EncodedExample::len).max().unwrap_or(1)
}

fn predict_with(
    model: &TaggerModel,
    store: &ParamStore<f32>,
    examples: &[EncodedExample],
    structure: &StructureConfig,
    seed: u64,
) -> Result<Vec<Prediction>> {
    let arena = ChartArena::new(max_len(examples));
    let mut out = Vec::with_capacity(examples.len());
    for (c, chunk) in examples.chunks(EVAL_BATCH).enumerate() {
        let batch: Vec<&EncodedExample> = chunk.iter().collect();
        let mut tape = Tape::new(Mode::Inference);
        let base = (c * EVAL_BATCH) as u64;
        let mut rngs: Vec<SampleRng> = (0..batch.len()).map(|i| substream(seed, u64::MAX, base + i as u64, NOISE_TAG)).collect();
        let mut dropout_rng = substream(seed, u64::MAX, c as u64, DROPOUT_TAG);
        let result = model.forward(&mut tape, store, &batch, structure, &mut rngs, &mut dropout_rng, &arena)?;
        out.extend(model.decode(&tape, &result, &batch).into_iter().map(|(heads, tags)| Prediction { heads, tags }));
    }
    Ok(out)
}

/// Pools accuracy and attachment over all non-root tokens.
pub fn score(examples: &[EncodedExample], predictions: &[Prediction]) -> Result<Metrics> {
    if examples.len() != predictions.len() || examples.is_empty() {
        return Err(invalid(format!("{} predictions for {} examples", predictions.len(), examples.len())));
    }
    let (mut tokens, mut tag_hits, mut ops, mut op_hits, mut head_hits) = (0, 0, 0, 0, 0);
    for (e, p) in examples.iter().zip(predictions) {
        if p.heads.len() != e.len() || p.tags.len() != e.len() {
            return Err(invalid("prediction length differs from its example"));
        }
        for i in 0..e.len() {
            let hit = p.tags[i] == e.tags[i + 1];
            tokens += 1;
            tag_hits += hit as usize;
            head_hits += (p.heads[i] == e.heads[i]) as usize;
            if e.operator[i + 1] {
                ops += 1;
                op_hits += hit as usize;
            }
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Metrics {
        acc: ratio(tag_hits, tokens),
        acc_ops: ratio(op_hits, ops),
        att: ratio(head_hits, tokens),
        examples: examples.len(),
        tokens,
    })
}

/// Where a run writes its artifacts.
pub struct RunFiles<'a> {
    pub dir: &'a Path,
}

impl RunFiles<'_> {
    pub fn metrics(&self) -> std::path::PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn best(&self) -> std::path::PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> std::path::PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn summary(&self) -> std::path::PathBuf {
        self.dir.join("summary.json")
    }

    pub fn config(&self) -> std::path::PathBuf {
        self.dir.join("config.txt")
    }
}

/// Trains on the splits named by `config.data` and writes artifacts to `config.out`.
pub fn train(config: &RunConfig) -> Result<RunSummary> {
    config.validate()?;
    let train = read_split(&config.data, "train")?;
    let dev = read_split(&config.data, "dev")?;
    let test = match read_split(&config.data, "test") {
        Ok(t) => Some(t),
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    train_on(config, &train, &dev, test.as_deref(), Some(&config.out), |_| {})
}

/// Training loop over in-memory splits. With `out`, writes `config.txt`,
/// `metrics.csv`, `best.ckpt`, `last.ckpt` and `summary.json` there.
pub fn train_on(
    config: &RunConfig,
    train: &[Example],
    dev: &[Example],
    test: Option<&[Example]>,
    out: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<RunSummary> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(invalid("training and dev sets must be non-empty"));
    }
    let mut tagger = Tagger::new(config)?;
    let train = tagger.encode_all(train)?;
    let dev = tagger.encode_all(dev)?;
    let files = out.map(|dir| RunFiles { dir });
    let mut metrics_file: Option<File> = None;
    if let Some(f) = &files {
        fs::create_dir_all(f.dir)?;
        fs::write(f.config(), config.to_text())?;
        let mut m = OpenOptions::new().create(true).write(true).truncate(true).open(f.metrics())?;
        writeln!(m, "{METRICS_HEADER}")?;
        metrics_file = Some(m);
    }

    let structure = config.structure_config();
    let arena = ChartArena::new(max_len(&train));
    let mut adam = Adam::new(&tagger.store, config.adam());
    let mut schedule = PlateauSchedule::new(config.lr, config.patience, config.decay);
    let mut best_store = tagger.store.clone();
    let mut best_adam = adam.clone();
    let mut state = TrainingState { epoch: 0, best_epoch: 0, best_dev: None, lr: config.lr, schedule_best: None, stale: 0 };
    let mut best_metrics = Metrics::default();
    let b = config.batch_size;
    let mut order: Vec<usize> = Vec::new();

    for epoch in 1..=config.epochs {
        let lr = schedule.lr();
        adam.config.lr = lr;
        let mut loss_sum = 0.0;
        for update in 0..config.updates_per_epoch {
            let start = update * b;
            // One pass through a fresh shuffle, reshuffled whenever it runs out.
            while order.len() < start + b {
                let mut perm: Vec<usize> = (0..train.len()).collect();
                perm.shuffle(&mut substream(config.seed, epoch as u64, order.len() as u64, SHUFFLE_TAG));
                order.extend(perm);
            }
            let batch: Vec<&EncodedExample> = order[start..start + b].iter().map(|&i| &train[i]).collect();
            let global = ((epoch - 1) * config.updates_per_epoch + update) as u64;
            let mut rngs: Vec<SampleRng> =
                (0..b).map(|i| substream(config.seed, epoch as u64, global * b as u64 + i as u64, NOISE_TAG)).collect();
            let mut dropout_rng = substream(config.seed, epoch as u64, global, DROPOUT_TAG);
            let mut tape = Tape::new(Mode::Train);
            let result =
                tagger.model.forward(&mut tape, &tagger.store, &batch, &structure, &mut rngs, &mut dropout_rng, &arena)?;
            let loss = batch_loss(&mut tape, &result, &batch)?;
            let value = tape.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::Diverged(format!("loss is {value} at epoch {epoch}, update {update}")));
            }
            loss_sum += value;
            let mut grads = tape.backward(loss)?.into_params();
            clip_gradient_norm(&mut grads, config.clip);
            adam.step(&mut tagger.store, &grads)?;
        }
        order.drain(..config.updates_per_epoch * b);

        let dev_metrics = tagger.evaluate(&dev)?;
        let step = schedule.observe(dev_metrics.acc);
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / config.updates_per_epoch as f64,
            dev: dev_metrics,
            lr,
            improved: step.improved,
        };
        state.epoch = epoch;
        state.lr = schedule.lr();
        state.schedule_best = schedule.best();
        state.stale = schedule.stale();
        if step.improved {
            best_store.assign_from(&tagger.store)?;
            best_adam = adam.clone();
            best_metrics = dev_metrics;
            state.best_epoch = epoch;
            state.best_dev = Some(dev_metrics.acc);
            if let Some(f) = &files {
                checkpoint(config, &state, &tagger.store, &adam).save(&f.best())?;
            }
        }
        if step.reload_best {
            tagger.store.assign_from(&best_store)?;
            if config.reload_moments {
                let lr = adam.config.lr;
                adam = best_adam.clone();
                adam.config.lr = lr;
            }
        }
        log::info!(
            "epoch {epoch}: loss {:.4} dev acc {:.4} ops {:.4} att {:.4} lr {:.3e}{}",
            record.train_loss,
            dev_metrics.acc,
            dev_metrics.acc_ops,
            dev_metrics.att,
            lr,
            if step.reload_best { " (decayed, reloaded best)" } else { "" }
        );
        if let Some(m) = metrics_file.as_mut() {
            writeln!(m, "{}", record.csv_row())?;
            m.flush()?;
        }
        on_epoch(&record);
        if config.early_stop > 0 && epoch - state.best_epoch >= config.early_stop {
            log::info!("no dev improvement for {} epochs; stopping", config.early_stop);
            break;
        }
    }

    if let Some(f) = &files {
        checkpoint(config, &state, &tagger.store, &adam).save(&f.last())?;
    }
    tagger.store.assign_from(&best_store)?;
    let test_metrics = match test {
        Some(t) if !t.is_empty() => Some(tagger.evaluate(&tagger.encode_all(t)?)?),
        _ => None,
    };
    let summary = RunSummary {
        preset: config.preset.clone(),
        seed: config.seed,
        epochs_run: state.epoch,
        best_epoch: state.best_epoch,
        dev: best_metrics,
        test: test_metrics,
    };
    if let Some(f) = &files {
        let mut text = serde_json::to_string_pretty(&summary)?;
        text.push('\n');
        fs::write(f.summary(), text)?;
    }
    Ok(summary)
}

fn checkpoint(config: &RunConfig, state: &TrainingState, store: &ParamStore<f32>, adam: &Adam<f32>) -> Checkpoint<f32> {
    Checkpoint {
        config: config.clone(),
        state: state.clone(),
        params: store.clone(),
        adam_step: adam.step_count(),
        first: adam.first_moments().to_vec(),
        second: adam.second_moments().to_vec(),
    }
}

/// Parses a metrics file back into `(epoch, train_loss, acc, acc_ops, att, lr)` rows.
pub fn read_metrics(path: &Path) -> Result<Vec<[f64; 6]>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::Format(format!("{} lacks the metrics header", path.display())));
    }
    lines
        .map(|l| {
            let cells: Vec<f64> = l
                .split(',')
                .map(|c| c.parse::<f64>().map_err(|_| Error::Format(format!("bad metrics cell {c:?}"))))
                .collect::<Result<_>>()?;
            cells.try_into().map_err(|_| Error::Format(format!("metrics row {l:?} does not have 6 cells")))
        })
        .collect()
}
