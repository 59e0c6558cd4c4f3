//! Run configuration as flat `key = value` text.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{invalid, Result};
use crate::listops::GeneratorConfig;
use crate::nn::AdamConfig;
use crate::tagger::{Estimator, Relaxation, StructureConfig, StructureMode, TaggerSpec};

/// Dataset sizes and generator bounds.
#[derive(Clone, Debug, PartialEq)]
pub struct Profile {
    pub name: &'static str,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub generator: GeneratorConfig,
}

impl Profile {
    pub fn by_name(name: &str) -> Result<Self> {
        let generator = |max_length| GeneratorConfig { max_length, ..GeneratorConfig::default() };
        match name {
            "small" => Ok(Profile { name: "small", train: 10_000, dev: 1_000, test: 1_000, generator: generator(40) }),
            "default" => Ok(Profile { name: "default", train: 90_000, dev: 1_000, test: 1_000, generator: generator(60) }),
            "tiny" => Ok(Profile { name: "tiny", train: 500, dev: 100, test: 100, generator: generator(20) }),
            _ => Err(invalid(format!("unknown profile {name:?} (expected small, default or tiny)"))),
        }
    }
}

/// Named experiment configurations.
pub const PRESETS: [&str; 7] = ["mc-forward", "mc-st", "zero-forward", "zero-st", "gold", "latent-head", "left-chain"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub preset: String,
    pub structure: StructureMode,
    pub estimator: Estimator,
    pub relaxation: Relaxation,
    pub temperature: f64,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    pub epochs: usize,
    pub updates_per_epoch: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub decay: f64,
    /// Restore Adam moments together with parameters when reloading the best model.
    pub reload_moments: bool,
    /// Stop after this many epochs without dev improvement; 0 disables.
    pub early_stop: usize,
    pub dropout: f64,
    pub embedding: usize,
    pub lstm_hidden: usize,
    pub lstm_stacks: usize,
    pub attention: Vec<usize>,
    pub distance_radius: usize,
    pub gcn_layers: usize,
    pub gcn_width: usize,
    pub tagger_hidden: usize,
    pub max_arity: usize,
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        RunConfig {
            preset: "mc-forward".into(),
            structure: StructureMode::LatentTree,
            estimator: Estimator::Mc,
            relaxation: Relaxation::ForwardRelaxed,
            temperature: 1.0,
            seed: 1,
            lr: adam.lr,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            clip: 5.0,
            epochs: 100,
            updates_per_epoch: 100,
            batch_size: 64,
            patience: 5,
            decay: 0.9,
            reload_moments: false,
            early_stop: 0,
            dropout: 0.0,
            embedding: 100,
            lstm_hidden: 100,
            lstm_stacks: 2,
            attention: vec![100, 100],
            distance_radius: 10,
            gcn_layers: 1,
            gcn_width: 100,
            tagger_hidden: 100,
            max_arity: 5,
            data: PathBuf::from("data/small"),
            out: PathBuf::from("runs/mc-forward"),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| invalid(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(format!("bad value {value:?} for {key} (expected true or false)"))),
    }
}

pub fn structure_name(mode: StructureMode) -> &'static str {
    match mode {
        StructureMode::LatentTree => "latent-tree",
        StructureMode::LatentHead => "latent-head",
        StructureMode::LeftChain => "left-chain",
        StructureMode::Gold => "gold",
    }
}

pub fn estimator_name(e: Estimator) -> &'static str {
    match e {
        Estimator::Mc => "mc",
        Estimator::ZeroNoise => "zero-noise",
    }
}

pub fn relaxation_name(r: Relaxation) -> &'static str {
    match r {
        Relaxation::ForwardRelaxed => "forward-relaxed",
        Relaxation::StraightThrough => "straight-through",
    }
}

impl RunConfig {
    /// Configuration for a named preset, all other fields at their defaults.
    pub fn preset(name: &str) -> Result<Self> {
        let mut c = RunConfig { preset: name.to_string(), out: PathBuf::from("runs").join(name), ..Default::default() };
        let (structure, estimator, relaxation) = match name {
            "mc-forward" => (StructureMode::LatentTree, Estimator::Mc, Relaxation::ForwardRelaxed),
            "mc-st" => (StructureMode::LatentTree, Estimator::Mc, Relaxation::StraightThrough),
            "zero-forward" => (StructureMode::LatentTree, Estimator::ZeroNoise, Relaxation::ForwardRelaxed),
            "zero-st" => (StructureMode::LatentTree, Estimator::ZeroNoise, Relaxation::StraightThrough),
            "gold" => (StructureMode::Gold, Estimator::Mc, Relaxation::ForwardRelaxed),
            "latent-head" => (StructureMode::LatentHead, Estimator::Mc, Relaxation::ForwardRelaxed),
            "left-chain" => (StructureMode::LeftChain, Estimator::Mc, Relaxation::ForwardRelaxed),
            _ => return Err(invalid(format!("unknown preset {name:?}; known presets: {}", PRESETS.join(", ")))),
        };
        c.structure = structure;
        c.estimator = estimator;
        c.relaxation = relaxation;
        Ok(c)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim().replace('-', "_").as_str() {
            "preset" => {
                let keep = (self.seed, self.data.clone());
                *self = RunConfig::preset(v)?;
                (self.seed, self.data) = keep;
            }
            "structure" => {
                self.structure = match v {
                    "latent-tree" => StructureMode::LatentTree,
                    "latent-head" => StructureMode::LatentHead,
                    "left-chain" => StructureMode::LeftChain,
                    "gold" => StructureMode::Gold,
                    _ => return Err(invalid(format!("unknown structure mode {v:?}"))),
                }
            }
            "estimator" => {
                self.estimator = match v {
                    "mc" => Estimator::Mc,
                    "zero-noise" | "zero" => Estimator::ZeroNoise,
                    _ => return Err(invalid(format!("unknown estimator {v:?}"))),
                }
            }
            "relaxation" => {
                self.relaxation = match v {
                    "forward-relaxed" | "forward" => Relaxation::ForwardRelaxed,
                    "straight-through" | "st" => Relaxation::StraightThrough,
                    _ => return Err(invalid(format!("unknown relaxation {v:?}"))),
                }
            }
            "temperature" => self.temperature = parse_value(key, v)?,
            "seed" => self.seed = parse_value(key, v)?,
            "lr" => self.lr = parse_value(key, v)?,
            "beta1" => self.beta1 = parse_value(key, v)?,
            "beta2" => self.beta2 = parse_value(key, v)?,
            "eps" => self.eps = parse_value(key, v)?,
            "clip" => self.clip = parse_value(key, v)?,
            "epochs" => self.epochs = parse_value(key, v)?,
            "updates_per_epoch" => self.updates_per_epoch = parse_value(key, v)?,
            "batch_size" => self.batch_size = parse_value(key, v)?,
            "patience" => self.patience = parse_value(key, v)?,
            "decay" => self.decay = parse_value(key, v)?,
            "reload_moments" => self.reload_moments = parse_bool(key, v)?,
            "early_stop" => self.early_stop = parse_value(key, v)?,
            "dropout" => self.dropout = parse_value(key, v)?,
            "embedding" => self.embedding = parse_value(key, v)?,
            "lstm_hidden" => self.lstm_hidden = parse_value(key, v)?,
            "lstm_stacks" => self.lstm_stacks = parse_value(key, v)?,
            "attention" => {
                self.attention = v
                    .split(',')
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse_value(key, s.trim()))
                    .collect::<Result<_>>()?
            }
            "distance_radius" => self.distance_radius = parse_value(key, v)?,
            "gcn_layers" => self.gcn_layers = parse_value(key, v)?,
            "gcn_width" => self.gcn_width = parse_value(key, v)?,
            "tagger_hidden" => self.tagger_hidden = parse_value(key, v)?,
            "max_arity" => self.max_arity = parse_value(key, v)?,
            "data" => self.data = PathBuf::from(v),
            "out" => self.out = PathBuf::from(v),
            other => return Err(invalid(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment. A `preset` line
    /// resets every field, so it should come first.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
            self.set(k, v).map_err(|e| invalid(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.updates_per_epoch == 0 || self.batch_size == 0 {
            return Err(invalid("updates-per-epoch and batch-size must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(invalid(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.lr >= 0.0) || !(self.clip > 0.0) {
            return Err(invalid("lr must be non-negative and clip positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) || self.patience == 0 {
            return Err(invalid("decay must lie in (0, 1] and patience be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.attention.is_empty() || self.gcn_layers == 0 || self.max_arity == 0 {
            return Err(invalid("attention, gcn-layers and max-arity must be non-empty"));
        }
        Ok(())
    }

    /// Canonical text form; [`RunConfig::from_text`] reads it back unchanged.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let attention: Vec<String> = self.attention.iter().map(usize::to_string).collect();
        let fields: Vec<(&str, String)> = vec![
            ("preset", self.preset.clone()),
            ("structure", structure_name(self.structure).into()),
            ("estimator", estimator_name(self.estimator).into()),
            ("relaxation", relaxation_name(self.relaxation).into()),
            ("temperature", self.temperature.to_string()),
            ("seed", self.seed.to_string()),
            ("lr", self.lr.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
            ("clip", self.clip.to_string()),
            ("epochs", self.epochs.to_string()),
            ("updates-per-epoch", self.updates_per_epoch.to_string()),
            ("batch-size", self.batch_size.to_string()),
            ("patience", self.patience.to_string()),
            ("decay", self.decay.to_string()),
            ("reload-moments", self.reload_moments.to_string()),
            ("early-stop", self.early_stop.to_string()),
            ("dropout", self.dropout.to_string()),
            ("embedding", self.embedding.to_string()),
            ("lstm-hidden", self.lstm_hidden.to_string()),
            ("lstm-stacks", self.lstm_stacks.to_string()),
            ("attention", attention.join(",")),
            ("distance-radius", self.distance_radius.to_string()),
            ("gcn-layers", self.gcn_layers.to_string()),
            ("gcn-width", self.gcn_width.to_string()),
            ("tagger-hidden", self.tagger_hidden.to_string()),
            ("max-arity", self.max_arity.to_string()),
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
        ];
        for (k, v) in fields {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn structure_config(&self) -> StructureConfig {
        StructureConfig { temperature: self.temperature, ..StructureConfig::new(self.structure, self.estimator, self.relaxation) }
    }

    pub fn tagger_spec(&self, vocabulary: usize, labels: usize) -> TaggerSpec {
        TaggerSpec {
            vocabulary,
            labels,
            embedding: self.embedding,
            lstm_hidden: self.lstm_hidden,
            lstm_stacks: self.lstm_stacks,
            attention: self.attention.clone(),
            distance_radius: (self.distance_radius > 0).then_some(self.distance_radius),
            gcn_layers: self.gcn_layers,
            gcn_width: self.gcn_width,
            gcn_dense: false,
            tagger_hidden: self.tagger_hidden,
            dropout: self.dropout,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        for name in PRESETS {
            let mut c = RunConfig::preset(name).unwrap();
            c.seed = 7;
            c.attention = vec![3, 4];
            assert_eq!(RunConfig::from_text(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn comments_overrides_and_errors() {
        let c = RunConfig::from_text("preset = zero-st\n# note\nseed = 3 # trailing\nearly-stop=4\n").unwrap();
        assert_eq!(c.estimator, Estimator::ZeroNoise);
        assert_eq!(c.relaxation, Relaxation::StraightThrough);
        assert_eq!((c.seed, c.early_stop), (3, 4));
        assert!(RunConfig::from_text("epochs = 0").is_err());
        assert!(RunConfig::from_text("colour = red").is_err());
        assert!(RunConfig::from_text("seed").is_err());
        assert!(RunConfig::preset("nope").is_err());
        assert!(Profile::by_name("huge").is_err());
    }
}
