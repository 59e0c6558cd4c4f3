//! Dataset splits on disk: `train.jsonl`, `dev.jsonl`, `test.jsonl` and a
//! `manifest.json` recording how they were made.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Profile;
use crate::error::{Error, Result};
use crate::listops::{generate, read_jsonl, write_jsonl, Example, GeneratorConfig};
use crate::sampler::substream;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];
pub const MANIFEST: &str = "manifest.json";

const DATA_TAG: u64 = 0x6461_7461;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub name: String,
    pub file: String,
    pub count: usize,
    pub crc32: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub profile: String,
    pub seed: u64,
    pub max_depth: usize,
    pub min_arity: usize,
    pub max_arity: usize,
    pub max_length: usize,
    pub nest_probability: f64,
    pub splits: Vec<SplitRecord>,
}

/// Generates all three splits, each from its own substream of `seed`.
pub fn generate_splits(profile: &Profile, seed: u64) -> Result<Vec<Vec<Example>>> {
    [profile.train, profile.dev, profile.test]
        .iter()
        .enumerate()
        .map(|(i, &count)| {
            let cfg = GeneratorConfig { count, ..profile.generator.clone() };
            generate(&mut substream(seed, i as u64, 0, DATA_TAG), &cfg)
        })
        .collect()
}

/// Writes the splits and manifest into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, profile: &Profile, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let splits = generate_splits(profile, seed)?;
    let mut records = Vec::new();
    for (name, examples) in SPLITS.iter().zip(&splits) {
        let file = format!("{name}.jsonl");
        let path = dir.join(&file);
        write_jsonl(&path, examples)?;
        let crc32 = crc32fast::hash(&fs::read(&path)?);
        records.push(SplitRecord { name: name.to_string(), file, count: examples.len(), crc32 });
    }
    let g = &profile.generator;
    let manifest = Manifest {
        profile: profile.name.to_string(),
        seed,
        max_depth: g.max_depth,
        min_arity: g.min_arity,
        max_arity: g.max_arity,
        max_length: g.max_length,
        nest_probability: g.nest_probability,
        splits: records,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads one split, preferring the file named in the manifest when there is one.
pub fn read_split(dir: &Path, name: &str) -> Result<Vec<Example>> {
    let file = match read_manifest(dir) {
        Ok(m) => m
            .splits
            .into_iter()
            .find(|s| s.name == name)
            .map(|s| s.file)
            .ok_or_else(|| Error::Format(format!("manifest in {} has no {name} split", dir.display())))?,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::NotFound => format!("{name}.jsonl"),
        Err(e) => return Err(e),
    };
    read_jsonl(&dir.join(file))
}
