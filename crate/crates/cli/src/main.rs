use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use latentdep::experiment::diagnostics::{self, CheckStatus};
use latentdep::experiment::{read_split, train, write_dataset, Checkpoint, Profile, RunConfig, Tagger};
use latentdep::listops::{to_dependencies, Example, Expression, NONE_TAG, ROOT_TOKEN};
use latentdep::parser::ParseMode;

const LOG_ENV: &str = "LATENTDEP_LOG";

/// Latent dependency tree induction on ListOps.
#[derive(Parser)]
#[command(name = "latentdep", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write train/dev/test splits and a manifest.
    Generate {
        #[arg(long, default_value = "small")]
        profile: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "data/small")]
        out: PathBuf,
    },
    /// Train a tagger and log per-epoch dev metrics.
    Train(TrainArgs),
    /// Score a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset directory; defaults to the one recorded in the checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "dev")]
        split: String,
    },
    /// Finite-difference checks of scorer, parser and GCN together.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        cases: usize,
        #[arg(long, default_value_t = 3)]
        min_n: usize,
        #[arg(long, default_value_t = 7)]
        max_n: usize,
        #[arg(long, value_enum, default_value_t = CheckMode::All)]
        mode: CheckMode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print predicted trees and tags for sentences read from a file or stdin.
    Parse {
        #[arg(long)]
        checkpoint: PathBuf,
        /// One sentence per line, either tokens or a dataset record; `-` reads stdin.
        #[arg(long, default_value = "-")]
        input: PathBuf,
        /// Sample structures with Gumbel noise instead of taking the MAP tree.
        #[arg(long)]
        sample: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time the relaxed chart at several lengths.
    Bench {
        #[arg(long, value_delimiter = ',', default_values_t = vec![10, 20, 40, 80])]
        lengths: Vec<usize>,
        /// Minimum measured seconds per length.
        #[arg(long, default_value_t = 0.5)]
        min_time: f64,
        /// Also compare arena and padded parsing on a batch of mixed lengths.
        #[arg(long)]
        mixed: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CheckMode {
    Relaxed,
    StraightThrough,
    Discrete,
    All,
}

/// Problems with the invocation itself; reported with exit code 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<latentdep::Error>() {
            match e {
                latentdep::Error::InvalidArgument(_) => return 2,
                latentdep::Error::Io(io) if io.kind() == io::ErrorKind::NotFound => return 2,
                _ => {}
            }
        }
        if let Some(io) = cause.downcast_ref::<io::Error>() {
            if io.kind() == io::ErrorKind::NotFound {
                return 2;
            }
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).format_timestamp(None).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate { profile, seed, out } => generate(&profile, seed, &out),
        Command::Train(args) => train_cmd(args),
        Command::Eval { checkpoint, data, split } => eval(&checkpoint, data.as_deref(), &split),
        Command::Gradcheck { cases, min_n, max_n, mode, seed } => gradcheck(cases, min_n, max_n, mode, seed),
        Command::Parse { checkpoint, input, sample, seed } => parse(&checkpoint, &input, sample.then_some(seed)),
        Command::Bench { lengths, min_time, mixed, seed } => bench(&lengths, min_time, mixed, seed),
    }
}

fn generate(profile: &str, seed: u64, out: &Path) -> Result<()> {
    let profile = Profile::by_name(profile).map_err(|e| usage(e.to_string()))?;
    let manifest = write_dataset(out, &profile, seed).with_context(|| format!("writing dataset to {}", out.display()))?;
    for s in &manifest.splits {
        println!("{}\t{}\t{} examples\tcrc32 {:08x}", s.name, out.join(&s.file).display(), s.count, s.crc32);
    }
    Ok(())
}

fn resolve_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = match &args.preset {
        Some(p) => RunConfig::preset(p).map_err(|e| usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        config.apply_text(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(data) = &args.data {
        config.data = data.clone();
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if let Some(epochs) = args.epochs {
        config.epochs = epochs;
    }
    for kv in &args.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| usage(format!("override {kv:?} is not key=value")))?;
        config.set(k, v).map_err(|e| usage(e.to_string()))?;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let config = resolve_config(&args)?;
    for split in ["train", "dev"] {
        let path = config.data.join(format!("{split}.jsonl"));
        if !path.exists() {
            return Err(usage(format!("missing {} (run `latentdep generate` first)", path.display())));
        }
    }
    log::info!("training {} (seed {}) into {}", config.preset, config.seed, config.out.display());
    let summary = train(&config).context("training failed")?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn load_tagger(path: &Path) -> Result<Tagger> {
    if !path.exists() {
        return Err(usage(format!("checkpoint {} does not exist", path.display())));
    }
    let ckpt = Checkpoint::<f32>::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Tagger::from_checkpoint(&ckpt)?)
}

fn eval(checkpoint: &Path, data: Option<&Path>, split: &str) -> Result<()> {
    let tagger = load_tagger(checkpoint)?;
    let dir = data.map(Path::to_path_buf).unwrap_or_else(|| tagger.config.data.clone());
    let examples = read_split(&dir, split).with_context(|| format!("reading {split} split from {}", dir.display()))?;
    let metrics = tagger.evaluate(&tagger.encode_all(&examples)?)?;
    println!("{}", serde_json::to_string_pretty(&metrics)?);
    Ok(())
}

fn gradcheck(cases: usize, min_n: usize, max_n: usize, mode: CheckMode, seed: u64) -> Result<()> {
    if min_n == 0 || min_n > max_n || cases == 0 {
        return Err(usage("need 1 ≤ min-n ≤ max-n and at least one case"));
    }
    let lengths: Vec<usize> = (min_n..=max_n).collect();
    let modes: &[ParseMode] = match mode {
        CheckMode::Relaxed => &[ParseMode::Relaxed],
        CheckMode::StraightThrough => &[ParseMode::StraightThrough],
        CheckMode::Discrete => &[ParseMode::Discrete],
        CheckMode::All => &[ParseMode::Relaxed, ParseMode::StraightThrough, ParseMode::Discrete],
    };
    let mut failures = 0;
    println!("mode\tn\tseed\tmax_rel_err\tstatus");
    for &m in modes {
        for row in diagnostics::gradient_suite(&lengths, cases, m, seed)? {
            let err = row.max_relative_error.map_or("-".to_string(), |e| format!("{e:.3e}"));
            let status = match row.status {
                CheckStatus::Pass => "pass",
                CheckStatus::Fail => {
                    failures += 1;
                    "FAIL"
                }
                CheckStatus::ExpectedMismatch => "expected-mismatch",
                CheckStatus::NonDifferentiable => "non-differentiable",
            };
            println!("{m:?}\t{}\t{}\t{err}\t{status}", row.n, row.seed);
        }
    }
    if failures > 0 {
        bail!("{failures} gradient checks failed");
    }
    Ok(())
}

/// Reads a sentence as a dataset record or a token line. Token lines that
/// form a valid expression get their gold tree; others get placeholder heads.
fn read_sentence(line: &str) -> Result<Example> {
    if line.trim_start().starts_with('{') {
        let ex: Example = serde_json::from_str(line).context("parsing dataset record")?;
        ex.validate().map_err(|e| usage(e))?;
        return Ok(ex);
    }
    let mut tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.first() == Some(&ROOT_TOKEN) {
        tokens.remove(0);
    }
    if tokens.is_empty() {
        return Err(usage("empty sentence"));
    }
    if let Ok(expr) = Expression::parse(&tokens) {
        return Ok(to_dependencies(&expr)?);
    }
    let n = tokens.len();
    Ok(Example {
        tokens: std::iter::once(ROOT_TOKEN).chain(tokens).map(String::from).collect(),
        heads: (0..n).collect(),
        tags: vec![NONE_TAG.to_string(); n + 1],
    })
}

/// `(left-dependents token right-dependents)`, leaves bare.
fn bracketed(tokens: &[String], heads: &[usize], node: usize) -> String {
    let children: Vec<usize> = (1..tokens.len()).filter(|&m| heads[m - 1] == node).collect();
    if children.is_empty() {
        return tokens[node].clone();
    }
    let mut parts: Vec<String> = children.iter().filter(|&&c| c < node).map(|&c| bracketed(tokens, heads, c)).collect();
    parts.push(tokens[node].clone());
    parts.extend(children.iter().filter(|&&c| c > node).map(|&c| bracketed(tokens, heads, c)));
    format!("({})", parts.join(" "))
}

fn parse(checkpoint: &Path, input: &Path, sample_seed: Option<u64>) -> Result<()> {
    let tagger = load_tagger(checkpoint)?;
    let lines: Vec<String> = if input == Path::new("-") {
        io::stdin().lock().lines().collect::<io::Result<_>>()?
    } else {
        fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?.lines().map(String::from).collect()
    };
    let examples: Vec<Example> =
        lines.iter().filter(|l| !l.trim().is_empty()).map(|l| read_sentence(l)).collect::<Result<_>>()?;
    if examples.is_empty() {
        return Err(usage("no sentences to parse"));
    }
    let encoded = tagger.encode_all(&examples)?;
    let predictions = tagger.predict(&encoded, sample_seed)?;
    let mut out = io::stdout().lock();
    for (i, (ex, p)) in examples.iter().zip(&predictions).enumerate() {
        let heads: Vec<String> = p.heads.iter().map(usize::to_string).collect();
        let tags: Vec<&str> = p.tags.iter().map(|&t| tagger.labels[t].as_str()).collect();
        writeln!(out, "# sentence {}: {}", i + 1, ex.tokens[1..].join(" "))?;
        writeln!(out, "heads\t{}", heads.join(" "))?;
        writeln!(out, "tags\t{}", tags.join(" "))?;
        writeln!(out, "tree\t{}", bracketed(&ex.tokens, &p.heads, 0))?;
    }
    Ok(())
}

fn bench(lengths: &[usize], min_time: f64, mixed: bool, seed: u64) -> Result<()> {
    if lengths.is_empty() || lengths.contains(&0) {
        return Err(usage("bench lengths must be positive"));
    }
    println!("n\trepeats\tseconds_per_parse");
    let mut points = Vec::new();
    for &n in lengths {
        let mut repeats = 1;
        let secs = loop {
            let t = diagnostics::time_relaxed_parse(n, repeats, seed)?;
            if t * repeats as f64 >= min_time || repeats >= 1 << 20 {
                break t;
            }
            repeats *= 2;
        };
        println!("{n}\t{repeats}\t{secs:.6e}");
        points.push((n, secs));
    }
    if let Some(slope) = diagnostics::log_log_slope(&points) {
        println!("log-log slope\t{slope:.3}");
    }
    if mixed {
        let batch = diagnostics::mixed_lengths(64, 5, 40, seed);
        let arena = diagnostics::time_batch(&batch, 5, false, seed)?;
        let padded = diagnostics::time_batch(&batch, 5, true, seed)?;
        println!("mixed batch\tarena {arena:.4e} s\tpadded {padded:.4e} s\tspeedup {:.2}x", padded / arena);
    }
    Ok(())
}
