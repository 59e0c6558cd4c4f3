//! ListOps expressions, their dependency conversion, datasets and metrics.
//!
//! An operator token heads the head token of each argument and its own
//! closing bracket; the root marker `*` heads the outermost operator. The tag
//! of an operator is its number of arguments (out-degree minus one), every
//! other token is tagged `NONE`.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::parser::validate_projective;
use crate::sampler::SampleRng;

pub const ROOT_TOKEN: &str = "*";
pub const CLOSE_TOKEN: &str = "]";
pub const NONE_TAG: &str = "NONE";
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Closed token inventory; the id of a token is its index, unknown tokens map to the last id.
pub const VOCABULARY: [&str; 16] = [
    ROOT_TOKEN, "[max", "[min", "[med", "[sm", CLOSE_TOKEN, "0", "1", "2", "3", "4", "5", "6", "7", "8", "9",
];

pub fn vocabulary_size() -> usize {
    VOCABULARY.len() + 1
}

pub fn token_id(token: &str) -> usize {
    VOCABULARY.iter().position(|&t| t == token).unwrap_or(VOCABULARY.len())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Operator {
    Max,
    Min,
    /// Lower median for an even number of arguments.
    Med,
    /// Sum modulo 10.
    Sm,
}

impl Operator {
    pub const ALL: [Operator; 4] = [Operator::Max, Operator::Min, Operator::Med, Operator::Sm];

    pub fn token(self) -> &'static str {
        match self {
            Operator::Max => "[max",
            Operator::Min => "[min",
            Operator::Med => "[med",
            Operator::Sm => "[sm",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Operator::ALL.into_iter().find(|o| o.token() == token)
    }

    pub fn apply(self, args: &[u8]) -> u8 {
        match self {
            Operator::Max => *args.iter().max().expect("non-empty"),
            Operator::Min => *args.iter().min().expect("non-empty"),
            Operator::Med => {
                let mut s = args.to_vec();
                s.sort_unstable();
                s[(s.len() - 1) / 2]
            }
            Operator::Sm => (args.iter().map(|&a| a as u32).sum::<u32>() % 10) as u8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expression {
    Value(u8),
    Apply(Operator, Vec<Expression>),
}

impl Expression {
    pub fn evaluate(&self) -> u8 {
        match self {
            Expression::Value(v) => *v,
            Expression::Apply(op, args) => {
                let vals: Vec<u8> = args.iter().map(Expression::evaluate).collect();
                op.apply(&vals)
            }
        }
    }

    /// Operator nesting depth; a bare value has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            Expression::Value(_) => 0,
            Expression::Apply(_, args) => 1 + args.iter().map(Expression::depth).max().unwrap_or(0),
        }
    }

    /// Prefix tokens without the root marker.
    pub fn tokens(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.push_tokens(&mut out);
        out
    }

    fn push_tokens(&self, out: &mut Vec<String>) {
        match self {
            Expression::Value(v) => out.push(v.to_string()),
            Expression::Apply(op, args) => {
                out.push(op.token().to_string());
                for a in args {
                    a.push_tokens(out);
                }
                out.push(CLOSE_TOKEN.to_string());
            }
        }
    }

    pub fn parse(tokens: &[&str]) -> Result<Self> {
        let mut pos = 0;
        let e = parse_at(tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(invalid(format!("trailing tokens after position {pos}")));
        }
        Ok(e)
    }
}

fn parse_at(tokens: &[&str], pos: &mut usize) -> Result<Expression> {
    let Some(&tok) = tokens.get(*pos) else {
        return Err(invalid("unexpected end of expression"));
    };
    *pos += 1;
    if let Some(op) = Operator::from_token(tok) {
        let mut args = Vec::new();
        loop {
            match tokens.get(*pos) {
                None => return Err(invalid(format!("unclosed {tok}"))),
                Some(&CLOSE_TOKEN) => {
                    *pos += 1;
                    break;
                }
                Some(_) => args.push(parse_at(tokens, pos)?),
            }
        }
        if args.is_empty() {
            return Err(invalid(format!("{tok} has no arguments")));
        }
        return Ok(Expression::Apply(op, args));
    }
    match tok.parse::<u8>() {
        Ok(v) if v <= 9 => Ok(Expression::Value(v)),
        _ => Err(invalid(format!("unexpected token {tok:?}"))),
    }
}

impl fmt::Display for Expression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens().join(" "))
    }
}

/// A tagged, dependency-annotated token sequence. `tokens[0]` is the root
/// marker; `heads[m-1]` is the head of token `m`; `tags` has one entry per token.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
    pub tags: Vec<String>,
}

impl Example {
    /// Number of non-root tokens.
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Checks shape, projectivity and that every operator's tag equals its out-degree minus one.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.heads.len();
        if self.tokens.len() != n + 1 || self.tags.len() != n + 1 {
            return Err(format!(
                "{} tokens, {} heads and {} tags do not line up",
                self.tokens.len(),
                n,
                self.tags.len()
            ));
        }
        if self.tokens[0] != ROOT_TOKEN {
            return Err(format!("first token is {:?}, not the root marker", self.tokens[0]));
        }
        validate_projective(&self.heads)?;
        let mut degree = vec![0usize; n + 1];
        for &h in &self.heads {
            degree[h] += 1;
        }
        for (i, tok) in self.tokens.iter().enumerate() {
            let want = if i > 0 && Operator::from_token(tok).is_some() {
                match degree[i] {
                    0 => return Err(format!("operator at {i} has no dependents")),
                    d => (d - 1).to_string(),
                }
            } else {
                NONE_TAG.to_string()
            };
            if self.tags[i] != want {
                return Err(format!("token {i} ({tok}) is tagged {} but should be {want}", self.tags[i]));
            }
        }
        Ok(())
    }
}

/// Converts an expression rooted at an operator into its dependency example.
pub fn to_dependencies(expr: &Expression) -> Result<Example> {
    if matches!(expr, Expression::Value(_)) {
        return Err(invalid("expression must start with an operator"));
    }
    let mut tokens = vec![ROOT_TOKEN.to_string()];
    let mut heads = Vec::new();
    let mut tags = vec![NONE_TAG.to_string()];
    convert(expr, 0, &mut tokens, &mut heads, &mut tags);
    Ok(Example { tokens, heads, tags })
}

// Appends `expr` with its head token attached to `parent`.
fn convert(expr: &Expression, parent: usize, tokens: &mut Vec<String>, heads: &mut Vec<usize>, tags: &mut Vec<String>) {
    let me = tokens.len();
    match expr {
        Expression::Value(v) => {
            tokens.push(v.to_string());
            heads.push(parent);
            tags.push(NONE_TAG.to_string());
        }
        Expression::Apply(op, args) => {
            tokens.push(op.token().to_string());
            heads.push(parent);
            tags.push(args.len().to_string());
            for a in args {
                convert(a, me, tokens, heads, tags);
            }
            tokens.push(CLOSE_TOKEN.to_string());
            heads.push(me);
            tags.push(NONE_TAG.to_string());
        }
    }
}

/// Recovers the expression from an example's tokens.
pub fn expression_of(example: &Example) -> Result<Expression> {
    let toks: Vec<&str> = example.tokens.iter().skip(1).map(String::as_str).collect();
    Expression::parse(&toks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub count: usize,
    pub max_depth: usize,
    pub min_arity: usize,
    pub max_arity: usize,
    /// Upper bound on tokens, root marker included.
    pub max_length: usize,
    /// Chance that a non-final-depth argument is itself an operator.
    pub nest_probability: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { count: 1000, max_depth: 4, min_arity: 2, max_arity: 5, max_length: 60, nest_probability: 0.25 }
    }
}

impl GeneratorConfig {
    fn check(&self) -> Result<()> {
        if self.max_depth == 0 || self.min_arity == 0 || self.min_arity > self.max_arity {
            return Err(invalid(format!(
                "generator needs max-depth ≥ 1 and 1 ≤ min-arity ≤ max-arity, got depth {} arity {}..{}",
                self.max_depth, self.min_arity, self.max_arity
            )));
        }
        if !(0.0..=1.0).contains(&self.nest_probability) {
            return Err(invalid(format!("nest probability {} outside [0, 1]", self.nest_probability)));
        }
        // root marker, operator, its arguments and its closing bracket
        let shortest = self.min_arity + 3;
        if shortest > self.max_length {
            return Err(invalid(format!(
                "max-length {} cannot fit the shortest expression ({shortest} tokens)",
                self.max_length
            )));
        }
        Ok(())
    }
}

fn sample_expression(rng: &mut SampleRng, cfg: &GeneratorConfig, depth: usize) -> Expression {
    let op = Operator::ALL[rng.gen_range(0..4)];
    let arity = rng.gen_range(cfg.min_arity..=cfg.max_arity);
    let args = (0..arity)
        .map(|_| {
            if depth < cfg.max_depth && rng.gen::<f64>() < cfg.nest_probability {
                sample_expression(rng, cfg, depth + 1)
            } else {
                Expression::Value(rng.gen_range(0..10))
            }
        })
        .collect();
    Expression::Apply(op, args)
}

const MAX_REJECTIONS: usize = 100_000;

/// Samples `count` examples, resampling any that exceed `max_length`.
pub fn generate(rng: &mut SampleRng, cfg: &GeneratorConfig) -> Result<Vec<Example>> {
    cfg.check()?;
    let mut out = Vec::with_capacity(cfg.count);
    let mut rejected = 0;
    while out.len() < cfg.count {
        let expr = sample_expression(rng, cfg, 1);
        let ex = to_dependencies(&expr)?;
        if ex.tokens.len() > cfg.max_length {
            rejected += 1;
            if rejected > MAX_REJECTIONS {
                return Err(invalid("max-length rejects nearly every sample; loosen the bounds"));
            }
            continue;
        }
        rejected = 0;
        out.push(ex);
    }
    Ok(out)
}

/// Tag vocabulary: `NONE` then arities `1..=max_arity`.
pub fn label_set(max_arity: usize) -> Vec<String> {
    std::iter::once(NONE_TAG.to_string())
        .chain((1..=max_arity).map(|a| a.to_string()))
        .collect()
}

/// An example mapped to token and label ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedExample {
    pub token_ids: Vec<usize>,
    pub heads: Vec<usize>,
    pub tags: Vec<usize>,
    pub operator: Vec<bool>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

pub fn encode(example: &Example, labels: &[String]) -> Result<EncodedExample> {
    let tags = example
        .tags
        .iter()
        .map(|t| {
            labels
                .iter()
                .position(|l| l == t)
                .ok_or_else(|| invalid(format!("tag {t:?} is not in the label set {labels:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EncodedExample {
        token_ids: example.tokens.iter().map(|t| token_id(t)).collect(),
        heads: example.heads.clone(),
        tags,
        operator: example.tokens.iter().map(|t| Operator::from_token(t).is_some()).collect(),
    })
}

/// Fraction of non-root tokens whose predicted head equals the gold head.
pub fn attachment_score(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(invalid(format!("head arrays of length {} and {}", predicted.len(), gold.len())));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Exact-match fraction over the given (already root-free) tag sequences.
pub fn tagging_accuracy<T: PartialEq>(predicted: &[T], gold: &[T]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(invalid(format!("tag sequences of length {} and {}", predicted.len(), gold.len())));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Example>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        ex.validate()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(ex);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::substream;

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn figure_example() {
        let e = Expression::parse(&toks("[max 3 4 [med 9 3 ] 1 ]")).unwrap();
        let ex = to_dependencies(&e).unwrap();
        assert_eq!(ex.tokens.join(" "), "* [max 3 4 [med 9 3 ] 1 ]");
        // tokens: 1 [max, 2 3, 3 4, 4 [med, 5 9, 6 3, 7 ], 8 1, 9 ]
        assert_eq!(ex.heads, vec![0, 1, 1, 1, 4, 4, 4, 1, 1]);
        assert_eq!(ex.tags[1], "4");
        assert_eq!(ex.tags[4], "2");
        assert!(ex.tags.iter().enumerate().all(|(i, t)| i == 1 || i == 4 || t == NONE_TAG));
        ex.validate().unwrap();
        assert_eq!(e.evaluate(), 4);
    }

    #[test]
    fn single_operator() {
        let ex = to_dependencies(&Expression::parse(&toks("[sm 5 ]")).unwrap()).unwrap();
        assert_eq!(ex.heads, vec![0, 1, 1]);
        assert_eq!(ex.tags, vec!["NONE", "1", "NONE", "NONE"]);
    }

    #[test]
    fn evaluator_semantics() {
        let ev = |s: &str| Expression::parse(&toks(s)).unwrap().evaluate();
        assert_eq!(ev("[sm 7 8 9 ]"), 4);
        assert_eq!(ev("[med 1 9 3 7 ]"), 3);
        assert_eq!(ev("[min 4 [max 1 2 ] ]"), 2);
    }

    #[test]
    fn malformed_nesting() {
        for s in ["[max 3", "[max ]", "3 ]", "[max 3 ] 4", "[foo 1 ]", "[max 12 ]"] {
            assert!(Expression::parse(&toks(s)).is_err(), "{s}");
        }
        assert!(to_dependencies(&Expression::Value(3)).is_err());
    }

    #[test]
    fn depth_one_arity_two() {
        let cfg = GeneratorConfig { count: 200, max_depth: 1, min_arity: 2, max_arity: 2, ..Default::default() };
        let exs = generate(&mut substream(1, 0, 0, 0), &cfg).unwrap();
        for ex in exs {
            assert_eq!(ex.tokens.len(), 5);
            assert_eq!(ex.tags[1], "2");
        }
    }

    #[test]
    fn unsatisfiable_bounds() {
        let mut r = substream(1, 0, 0, 0);
        let tight = GeneratorConfig { max_length: 4, ..Default::default() };
        assert!(generate(&mut r, &tight).is_err());
        let inverted = GeneratorConfig { min_arity: 4, max_arity: 3, ..Default::default() };
        assert!(generate(&mut r, &inverted).is_err());
        let flat = GeneratorConfig { max_depth: 0, ..Default::default() };
        assert!(generate(&mut r, &flat).is_err());
    }

    #[test]
    fn metrics() {
        assert_eq!(attachment_score(&[0, 1, 2, 3], &[0, 1, 2, 3]).unwrap(), 1.0);
        assert_eq!(attachment_score(&[0, 1, 2, 0], &[0, 1, 2, 3]).unwrap(), 0.75);
        assert!(attachment_score(&[0], &[0, 1]).is_err());
        assert_eq!(tagging_accuracy(&[1, 2], &[1, 2]).unwrap(), 1.0);
        assert_eq!(tagging_accuracy(&[1, 0, 3, 0], &[1, 2, 3, 4]).unwrap(), 0.5);
        assert!(tagging_accuracy::<usize>(&[], &[]).is_err());
    }

    #[test]
    fn encoding() {
        let ex = to_dependencies(&Expression::parse(&toks("[max 3 4 ]")).unwrap()).unwrap();
        let enc = encode(&ex, &label_set(5)).unwrap();
        assert_eq!(enc.token_ids, vec![0, 1, 9, 10, 5]);
        assert_eq!(enc.tags, vec![0, 2, 0, 0, 0]);
        assert_eq!(enc.operator, vec![false, true, false, false, false]);
        assert!(encode(&ex, &label_set(1)).is_err());
        assert_eq!(token_id("zzz"), VOCABULARY.len());
    }
}
