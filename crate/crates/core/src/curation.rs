//! Corpus curation: tag cleaning, validity filtering, canonical dedup,
//! length and line statistics, and difficulty tiers.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grammar::Grammar;
use crate::latex::{
    count_lines, depth, distinct_commands, lex, normalize, parse, parse_lenient, render, ExprNode, MathToken,
    ParseError, ParseMode, TokenKind,
};
use crate::metrics::align;

const DEFAULT_CURATION: &str = include_str!("../data/curation.toml");
const DEFAULT_DIFFICULTY: &str = include_str!("../data/difficulty.toml");

#[derive(Debug, Error)]
pub enum CurationError {
    #[error("invalid curation config: {0}")]
    InvalidConfig(String),
    #[error("invalid difficulty profile: {0}")]
    InvalidProfile(String),
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Easy,
    Moderate,
    Complex,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Easy, Tier::Moderate, Tier::Complex];

    pub fn label(self) -> &'static str {
        match self {
            Tier::Easy => "Easy",
            Tier::Moderate => "Moderate",
            Tier::Complex => "Complex",
        }
    }
}

/// What `token_len` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    Lexer,
    Characters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationConfig {
    pub strip_tags: Vec<String>,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub require_strict_parse: bool,
    #[serde(default)]
    pub length_unit: LengthUnit,
    /// Inclusive upper edges; lengths start at 0.
    pub length_bucket_edges: Vec<usize>,
    /// Inclusive upper edges; line counts start at 1.
    pub line_bucket_edges: Vec<usize>,
}

fn read_file(path: &Path) -> Result<String, CurationError> {
    std::fs::read_to_string(path).map_err(|source| CurationError::Io { path: path.display().to_string(), source })
}

impl CurationConfig {
    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_CURATION).expect("shipped curation config is valid")
    }

    pub fn from_toml(src: &str) -> Result<Self, CurationError> {
        let c: CurationConfig = toml::from_str(src).map_err(|e| CurationError::InvalidConfig(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        Self::from_toml(&read_file(path)?)
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        Buckets::new(self.length_bucket_edges.clone(), 0)?;
        Buckets::new(self.line_bucket_edges.clone(), 1)?;
        if self.min_tokens > self.max_tokens {
            return Err(CurationError::InvalidConfig("min_tokens exceeds max_tokens".into()));
        }
        Ok(())
    }

    pub fn length_buckets(&self) -> Buckets {
        Buckets { edges: self.length_bucket_edges.clone(), floor: 0 }
    }

    pub fn line_buckets(&self) -> Buckets {
        Buckets { edges: self.line_bucket_edges.clone(), floor: 1 }
    }
}

/// Integer buckets with inclusive upper edges and an open last bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Buckets {
    edges: Vec<usize>,
    floor: usize,
}

impl Buckets {
    pub fn new(edges: Vec<usize>, floor: usize) -> Result<Self, CurationError> {
        if edges.is_empty() {
            return Err(CurationError::InvalidConfig("bucket edges are empty".into()));
        }
        if edges[0] < floor {
            return Err(CurationError::InvalidConfig(format!("first bucket edge is below {floor}")));
        }
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CurationError::InvalidConfig("bucket edges must be strictly increasing".into()));
        }
        Ok(Buckets { edges, floor })
    }

    pub fn len(&self) -> usize {
        self.edges.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Values below the floor fall into the first bucket.
    pub fn index(&self, value: usize) -> usize {
        self.edges.partition_point(|&e| e < value)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.len());
        let mut lo = self.floor;
        for &e in &self.edges {
            out.push(if lo == e { e.to_string() } else { format!("{lo}-{e}") });
            lo = e + 1;
        }
        out.push(format!(">{}", self.edges[self.edges.len() - 1]));
        out
    }

    pub fn label(&self, value: usize) -> String {
        self.labels().swap_remove(self.index(value))
    }
}

pub fn length_bucket(token_len: usize, config: &CurationConfig) -> String {
    config.length_buckets().label(token_len)
}

pub fn line_bucket(line_count: usize, config: &CurationConfig) -> String {
    config.line_buckets().label(line_count)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Weights {
    pub len: f64,
    pub lines: f64,
    pub depth: f64,
    pub vocab: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Caps {
    pub len: f64,
    pub lines: f64,
    pub depth: f64,
    pub vocab: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub easy_below: f64,
    pub moderate_below: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyProfile {
    pub weights: Weights,
    pub caps: Caps,
    pub thresholds: Thresholds,
}

impl DifficultyProfile {
    pub fn shipped() -> Self {
        Self::from_toml(DEFAULT_DIFFICULTY).expect("shipped difficulty profile is valid")
    }

    pub fn from_toml(src: &str) -> Result<Self, CurationError> {
        let p: DifficultyProfile = toml::from_str(src).map_err(|e| CurationError::InvalidProfile(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, CurationError> {
        Self::from_toml(&read_file(path)?)
    }

    pub fn validate(&self) -> Result<(), CurationError> {
        let bad = |m: &str| Err(CurationError::InvalidProfile(m.into()));
        let w = self.weights;
        let ws = [w.len, w.lines, w.depth, w.vocab];
        if ws.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return bad("weights must be non-negative");
        }
        if (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("weights must sum to 1");
        }
        let c = self.caps;
        if [c.len, c.lines, c.depth, c.vocab].iter().any(|x| !x.is_finite() || *x <= 0.0) {
            return bad("caps must be positive");
        }
        let t = self.thresholds;
        if !(0.0 < t.easy_below && t.easy_below < t.moderate_below && t.moderate_below < 1.0) {
            return bad("thresholds must satisfy 0 < easy_below < moderate_below < 1");
        }
        Ok(())
    }
}

/// Structural statistics of one expression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStats {
    pub token_len: usize,
    pub line_count: usize,
    pub depth: usize,
    pub distinct_commands: usize,
}

pub fn token_len(latex: &str, unit: LengthUnit) -> usize {
    match unit {
        LengthUnit::Lexer => lex(latex).len(),
        LengthUnit::Characters => latex.chars().count(),
    }
}

fn stats_of(latex: &str, tokens: &[MathToken], tree: &ExprNode, unit: LengthUnit) -> SampleStats {
    SampleStats {
        token_len: match unit {
            LengthUnit::Lexer => tokens.len(),
            LengthUnit::Characters => latex.chars().count(),
        },
        line_count: count_lines(tree),
        depth: depth(tree),
        distinct_commands: distinct_commands(tokens),
    }
}

/// Statistics from the strict parse.
pub fn compute_stats(latex: &str, unit: LengthUnit) -> Result<SampleStats, ParseError> {
    let tokens = lex(latex);
    let tree = parse(&tokens, ParseMode::Strict)?;
    Ok(stats_of(latex, &tokens, &tree, unit))
}

/// Statistics from the lenient parse; total.
pub fn compute_stats_lenient(latex: &str, unit: LengthUnit) -> SampleStats {
    let tokens = lex(latex);
    stats_of(latex, &tokens, &parse_lenient(latex).tree, unit)
}

pub fn difficulty_score(stats: &SampleStats, profile: &DifficultyProfile) -> f64 {
    let part = |v: usize, cap: f64| (v as f64 / cap).min(1.0);
    let (w, c) = (profile.weights, profile.caps);
    let score = w.len * part(stats.token_len, c.len)
        + w.lines * part(stats.line_count, c.lines)
        + w.depth * part(stats.depth, c.depth)
        + w.vocab * part(stats.distinct_commands, c.vocab);
    // dividing by the float sum of the weights makes saturation exactly 1
    (score / (w.len + w.lines + w.depth + w.vocab)).clamp(0.0, 1.0)
}

pub fn assign_tier(score: f64, profile: &DifficultyProfile) -> Tier {
    if score < profile.thresholds.easy_below {
        Tier::Easy
    } else if score < profile.thresholds.moderate_below {
        Tier::Moderate
    } else {
        Tier::Complex
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cleaned {
    pub latex: String,
    pub diagnostics: Vec<String>,
}

pub fn clean(latex: &str, config: &CurationConfig) -> String {
    clean_with_diagnostics(latex, config).latex
}

/// Removes strip-tag commands with their optional star, optional `[..]`
/// and braced arguments. Tags whose arguments are not braced or not closed
/// are left in place and reported. Passes repeat until nothing is removed,
/// since a removal can complete a tag that was malformed before it.
pub fn clean_with_diagnostics(latex: &str, config: &CurationConfig) -> Cleaned {
    let mut current = latex.to_string();
    loop {
        let (ranges, diagnostics) = strip_ranges(&current, config);
        if ranges.is_empty() {
            return Cleaned { latex: current, diagnostics };
        }
        current = splice(&current, &ranges);
    }
}

fn strip_ranges(latex: &str, config: &CurationConfig) -> (Vec<(usize, usize)>, Vec<String>) {
    let grammar = Grammar::shipped();
    let tokens = lex(latex);
    let mut ranges = Vec::new();
    let mut diagnostics = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        let name = match &tokens[i].kind {
            TokenKind::Command(n) if config.strip_tags.iter().any(|t| t == n) => n,
            _ => {
                i += 1;
                continue;
            }
        };
        let required = grammar.arity(name).map_or(1, |a| a.required.max(1));
        match tag_extent(&tokens, i, required) {
            Ok(last) => {
                ranges.push((tokens[i].span.start, tokens[last].span.end));
                i = last + 1;
            }
            Err(why) => {
                diagnostics.push(format!("\\{name} at byte {}: {why}; left in place", tokens[i].span.start));
                i += 1;
            }
        }
    }
    (ranges, diagnostics)
}

/// Index of the last token belonging to the tag starting at `start`.
fn tag_extent(tokens: &[MathToken], start: usize, required: usize) -> Result<usize, &'static str> {
    let is_sym = |j: usize, s: &str| matches!(tokens.get(j).map(|t| &t.kind), Some(TokenKind::Symbol(x)) if x == s);
    let mut j = start + 1;
    if is_sym(j, "*") {
        j += 1;
    }
    if is_sym(j, "[") {
        let mut depth = 0usize;
        loop {
            j += 1;
            match tokens.get(j).map(|t| &t.kind) {
                None => return Err("unclosed optional argument"),
                Some(TokenKind::OpenBrace) => depth += 1,
                Some(TokenKind::CloseBrace) => depth = depth.saturating_sub(1),
                Some(TokenKind::Symbol(s)) if s == "]" && depth == 0 => break,
                _ => {}
            }
        }
        j += 1;
    }
    let mut last = j.saturating_sub(1);
    for _ in 0..required {
        if !matches!(tokens.get(j).map(|t| &t.kind), Some(TokenKind::OpenBrace)) {
            return Err("missing braced argument");
        }
        let mut depth = 0usize;
        loop {
            match tokens.get(j).map(|t| &t.kind) {
                None => return Err("unclosed argument"),
                Some(TokenKind::OpenBrace) => depth += 1,
                Some(TokenKind::CloseBrace) => {
                    depth -= 1;
                    if depth == 0 {
                        break;
                    }
                }
                _ => {}
            }
            j += 1;
        }
        last = j;
        j += 1;
    }
    Ok(last)
}

/// Cuts byte ranges out of `src`, collapsing the whitespace around each cut
/// and keeping a control word separated from a following letter.
fn splice(src: &str, ranges: &[(usize, usize)]) -> String {
    if ranges.is_empty() {
        return src.to_string();
    }
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0;
    for &(start, end) in ranges {
        out.push_str(&src[cursor..start]);
        cursor = end;
        if out.is_empty() || out.ends_with(char::is_whitespace) {
            let rest = &src[cursor..];
            cursor += rest.len() - rest.trim_start().len();
        }
        if cursor == src.len() {
            out.truncate(out.trim_end().len());
        } else if src[cursor..].starts_with(|c: char| c.is_ascii_alphabetic()) && ends_with_control_word(&out) {
            out.push(' ');
        }
    }
    out.push_str(&src[cursor..]);
    out
}

fn ends_with_control_word(s: &str) -> bool {
    if !s.ends_with(|c: char| c.is_ascii_alphabetic()) {
        return false;
    }
    lex(s).last().is_some_and(|t| matches!(t.kind, TokenKind::Command(_)) && t.span.end == s.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reason {
    Malformed,
    TooSimplistic,
    TooLong,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validity {
    pub ok: bool,
    pub reasons: Vec<Reason>,
}

pub fn is_valid(latex: &str, config: &CurationConfig) -> Validity {
    let mut reasons = Vec::new();
    let tokens = lex(latex);
    if config.require_strict_parse && parse(&tokens, ParseMode::Strict).is_err() {
        reasons.push(Reason::Malformed);
    }
    let len = match config.length_unit {
        LengthUnit::Lexer => tokens.len(),
        LengthUnit::Characters => latex.chars().count(),
    };
    if len < config.min_tokens {
        reasons.push(Reason::TooSimplistic);
    }
    if len > config.max_tokens {
        reasons.push(Reason::TooLong);
    }
    Validity { ok: reasons.is_empty(), reasons }
}

/// Hex SHA-256 of the canonical rendering of the normalized lenient parse.
pub fn dedup_key(latex: &str) -> String {
    let canonical = render(&normalize(&parse_lenient(latex).tree));
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

/// One manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub latex: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tier: Option<Tier>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SampleStats>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

impl Sample {
    pub fn new(id: impl Into<String>, latex: impl Into<String>) -> Self {
        Sample { id: id.into(), latex: latex.into(), image: None, tier: None, stats: None, diagnostics: Vec::new() }
    }
}

/// Parses JSONL manifest lines, skipping blank ones. Line numbers are
/// 1-based.
pub fn read_manifest<R: BufRead>(reader: R) -> impl Iterator<Item = Result<Sample, CurationError>> {
    reader.lines().enumerate().filter_map(|(i, line)| {
        let line = match line {
            Ok(l) => l,
            Err(e) => return Some(Err(CurationError::Io { path: format!("line {}", i + 1), source: e })),
        };
        if line.trim().is_empty() {
            return None;
        }
        Some(parse_manifest_line(&line, i + 1))
    })
}

pub fn parse_manifest_line(line: &str, line_no: usize) -> Result<Sample, CurationError> {
    let s: Sample =
        serde_json::from_str(line).map_err(|e| CurationError::Manifest { line: line_no, message: e.to_string() })?;
    if s.id.is_empty() {
        return Err(CurationError::Manifest { line: line_no, message: "empty id".into() });
    }
    Ok(s)
}

/// Tracks ids already seen in a manifest.
#[derive(Debug, Default)]
pub struct IdSet(HashSet<String>);

impl IdSet {
    pub fn insert(&mut self, id: &str) -> Result<(), CurationError> {
        if self.0.insert(id.to_string()) {
            Ok(())
        } else {
            Err(CurationError::DuplicateId(id.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketCount {
    pub bucket: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidSample {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub length: Vec<BucketCount>,
    pub lines: Vec<BucketCount>,
    pub valid: u64,
    pub invalid: u64,
    pub total: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub invalid_samples: Vec<InvalidSample>,
}

/// Single-pass bucket accumulator.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    length: Buckets,
    lines: Buckets,
    length_counts: Vec<u64>,
    line_counts: Vec<u64>,
    invalid: Vec<InvalidSample>,
    unit: LengthUnit,
    ids: HashSet<String>,
}

impl StatsAccumulator {
    pub fn new(config: &CurationConfig) -> Self {
        let (length, lines) = (config.length_buckets(), config.line_buckets());
        StatsAccumulator {
            length_counts: vec![0; length.len()],
            line_counts: vec![0; lines.len()],
            length,
            lines,
            invalid: Vec::new(),
            unit: config.length_unit,
            ids: HashSet::new(),
        }
    }

    /// Cached stats are trusted; otherwise the strict parse decides validity.
    pub fn add(&mut self, sample: &Sample) -> Result<(), CurationError> {
        let stats = match sample.stats {
            Some(s) => Ok(s),
            None => compute_stats(&sample.latex, self.unit).map_err(|e| e.to_string()),
        };
        self.add_result(&sample.id, stats)
    }

    /// Adds stats computed elsewhere, or an invalid row with its reason.
    pub fn add_result(&mut self, id: &str, stats: Result<SampleStats, String>) -> Result<(), CurationError> {
        if !self.ids.insert(id.to_string()) {
            return Err(CurationError::DuplicateId(id.to_string()));
        }
        match stats {
            Ok(s) => self.add_stats(&s),
            Err(reason) => self.invalid.push(InvalidSample { id: id.to_string(), reason }),
        }
        Ok(())
    }

    fn add_stats(&mut self, s: &SampleStats) {
        self.length_counts[self.length.index(s.token_len)] += 1;
        self.line_counts[self.lines.index(s.line_count)] += 1;
    }

    pub fn finish(self) -> CorpusStats {
        let table = |b: &Buckets, counts: Vec<u64>| {
            b.labels().into_iter().zip(counts).map(|(bucket, count)| BucketCount { bucket, count }).collect()
        };
        let valid = self.length_counts.iter().sum::<u64>();
        let invalid = self.invalid.len() as u64;
        CorpusStats {
            length: table(&self.length, self.length_counts),
            lines: table(&self.lines, self.line_counts),
            valid,
            invalid,
            total: valid + invalid,
            invalid_samples: self.invalid,
        }
    }
}

pub fn corpus_stats<I>(samples: I, config: &CurationConfig) -> Result<CorpusStats, CurationError>
where
    I: IntoIterator<Item = Sample>,
{
    let mut acc = StatsAccumulator::new(config);
    for s in samples {
        acc.add(&s)?;
    }
    Ok(acc.finish())
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let mut rows = vec![vec!["length".to_string(), "count".to_string()]];
        rows.extend(self.length.iter().map(|b| vec![b.bucket.clone(), b.count.to_string()]));
        rows.push(vec![String::new(), String::new()]);
        rows.push(vec!["lines".to_string(), "count".to_string()]);
        rows.extend(self.lines.iter().map(|b| vec![b.bucket.clone(), b.count.to_string()]));
        rows.push(vec![String::new(), String::new()]);
        rows.push(vec!["valid".to_string(), self.valid.to_string()]);
        rows.push(vec!["invalid".to_string(), self.invalid.to_string()]);
        rows.push(vec!["total".to_string(), self.total.to_string()]);
        align(&rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Validate,
    Dedup,
}

/// Why a sample left the pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub id: String,
    pub stage: Stage,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TierCounts {
    pub easy: u64,
    pub moderate: u64,
    pub complex: u64,
}

impl TierCounts {
    pub fn add(&mut self, t: Tier) {
        match t {
            Tier::Easy => self.easy += 1,
            Tier::Moderate => self.moderate += 1,
            Tier::Complex => self.complex += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub samples: Vec<Sample>,
    pub provenance: Vec<Provenance>,
    pub stats: CorpusStats,
    pub tiers: TierCounts,
}

struct Prepared {
    sample: Sample,
    validity: Validity,
    key: String,
    stats: SampleStats,
}

fn prepare(mut s: Sample, config: &CurationConfig) -> Prepared {
    let cleaned = clean_with_diagnostics(&s.latex, config);
    s.latex = cleaned.latex;
    s.diagnostics.extend(cleaned.diagnostics);
    let validity = is_valid(&s.latex, config);
    let key = dedup_key(&s.latex);
    let stats = compute_stats_lenient(&s.latex, config.length_unit);
    Prepared { sample: s, validity, key, stats }
}

/// clean, validate, dedup (first occurrence wins), stats, tier. Per-sample
/// work runs in parallel; the result depends only on input order.
pub fn run_pipeline<I>(samples: I, config: &CurationConfig, profile: &DifficultyProfile) -> Result<PipelineOutput, CurationError>
where
    I: IntoIterator<Item = Sample>,
{
    let mut ids = IdSet::default();
    let samples: Vec<Sample> = samples.into_iter().collect();
    for s in &samples {
        ids.insert(&s.id)?;
    }
    let prepared: Vec<Prepared> = samples.into_par_iter().map(|s| prepare(s, config)).collect();
    let mut seen: HashMap<String, String> = HashMap::new();
    let mut out = Vec::new();
    let mut provenance = Vec::new();
    let mut acc = StatsAccumulator::new(config);
    let mut tiers = TierCounts::default();
    for p in prepared {
        let Prepared { mut sample, validity, key, stats } = p;
        if !validity.ok {
            let reason = validity.reasons.iter().map(|r| format!("{r:?}")).collect::<Vec<_>>().join(",");
            provenance.push(Provenance { id: sample.id, stage: Stage::Validate, reason });
            continue;
        }
        if let Some(first) = seen.get(&key) {
            provenance.push(Provenance { id: sample.id, stage: Stage::Dedup, reason: format!("duplicate of {first}") });
            continue;
        }
        seen.insert(key, sample.id.clone());
        let tier = assign_tier(difficulty_score(&stats, profile), profile);
        sample.stats = Some(stats);
        sample.tier = Some(tier);
        tiers.add(tier);
        acc.add(&sample)?;
        out.push(sample);
    }
    Ok(PipelineOutput { samples: out, provenance, stats: acc.finish(), tiers })
}
