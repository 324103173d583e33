//! Byte-level BPE whose special tokens are never split or merged across.
//!
//! Ids are positional: special tokens first in list order, then the 256
//! byte values, then one id per merge in training order. Input is first cut
//! into special-token occurrences (leftmost, longest match) and the plain
//! spans between them; merges apply inside plain spans only.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Grammar;

pub const FORMAT_VERSION: &str = "bpe-math/1";
const BYTE_COUNT: usize = 256;
const EXTRA_SPECIALS: &str = include_str!("../data/specials_extra.txt");

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("vocabulary size {requested} is below the {minimum} ids taken by special tokens and bytes")]
    VocabTooSmall { requested: usize, minimum: usize },
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("special token list contains an empty string")]
    EmptySpecial,
    #[error("id {id} is outside the vocabulary of size {size}")]
    UnknownId { id: u32, size: usize },
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("model format `{found}` is not supported (expected `{FORMAT_VERSION}`)")]
    FormatVersionMismatch { found: String },
    #[error("corrupt model: {0}")]
    CorruptModel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct TokenizerModel {
    specials: Vec<String>,
    merges: Vec<(Vec<u8>, Vec<u8>)>,
    /// Bytes of every non-special id, indexed by `id - specials.len()`.
    pieces: Vec<Vec<u8>>,
    piece_ids: HashMap<Vec<u8>, u32>,
    ranks: HashMap<(u32, u32), u32>,
    matcher: SpecialMatcher,
}

impl PartialEq for TokenizerModel {
    fn eq(&self, other: &Self) -> bool {
        self.specials == other.specials && self.merges == other.merges
    }
}

impl Eq for TokenizerModel {}

/// Leftmost-longest matcher over special tokens.
#[derive(Debug, Clone, Default)]
struct SpecialMatcher {
    /// Candidates by first byte, longest first.
    by_first: HashMap<u8, Vec<(Vec<u8>, u32)>>,
}

impl SpecialMatcher {
    fn new(specials: &[String]) -> Self {
        let mut by_first: HashMap<u8, Vec<(Vec<u8>, u32)>> = HashMap::new();
        for (id, s) in specials.iter().enumerate() {
            by_first.entry(s.as_bytes()[0]).or_default().push((s.as_bytes().to_vec(), id as u32));
        }
        for v in by_first.values_mut() {
            v.sort_by_key(|(b, id)| (Reverse(b.len()), *id));
        }
        SpecialMatcher { by_first }
    }

    fn match_at(&self, input: &[u8], pos: usize) -> Option<(usize, u32)> {
        let cands = self.by_first.get(&input[pos])?;
        cands.iter().find(|(b, _)| input[pos..].starts_with(b)).map(|(b, id)| (b.len(), *id))
    }
}

enum Segment<'a> {
    Special(u32),
    Plain(&'a [u8]),
}

fn segments<'a>(matcher: &SpecialMatcher, input: &'a [u8]) -> Vec<Segment<'a>> {
    let mut out = Vec::new();
    let mut plain_start = 0;
    let mut pos = 0;
    while pos < input.len() {
        match matcher.match_at(input, pos) {
            Some((len, id)) => {
                if plain_start < pos {
                    out.push(Segment::Plain(&input[plain_start..pos]));
                }
                out.push(Segment::Special(id));
                pos += len;
                plain_start = pos;
            }
            None => pos += 1,
        }
    }
    if plain_start < input.len() {
        out.push(Segment::Plain(&input[plain_start..]));
    }
    out
}

fn check_specials(specials: &[String]) -> Result<Vec<String>, TokenizerError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for s in specials {
        if s.is_empty() {
            return Err(TokenizerError::EmptySpecial);
        }
        if seen.insert(s.as_str()) {
            out.push(s.clone());
        }
    }
    Ok(out)
}

/// Trains a model. Training stops early when no mergeable pair remains, so
/// the resulting vocabulary may be smaller than `vocab_size`.
///
/// Pairs are counted over all occurrences in the corpus. The most frequent
/// pair wins; ties go to the pair whose concatenation sorts first bytewise,
/// then to the shorter left part. A pair whose concatenation is already a
/// token is never merged, so every token has a unique surface.
pub fn train_bpe<I, S>(corpus: I, vocab_size: usize, specials: &[String]) -> Result<TokenizerModel, TokenizerError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let specials = check_specials(specials)?;
    let minimum = specials.len() + BYTE_COUNT;
    if vocab_size < minimum {
        return Err(TokenizerError::VocabTooSmall { requested: vocab_size, minimum });
    }
    let matcher = SpecialMatcher::new(&specials);
    let mut span_counts: HashMap<Vec<u8>, u64> = HashMap::new();
    let mut lines = 0usize;
    for line in corpus {
        lines += 1;
        for seg in segments(&matcher, line.as_ref().as_bytes()) {
            if let Segment::Plain(b) = seg {
                if b.len() > 1 {
                    *span_counts.entry(b.to_vec()).or_default() += 1;
                }
            }
        }
    }
    if lines == 0 {
        return Err(TokenizerError::EmptyCorpus);
    }
    let mut spans: Vec<(Vec<u8>, u64)> = span_counts.into_iter().collect();
    spans.sort();
    let merges = Trainer::new(&spans).run(vocab_size - minimum);
    TokenizerModel::from_parts(specials, merges)
}

/// Incremental pair counting over the distinct plain spans of a corpus.
/// Token numbers here are local: bytes are 0..256, merges follow.
struct Trainer {
    words: Vec<Vec<u32>>,
    weights: Vec<u64>,
    pieces: Vec<Vec<u8>>,
    known: HashSet<Vec<u8>>,
    counts: HashMap<(u32, u32), u64>,
    locations: HashMap<(u32, u32), HashSet<usize>>,
    heap: BinaryHeap<Candidate>,
}

/// Max-heap entry: count, then smallest concatenation, then shorter left
/// part, then the pair itself.
type Candidate = (u64, Reverse<Vec<u8>>, Reverse<usize>, u32, u32);

impl Trainer {
    fn new(spans: &[(Vec<u8>, u64)]) -> Self {
        let pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut t = Trainer {
            words: spans.iter().map(|(b, _)| b.iter().map(|&x| x as u32).collect()).collect(),
            weights: spans.iter().map(|(_, c)| *c).collect(),
            known: pieces.iter().cloned().collect(),
            pieces,
            counts: HashMap::new(),
            locations: HashMap::new(),
            heap: BinaryHeap::new(),
        };
        for w in 0..t.words.len() {
            t.add_word(w);
        }
        let pairs: Vec<(u32, u32)> = t.counts.keys().copied().collect();
        for p in pairs {
            t.push(p);
        }
        t
    }

    fn add_word(&mut self, w: usize) {
        let weight = self.weights[w];
        for i in 1..self.words[w].len() {
            let pair = (self.words[w][i - 1], self.words[w][i]);
            *self.counts.entry(pair).or_default() += weight;
            self.locations.entry(pair).or_default().insert(w);
        }
    }

    fn remove_word(&mut self, w: usize, touched: &mut HashSet<(u32, u32)>) {
        let weight = self.weights[w];
        for i in 1..self.words[w].len() {
            let pair = (self.words[w][i - 1], self.words[w][i]);
            if let Some(c) = self.counts.get_mut(&pair) {
                *c -= weight;
            }
            touched.insert(pair);
        }
    }

    fn push(&mut self, pair: (u32, u32)) {
        let count = self.counts.get(&pair).copied().unwrap_or(0);
        if count == 0 {
            return;
        }
        let left = &self.pieces[pair.0 as usize];
        let joined = [left.as_slice(), &self.pieces[pair.1 as usize]].concat();
        self.heap.push((count, Reverse(joined), Reverse(left.len()), pair.0, pair.1));
    }

    fn run(mut self, max_merges: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
        let mut merges = Vec::new();
        while merges.len() < max_merges {
            let Some((count, Reverse(joined), _, l, r)) = self.heap.pop() else { break };
            if self.counts.get(&(l, r)).copied() != Some(count) || self.known.contains(&joined) {
                continue;
            }
            let new_id = self.pieces.len() as u32;
            merges.push((self.pieces[l as usize].clone(), self.pieces[r as usize].clone()));
            self.pieces.push(joined.clone());
            self.known.insert(joined);
            let mut touched = HashSet::new();
            let mut affected: Vec<usize> = self.locations.remove(&(l, r)).unwrap_or_default().into_iter().collect();
            affected.sort_unstable();
            for w in affected {
                self.remove_word(w, &mut touched);
                self.words[w] = merge_pair(&self.words[w], l, r, new_id);
                self.add_word(w);
                for i in 1..self.words[w].len() {
                    touched.insert((self.words[w][i - 1], self.words[w][i]));
                }
            }
            self.counts.remove(&(l, r));
            touched.remove(&(l, r));
            for p in touched {
                self.push(p);
            }
        }
        merges
    }
}

/// Replaces non-overlapping occurrences of `(l, r)`, scanning left to right.
fn merge_pair(ids: &[u32], l: u32, r: u32, new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(ids.len());
    let mut i = 0;
    while i < ids.len() {
        if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
            out.push(new_id);
            i += 2;
        } else {
            out.push(ids[i]);
            i += 1;
        }
    }
    out
}

impl TokenizerModel {
    /// Builds a model from its persistent parts, checking every invariant.
    pub fn from_parts(specials: Vec<String>, merges: Vec<(Vec<u8>, Vec<u8>)>) -> Result<Self, TokenizerError> {
        let specials = check_specials(&specials)?;
        let base = specials.len() as u32;
        let mut pieces: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        let mut piece_ids: HashMap<Vec<u8>, u32> =
            pieces.iter().enumerate().map(|(i, p)| (p.clone(), base + i as u32)).collect();
        let special_set: HashSet<&[u8]> = specials.iter().map(|s| s.as_bytes()).collect();
        let mut ranks = HashMap::new();
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |p: &Vec<u8>| {
                piece_ids.get(p).copied().ok_or_else(|| {
                    TokenizerError::CorruptModel(format!("merge {rank} uses unknown token {}", escape_bytes(p)))
                })
            };
            let (li, ri) = (lookup(l)?, lookup(r)?);
            let joined = [l.as_slice(), r.as_slice()].concat();
            if piece_ids.contains_key(&joined) {
                return Err(TokenizerError::CorruptModel(format!("merge {rank} repeats token {}", escape_bytes(&joined))));
            }
            if special_set.contains(joined.as_slice()) {
                return Err(TokenizerError::CorruptModel(format!("merge {rank} produces a special token")));
            }
            let id = base + pieces.len() as u32;
            ranks.insert((li, ri), rank as u32);
            piece_ids.insert(joined.clone(), id);
            pieces.push(joined);
        }
        let matcher = SpecialMatcher::new(&specials);
        Ok(TokenizerModel { specials, merges, pieces, piece_ids, ranks, matcher })
    }

    pub fn specials(&self) -> &[String] {
        &self.specials
    }

    pub fn merges(&self) -> &[(Vec<u8>, Vec<u8>)] {
        &self.merges
    }

    pub fn vocab_size(&self) -> usize {
        self.specials.len() + self.pieces.len()
    }

    /// Surface bytes of an id.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        let i = id as usize;
        match i.checked_sub(self.specials.len()) {
            None => Some(self.specials[i].as_bytes()),
            Some(j) => self.pieces.get(j).map(Vec::as_slice),
        }
    }

    pub fn special_id(&self, token: &str) -> Option<u32> {
        self.specials.iter().position(|s| s == token).map(|i| i as u32)
    }

    /// Id of a non-special token with the given bytes.
    pub fn piece_id(&self, bytes: &[u8]) -> Option<u32> {
        self.piece_ids.get(bytes).copied()
    }

    fn byte_id(&self, b: u8) -> u32 {
        (self.specials.len() + b as usize) as u32
    }

    pub fn encode(&self, input: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in segments(&self.matcher, input.as_bytes()) {
            match seg {
                Segment::Special(id) => out.push(id),
                Segment::Plain(bytes) => out.extend(self.encode_plain(bytes)),
            }
        }
        out
    }

    /// Merges the lowest-ranked adjacent pair until none is mergeable.
    fn encode_plain(&self, bytes: &[u8]) -> Vec<u32> {
        let mut ids: Vec<u32> = bytes.iter().map(|&b| self.byte_id(b)).collect();
        let base = (self.specials.len() + BYTE_COUNT) as u32;
        loop {
            let best = ids
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, w[0], w[1])))
                .min();
            let Some((rank, l, r)) = best else { return ids };
            ids = merge_pair(&ids, l, r, base + rank);
        }
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::new();
        for &id in ids {
            let piece = self
                .token_bytes(id)
                .ok_or(TokenizerError::UnknownId { id, size: self.vocab_size() })?;
            bytes.extend_from_slice(piece);
        }
        String::from_utf8(bytes).map_err(|_| TokenizerError::InvalidUtf8)
    }

    /// The model file as a string: one JSON object and a trailing newline.
    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: FORMAT_VERSION.to_string(),
            specials: self.specials.clone(),
            merges: self.merges.iter().map(|(l, r)| [escape_bytes(l), escape_bytes(r)]).collect(),
        };
        let mut s = serde_json::to_string(&file).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self, TokenizerError> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| TokenizerError::CorruptModel(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(FORMAT_VERSION) => {}
            Some(other) => return Err(TokenizerError::FormatVersionMismatch { found: other.to_string() }),
            None => return Err(TokenizerError::CorruptModel("missing version".into())),
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| TokenizerError::CorruptModel(e.to_string()))?;
        let merges = file
            .merges
            .iter()
            .map(|[l, r]| Ok((unescape_bytes(l)?, unescape_bytes(r)?)))
            .collect::<Result<Vec<_>, TokenizerError>>()?;
        if file.specials.iter().any(String::is_empty) {
            return Err(TokenizerError::CorruptModel("empty special token".into()));
        }
        let model = TokenizerModel::from_parts(file.specials.clone(), merges)?;
        if model.specials.len() != file.specials.len() {
            return Err(TokenizerError::CorruptModel("duplicate special token".into()));
        }
        Ok(model)
    }
}

pub fn save_model(model: &TokenizerModel, path: &Path) -> Result<(), TokenizerError> {
    std::fs::write(path, model.to_json())?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TokenizerModel, TokenizerError> {
    TokenizerModel::from_json(&std::fs::read_to_string(path)?)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    specials: Vec<String>,
    merges: Vec<[String; 2]>,
}

/// Printable ASCII stays as is; other bytes become `\xNN`. A backslash is
/// escaped only where it would otherwise read as an escape.
fn escape_bytes(bytes: &[u8]) -> String {
    let mut s = String::new();
    for (i, &b) in bytes.iter().enumerate() {
        let looks_escaped = b == b'\\' && is_hex_escape_tail(&bytes[i + 1..]);
        if (0x20..=0x7e).contains(&b) && !looks_escaped {
            s.push(b as char);
        } else {
            s.push_str(&format!("\\x{b:02x}"));
        }
    }
    s
}

fn is_hex_escape_tail(rest: &[u8]) -> bool {
    let hex = |b: &u8| b.is_ascii_digit() || (b'a'..=b'f').contains(b);
    rest.len() >= 3 && rest[0] == b'x' && hex(&rest[1]) && hex(&rest[2])
}

fn unescape_bytes(s: &str) -> Result<Vec<u8>, TokenizerError> {
    let raw = s.as_bytes();
    let mut out = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        if raw[i] == b'\\' && is_hex_escape_tail(&raw[i + 1..]) {
            let hex = std::str::from_utf8(&raw[i + 2..i + 4]).expect("ascii");
            out.push(u8::from_str_radix(hex, 16).expect("checked hex"));
            i += 4;
        } else if (0x20..=0x7e).contains(&raw[i]) {
            out.push(raw[i]);
            i += 1;
        } else {
            return Err(TokenizerError::CorruptModel(format!("unescaped byte 0x{:02x} in merge", raw[i])));
        }
    }
    if out.is_empty() {
        return Err(TokenizerError::CorruptModel("empty merge part".into()));
    }
    Ok(out)
}

/// Command table entries, environment markers, structural markers and the
/// shipped extra list, deduplicated in that order.
pub fn default_specials() -> Vec<String> {
    specials_for(Grammar::shipped(), EXTRA_SPECIALS)
}

/// Special list for a grammar plus an extra-token file (one token per line,
/// `#` comments).
pub fn specials_for(grammar: &Grammar, extra: &str) -> Vec<String> {
    let mut all: Vec<String> = grammar.commands().map(|(n, _)| format!("\\{n}")).collect();
    for (name, _) in grammar.environments() {
        all.push(format!("\\begin{{{name}}}"));
        all.push(format!("\\end{{{name}}}"));
    }
    all.extend(crate::sml::structural_markers(grammar));
    all.extend(
        extra
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string),
    );
    let mut seen = HashSet::new();
    all.retain(|s| seen.insert(s.clone()));
    all
}
