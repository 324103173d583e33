//! Similarity metrics between predicted and reference LaTeX.
//!
//! String metrics work on the lexer's token stream. `cdm_lite` is a
//! rendering-free approximation of character-detection matching: it
//! compares the visible tokens of normalized trees.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::curation::Tier;
use crate::latex::{lex, normalize, parse_lenient, ExprNode};

pub fn token_stream(latex: &str) -> Vec<String> {
    lex(latex).iter().map(|t| t.lexeme()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(matched: usize, pred_total: usize, ref_total: usize) -> Self {
        let ratio = |d: usize| if d == 0 { 0.0 } else { matched as f64 / d as f64 };
        let (recall, precision) = (ratio(ref_total), ratio(pred_total));
        Prf { recall, precision, f1: f1(precision, recall) }
    }

    fn perfect() -> Self {
        Prf { recall: 1.0, precision: 1.0, f1: 1.0 }
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped n-gram matches of `pred` against `reference`, and the number of
/// n-grams in `pred`.
pub fn ngram_matches<T: Eq + Hash>(pred: &[T], reference: &[T], n: usize) -> (usize, usize) {
    let p = ngram_counts(pred, n);
    let r = ngram_counts(reference, n);
    let matched = p.iter().map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0))).sum();
    (matched, pred.len().saturating_sub(n - 1))
}

/// Sentence BLEU with uniform weights and a brevity penalty. An order with
/// no matches counts as `1 / (total + 1)`.
pub fn bleu<T: Eq + Hash>(pred: &[T], reference: &[T], max_n: usize) -> f64 {
    assert!(max_n >= 1, "max_n must be at least 1");
    if pred.is_empty() {
        return if reference.is_empty() { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (mut matched, mut total) = ngram_matches(pred, reference, n);
        if matched == 0 {
            matched += 1;
            total += 1;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let bp = if pred.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / pred.len() as f64).exp()
    };
    bp * (log_sum / max_n as f64).exp()
}

/// ROUGE-N. When neither side has an n-gram, the score is 1 for identical
/// streams and 0 otherwise.
pub fn rouge_n<T: Eq + Hash>(pred: &[T], reference: &[T], n: usize) -> Prf {
    assert!(n >= 1, "n must be at least 1");
    let (matched, pred_total) = ngram_matches(pred, reference, n);
    let ref_total = reference.len().saturating_sub(n - 1);
    if pred_total == 0 && ref_total == 0 && pred == reference {
        return Prf::perfect();
    }
    Prf::from_counts(matched, pred_total, ref_total)
}

/// Length of the longest common subsequence, in linear memory.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L; two empty streams score 1.
pub fn rouge_l<T: Eq>(pred: &[T], reference: &[T]) -> Prf {
    if pred.is_empty() && reference.is_empty() {
        return Prf::perfect();
    }
    Prf::from_counts(lcs_len(pred, reference), pred.len(), reference.len())
}

/// Token-level Levenshtein distance with unit costs.
pub fn edit_distance<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0usize; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Leaf lexemes and structural commands of a tree in pre-order. Braces,
/// invisible delimiters, empty groups and column specs contribute nothing.
pub fn visible_tokens(tree: &ExprNode) -> Vec<String> {
    fn walk(n: &ExprNode, out: &mut Vec<String>) {
        match n {
            ExprNode::Symbol { lexeme } => out.push(lexeme.clone()),
            ExprNode::Text { content } => {
                out.push("\\text".into());
                out.extend(content.split_whitespace().map(str::to_string));
            }
            ExprNode::Command { name, .. } => {
                out.push(format!("\\{name}"));
                n.children().into_iter().for_each(|c| walk(c, out));
            }
            ExprNode::Fraction { num, den } => {
                out.push("\\frac".into());
                walk(num, out);
                walk(den, out);
            }
            ExprNode::Radical { .. } => {
                out.push("\\sqrt".into());
                n.children().into_iter().for_each(|c| walk(c, out));
            }
            ExprNode::Script { base, sub, sup } => {
                walk(base, out);
                if let Some(s) = sub {
                    out.push("_".into());
                    walk(s, out);
                }
                if let Some(s) = sup {
                    out.push("^".into());
                    walk(s, out);
                }
            }
            ExprNode::Environment { name, rows, .. } => {
                out.push(format!("\\begin{{{name}}}"));
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        out.push("\\\\".into());
                    }
                    for (j, cell) in row.cells.iter().enumerate() {
                        if j > 0 {
                            out.push("&".into());
                        }
                        walk(cell, out);
                    }
                }
            }
            ExprNode::Delimited { left, body, right } => {
                if left != "." {
                    out.push(left.clone());
                }
                walk(body, out);
                if right != "." {
                    out.push(right.clone());
                }
            }
            ExprNode::Group { children } | ExprNode::Sequence { children } => {
                children.iter().for_each(|c| walk(c, out));
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CdmScore {
    pub recall: f64,
    pub f1: f64,
}

/// Approximate CDM: LCS over visible tokens of the normalized lenient
/// parses. Two expressions without visible tokens score 1.
pub fn cdm_lite(pred: &str, reference: &str) -> CdmScore {
    let p = visible_tokens(&normalize(&parse_lenient(pred).tree));
    let r = visible_tokens(&normalize(&parse_lenient(reference).tree));
    if p.is_empty() && r.is_empty() {
        return CdmScore { recall: 1.0, f1: 1.0 };
    }
    let s = Prf::from_counts(lcs_len(&p, &r), p.len(), r.len());
    CdmScore { recall: s.recall, f1: s.f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub bleu: f64,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub edit_distance: usize,
    pub cdm_lite: CdmScore,
}

pub fn score_sample(pred: &str, reference: &str) -> SampleScore {
    let p = token_stream(pred);
    let r = token_stream(reference);
    SampleScore {
        bleu: bleu(&p, &r, 4),
        rouge1: rouge_n(&p, &r, 1),
        rouge2: rouge_n(&p, &r, 2),
        rouge_l: rouge_l(&p, &r),
        edit_distance: edit_distance(&p, &r),
        cdm_lite: cdm_lite(pred, reference),
    }
}

/// Means over a set of samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MeanScores {
    pub count: usize,
    pub rouge1: Prf,
    pub rouge2: Prf,
    #[serde(rename = "rougeL")]
    pub rouge_l: Prf,
    pub bleu: f64,
    pub avg_edit: f64,
    pub cdm_lite: CdmScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierReport {
    pub tier: Tier,
    #[serde(flatten)]
    pub scores: MeanScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tiers: Vec<TierReport>,
    pub overall: MeanScores,
}

fn mean_of<'a>(scores: impl Iterator<Item = &'a SampleScore>) -> MeanScores {
    let mut m = MeanScores::default();
    let add = |acc: &mut Prf, x: &Prf| {
        acc.recall += x.recall;
        acc.precision += x.precision;
        acc.f1 += x.f1;
    };
    for s in scores {
        m.count += 1;
        add(&mut m.rouge1, &s.rouge1);
        add(&mut m.rouge2, &s.rouge2);
        add(&mut m.rouge_l, &s.rouge_l);
        m.bleu += s.bleu;
        m.avg_edit += s.edit_distance as f64;
        m.cdm_lite.recall += s.cdm_lite.recall;
        m.cdm_lite.f1 += s.cdm_lite.f1;
    }
    if m.count > 0 {
        let n = m.count as f64;
        for p in [&mut m.rouge1, &mut m.rouge2, &mut m.rouge_l] {
            p.recall /= n;
            p.precision /= n;
            p.f1 /= n;
        }
        m.bleu /= n;
        m.avg_edit /= n;
        m.cdm_lite.recall /= n;
        m.cdm_lite.f1 /= n;
    }
    m
}

/// Per-tier means in tier order, omitting empty tiers, plus the mean over
/// every sample including untiered ones.
pub fn aggregate(scores: &[(SampleScore, Option<Tier>)]) -> Report {
    let tiers = Tier::ALL
        .iter()
        .filter_map(|&tier| {
            let scores = mean_of(scores.iter().filter(|(_, t)| *t == Some(tier)).map(|(s, _)| s));
            (scores.count > 0).then_some(TierReport { tier, scores })
        })
        .collect();
    Report { tiers, overall: mean_of(scores.iter().map(|(s, _)| s)) }
}

impl Report {
    /// Aligned table; ROUGE columns show F1, CDM-lite shows F1.
    pub fn to_table(&self) -> String {
        let header = ["tier", "count", "ROUGE-1 F1", "ROUGE-2 F1", "ROUGE-L F1", "BLEU", "avg edit", "CDM-lite F1"];
        let row = |name: &str, m: &MeanScores| {
            vec![
                name.to_string(),
                m.count.to_string(),
                format!("{:.4}", m.rouge1.f1),
                format!("{:.4}", m.rouge2.f1),
                format!("{:.4}", m.rouge_l.f1),
                format!("{:.4}", m.bleu),
                format!("{:.2}", m.avg_edit),
                format!("{:.4}", m.cdm_lite.f1),
            ]
        };
        let mut rows = vec![header.iter().map(|s| s.to_string()).collect::<Vec<_>>()];
        rows.extend(self.tiers.iter().map(|t| row(t.tier.label(), &t.scores)));
        rows.push(row("overall", &self.overall));
        align(&rows)
    }
}

/// Column-aligned rendering: first column left-aligned, the rest right.
pub(crate) fn align(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..cols).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let mut line = String::new();
        for (c, cell) in r.iter().enumerate() {
            if c == 0 {
                let _ = write!(line, "{cell:<w$}", w = widths[c]);
            } else {
                let _ = write!(line, "  {cell:>w$}", w = widths[c]);
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}
