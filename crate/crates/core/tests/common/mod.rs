//! Seeded generators shared by the integration and acceptance suites.
#![allow(dead_code)]

pub mod oracles;

use exprkit::grammar::Grammar;
use exprkit::latex::{ExprNode, Row};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const PLAIN: &[&str] = &[
    "a", "b", "c", "x", "y", "z", "n", "i", "0", "1", "2", "9", "+", "-", "=", "<", ">", ",", ".", "(", ")", "|",
    "'", "!", "/", "*", ":", ";", "α", "∞",
];
const CONTROL_SYMBOLS: &[&str] = &["\\{", "\\}", "\\,", "\\;", "\\!", "\\|", "\\ ", "\\%", "\\#"];
const UNKNOWN: &[&str] = &["\\foo", "\\myop", "\\R"];
const DELIMS: &[&str] = &["(", ")", "[", "]", "|", ".", "\\{", "\\}", "\\langle", "\\rangle", "\\|", "\\lfloor"];
const WORDS: &[&str] = &["if", "and", "for", "all", "x", "otherwise", "n>0"];

/// Random trees in the canonical shape the parser produces, so that
/// rendering and re-parsing must give back the same tree.
pub struct TreeGen<'g> {
    grammar: &'g Grammar,
    leaf_commands: Vec<String>,
    arg_commands: Vec<(String, usize, bool)>,
    envs: Vec<(String, bool)>,
}

impl<'g> TreeGen<'g> {
    pub fn new(grammar: &'g Grammar) -> Self {
        let mut leaf_commands = Vec::new();
        let mut arg_commands = Vec::new();
        for (name, arity) in grammar.commands() {
            if matches!(name, "left" | "right" | "middle" | "begin" | "end") {
                continue;
            }
            if arity.required == 0 && !arity.optional {
                leaf_commands.push(format!("\\{name}"));
            } else if !matches!(name, "frac" | "sqrt" | "text") {
                arg_commands.push((name.to_string(), arity.required, arity.optional));
            }
        }
        let envs = grammar.environments().map(|(n, s)| (n.to_string(), s.takes_arg)).collect();
        TreeGen { grammar, leaf_commands, arg_commands, envs }
    }

    pub fn shipped() -> TreeGen<'static> {
        TreeGen::new(Grammar::shipped())
    }

    pub fn grammar(&self) -> &Grammar {
        self.grammar
    }

    /// A whole expression: one item or a sequence of items.
    pub fn tree<R: Rng>(&self, rng: &mut R, budget: usize) -> ExprNode {
        ExprNode::seq(self.items(rng, budget))
    }

    fn items<R: Rng>(&self, rng: &mut R, budget: usize) -> Vec<ExprNode> {
        let n = rng.gen_range(0..=budget.min(5));
        let share = budget.saturating_sub(1) / n.max(1);
        (0..n).map(|_| self.item(rng, share)).collect()
    }

    fn item<R: Rng>(&self, rng: &mut R, budget: usize) -> ExprNode {
        if budget > 0 && rng.gen_bool(0.2) {
            let base = self.atom(rng, budget / 3);
            let slot = |rng: &mut R| self.slot(rng, budget / 3);
            let (sub, sup) = match rng.gen_range(0..3) {
                0 => (Some(slot(rng)), None),
                1 => (None, Some(slot(rng))),
                _ => (Some(slot(rng)), Some(slot(rng))),
            };
            return ExprNode::script(base, sub, sup);
        }
        self.atom(rng, budget)
    }

    /// A script slot: any atom, including a group of any length.
    fn slot<R: Rng>(&self, rng: &mut R, budget: usize) -> ExprNode {
        if budget > 0 && rng.gen_bool(0.15) {
            return self.item(rng, budget);
        }
        self.atom(rng, budget)
    }

    fn leaf<R: Rng>(&self, rng: &mut R) -> ExprNode {
        let lexeme = match rng.gen_range(0..10) {
            0..=4 => PLAIN.choose(rng).unwrap().to_string(),
            5 | 6 => self.leaf_commands.choose(rng).unwrap().clone(),
            7 => CONTROL_SYMBOLS.choose(rng).unwrap().to_string(),
            8 => UNKNOWN.choose(rng).unwrap().to_string(),
            _ => {
                let k = rng.gen_range(0..3);
                let words: Vec<&str> = (0..k).map(|_| *WORDS.choose(rng).unwrap()).collect();
                return ExprNode::Text { content: words.join(" ") };
            }
        };
        ExprNode::symbol(lexeme)
    }

    fn group<R: Rng>(&self, rng: &mut R, budget: usize) -> ExprNode {
        ExprNode::group(self.items(rng, budget))
    }

    fn atom<R: Rng>(&self, rng: &mut R, budget: usize) -> ExprNode {
        if budget == 0 || rng.gen_bool(0.45) {
            return self.leaf(rng);
        }
        let b = budget - 1;
        match rng.gen_range(0..6) {
            0 => self.group(rng, b),
            1 => ExprNode::frac(self.group(rng, b / 2), self.group(rng, b / 2)),
            2 => ExprNode::Radical {
                index: rng.gen_bool(0.3).then(|| Box::new(self.group(rng, b / 3))),
                radicand: Box::new(self.group(rng, b / 2)),
            },
            3 => {
                let (name, arity, opt) = self.arg_commands.choose(rng).unwrap().clone();
                ExprNode::Command {
                    name,
                    args: (0..arity).map(|_| self.group(rng, b / (arity + 1))).collect(),
                    optional_arg: (opt && rng.gen_bool(0.3)).then(|| Box::new(self.group(rng, b / 3))),
                }
            }
            4 => {
                let (name, takes_arg) = self.envs.choose(rng).unwrap().clone();
                let nrows = rng.gen_range(1..=3);
                let ncols = rng.gen_range(1..=3);
                let share = b / (nrows * ncols + 1);
                let rows = (0..nrows)
                    .map(|_| Row::new((0..ncols).map(|_| self.tree(rng, share)).collect()))
                    .collect();
                let arg = takes_arg.then(|| {
                    let spec = (0..ncols).map(|_| ExprNode::symbol("c")).collect();
                    Box::new(ExprNode::group(spec))
                });
                ExprNode::Environment { name, arg, rows }
            }
            _ => ExprNode::Delimited {
                left: DELIMS.choose(rng).unwrap().to_string(),
                body: Box::new(self.tree(rng, b)),
                right: DELIMS.choose(rng).unwrap().to_string(),
            },
        }
    }
}

/// Random token soup over LaTeX fragments, including malformed input.
pub fn fragment_soup<R: Rng>(rng: &mut R, max_len: usize) -> String {
    const FRAGMENTS: &[&str] = &[
        "x", "y", "2", "+", "{", "}", "{", "}", "^", "_", "&", "\\\\", "\\frac", "\\sqrt", "[", "]", "\\left(",
        "\\right)", "\\left", "\\right", "\\begin{gather}", "\\end{gather}", "\\begin{pmatrix}", "\\end{pmatrix}",
        "\\begin{array}", "\\end{array}", "\\text{a b}", "\\text", "\\alpha", "\\hat", "\\,", "\\dfrac", "\\limits",
        "\\sum", " ", "\\foo", "%c\n", "\\xrightarrow", "\\end{align}", ".",
    ];
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| *FRAGMENTS.choose(rng).unwrap()).collect()
}
