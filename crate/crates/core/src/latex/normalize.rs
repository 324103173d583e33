use super::ast::{ExprNode, Row};
use crate::grammar::{Grammar, Rewrite};

/// Canonicalizes a tree with the shipped synonym table.
pub fn normalize(tree: &ExprNode) -> ExprNode {
    normalize_with(tree, Grammar::shipped())
}

/// Canonicalizes a tree: applies synonym rewrites, drops spacing commands
/// and flattens redundant single-child groups outside argument slots.
/// Idempotent.
pub fn normalize_with(tree: &ExprNode, grammar: &Grammar) -> ExprNode {
    let n = Normalizer { grammar };
    ExprNode::seq(n.list(std::slice::from_ref(tree)))
}

struct Normalizer<'a> {
    grammar: &'a Grammar,
}

/// Symbols that must stay braced when they lead the only child of a group,
/// because bare they act as separators or terminators.
fn needs_braces(node: &ExprNode) -> bool {
    match node {
        ExprNode::Symbol { lexeme } => matches!(lexeme.as_str(), "&" | "\\\\" | "]"),
        ExprNode::Script { base, .. } => needs_braces(base),
        _ => false,
    }
}

fn leads_with_close_bracket(node: &ExprNode) -> bool {
    match node {
        ExprNode::Symbol { lexeme } => lexeme == "]",
        ExprNode::Script { base, .. } => leads_with_close_bracket(base),
        _ => false,
    }
}

fn items_of(node: ExprNode) -> Vec<ExprNode> {
    match node {
        ExprNode::Sequence { children } => children,
        other => vec![other],
    }
}

impl Normalizer<'_> {
    fn rename(&self, lexeme: &str) -> String {
        match self.grammar.rewrite(lexeme) {
            Some(Rewrite::Rename(to)) => to.clone(),
            _ => lexeme.to_string(),
        }
    }

    fn dropped(&self, node: &ExprNode) -> bool {
        let lexeme = match node {
            ExprNode::Symbol { lexeme } => lexeme.clone(),
            ExprNode::Command { name, .. } => format!("\\{name}"),
            _ => return false,
        };
        matches!(self.grammar.rewrite(&lexeme), Some(Rewrite::Drop))
    }

    fn list(&self, items: &[ExprNode]) -> Vec<ExprNode> {
        let mut out: Vec<ExprNode> = Vec::with_capacity(items.len());
        for item in items {
            if self.dropped(item) {
                continue;
            }
            if let ExprNode::Script { base, sub, sup } = item {
                if self.dropped(base) {
                    // `\sum\limits_{i}`: the script moves to the previous atom.
                    let base = match out.pop() {
                        Some(prev) if !matches!(prev, ExprNode::Script { .. }) => prev,
                        Some(prev) => {
                            out.push(prev);
                            ExprNode::group(Vec::new())
                        }
                        None => ExprNode::group(Vec::new()),
                    };
                    out.push(self.script(&base, sub.as_deref(), sup.as_deref(), true));
                    continue;
                }
            }
            match self.node(item) {
                ExprNode::Group { mut children } if children.len() == 1 && !needs_braces(&children[0]) => {
                    out.push(children.pop().unwrap())
                }
                n => out.push(n),
            }
        }
        out
    }

    /// Argument slots keep their group but lose redundant inner groups.
    fn arg(&self, node: &ExprNode) -> ExprNode {
        self.slot(node, false)
    }

    /// Like `arg`, but an inner group holding a bare `]` keeps its braces.
    fn opt_arg(&self, node: &ExprNode) -> ExprNode {
        self.slot(node, true)
    }

    fn slot(&self, node: &ExprNode, bracketed: bool) -> ExprNode {
        let mut n = match node {
            ExprNode::Group { children } => ExprNode::group(self.list(children)),
            other => ExprNode::group(self.list(std::slice::from_ref(other))),
        };
        loop {
            match n {
                ExprNode::Group { mut children }
                    if children.len() == 1
                        && matches!(&children[0], ExprNode::Group { children: inner }
                            if !(bracketed && inner.iter().any(leads_with_close_bracket))) =>
                {
                    n = children.pop().unwrap();
                }
                other => return other,
            }
        }
    }

    fn script_slot(&self, node: &ExprNode) -> ExprNode {
        if self.dropped(node) {
            return ExprNode::group(Vec::new());
        }
        match self.node(node) {
            ExprNode::Group { mut children } if children.len() == 1 && !needs_braces(&children[0]) => {
                children.pop().unwrap()
            }
            n => n,
        }
    }

    fn script(&self, base: &ExprNode, sub: Option<&ExprNode>, sup: Option<&ExprNode>, base_done: bool) -> ExprNode {
        let base = if base_done { base.clone() } else { self.script_slot(base) };
        let base = match base {
            // a lone script cannot be a base
            s @ ExprNode::Script { .. } => ExprNode::group(vec![s]),
            b => b,
        };
        ExprNode::Script {
            base: Box::new(base),
            sub: sub.map(|s| Box::new(self.script_slot(s))),
            sup: sup.map(|s| Box::new(self.script_slot(s))),
        }
    }

    fn node(&self, node: &ExprNode) -> ExprNode {
        match node {
            ExprNode::Symbol { lexeme } => ExprNode::symbol(self.rename(lexeme)),
            ExprNode::Command { name, args, optional_arg } => {
                let target = self.rename(&format!("\\{name}"));
                let args: Vec<ExprNode> = args.iter().map(|a| self.arg(a)).collect();
                let optional_arg = optional_arg.as_ref().map(|o| Box::new(self.opt_arg(o)));
                match (target.as_str(), args.len(), &optional_arg) {
                    ("\\frac", 2, None) => {
                        let mut args = args;
                        let den = args.pop().unwrap();
                        let num = args.pop().unwrap();
                        ExprNode::frac(num, den)
                    }
                    _ => ExprNode::Command {
                        name: target.trim_start_matches('\\').to_string(),
                        args,
                        optional_arg,
                    },
                }
            }
            ExprNode::Group { children } => ExprNode::group(self.list(children)),
            ExprNode::Fraction { num, den } => ExprNode::frac(self.arg(num), self.arg(den)),
            ExprNode::Radical { index, radicand } => ExprNode::Radical {
                index: index.as_ref().map(|i| Box::new(self.opt_arg(i))),
                radicand: Box::new(self.arg(radicand)),
            },
            ExprNode::Script { base, sub, sup } => self.script(base, sub.as_deref(), sup.as_deref(), false),
            ExprNode::Environment { name, arg, rows } => ExprNode::Environment {
                name: name.clone(),
                arg: arg.as_ref().map(|a| Box::new(self.arg(a))),
                rows: rows
                    .iter()
                    .map(|r| {
                        Row::new(
                            r.cells
                                .iter()
                                .map(|c| ExprNode::seq(self.list(&items_of(c.clone()))))
                                .collect(),
                        )
                    })
                    .collect(),
            },
            ExprNode::Text { content } => ExprNode::Text { content: content.clone() },
            ExprNode::Delimited { left, body, right } => ExprNode::Delimited {
                left: self.rename(left),
                body: Box::new(ExprNode::seq(self.list(&items_of((**body).clone())))),
                right: self.rename(right),
            },
            ExprNode::Sequence { children } => ExprNode::seq(self.list(children)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::{lex, parse, render, ParseMode};

    fn norm(s: &str) -> String {
        render(&normalize(&parse(&lex(s), ParseMode::Strict).unwrap()))
    }

    #[test]
    fn synonyms() {
        assert_eq!(norm(r"\dfrac{a}{b}"), r"\frac{a}{b}");
        assert_eq!(
            normalize(&parse(&lex(r"\dfrac{a}{b}"), ParseMode::Strict).unwrap()),
            parse(&lex(r"\frac{a}{b}"), ParseMode::Strict).unwrap()
        );
        assert_eq!(norm(r"a\le b\ne c\to d"), r"a\leq b\neq c\rightarrow d");
    }

    #[test]
    fn flattening() {
        assert_eq!(norm("{{x}}"), "x");
        assert_eq!(norm(r"\frac{{a}}{{bc}}"), r"\frac{a}{bc}");
        assert_eq!(norm("{x}^2"), "x^{2}");
        assert_eq!(norm("a{bc}"), "a{bc}");
    }

    #[test]
    fn spacing_dropped() {
        assert_eq!(norm(r"a\,b\quad c\hspace{1em}d"), "abcd");
        assert_eq!(norm(r"\displaystyle\sum\limits_{i=1}^n i"), r"\sum_{i=1}^{n}i");
        assert_eq!(norm(r"x^\,"), "x^{}");
    }

    #[test]
    fn keeps_separator_braces() {
        assert_eq!(norm(r"\begin{matrix}{&}\end{matrix}"), r"\begin{matrix}{&}\end{matrix}");
    }

    #[test]
    fn idempotent_on_examples() {
        for s in [r"\dfrac{a}{b}", "{{x}}", r"\sum\limits_{i}x", r"\left( {a} \, \right)", r"x_{{i}}^{{}}"] {
            let once = normalize(&parse(&lex(s), ParseMode::Strict).unwrap());
            assert_eq!(normalize(&once), once, "{s}");
        }
    }
}
