use std::collections::BTreeSet;

use super::ast::{ExprNode, MathToken, TokenKind};
use crate::grammar::{EnvKind, Grammar};

/// Maximum root-to-leaf edge count. Environment rows count as a level
/// between the environment and its cells.
pub fn depth(tree: &ExprNode) -> usize {
    match tree {
        ExprNode::Environment { arg, rows, .. } => {
            let arg_depth = arg.as_deref().map_or(0, |a| 1 + depth(a));
            let row_depth = rows
                .iter()
                .map(|r| 1 + r.cells.iter().map(|c| 1 + depth(c)).max().unwrap_or(0))
                .max()
                .unwrap_or(0);
            arg_depth.max(row_depth)
        }
        other => other.children().into_iter().map(|c| 1 + depth(c)).max().unwrap_or(0),
    }
}

/// Visual line count under the shipped environment table.
pub fn count_lines(tree: &ExprNode) -> usize {
    count_lines_with(tree, Grammar::shipped())
}

/// Number of rows of the outermost multi-line environment, or 1 when there
/// is none. Matrix-family environments are single-line content and are not
/// searched.
pub fn count_lines_with(tree: &ExprNode, grammar: &Grammar) -> usize {
    match tree {
        ExprNode::Environment { name, rows, .. } => match grammar.env_kind(name) {
            EnvKind::Multiline => rows.len().max(1),
            EnvKind::Matrix => 1,
            EnvKind::Other => children_lines(tree, grammar),
        },
        _ => children_lines(tree, grammar),
    }
}

fn children_lines(tree: &ExprNode, grammar: &Grammar) -> usize {
    tree.children()
        .into_iter()
        .map(|c| count_lines_with(c, grammar))
        .max()
        .unwrap_or(1)
}

/// Distinct control words and environment names in a token stream.
pub fn distinct_commands(tokens: &[MathToken]) -> usize {
    tokens
        .iter()
        .filter_map(|t| match &t.kind {
            TokenKind::Command(name) => Some(format!("\\{name}")),
            TokenKind::BeginEnv(name) => Some(format!("\\begin{{{name}}}")),
            _ => None,
        })
        .collect::<BTreeSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latex::{lex, parse, ParseMode};

    fn tree(s: &str) -> ExprNode {
        parse(&lex(s), ParseMode::Strict).unwrap()
    }

    #[test]
    fn depth_examples() {
        let g = |c: Vec<ExprNode>| ExprNode::group(c);
        let s = ExprNode::symbol;
        assert_eq!(depth(&s("x")), 0);
        assert_eq!(depth(&ExprNode::frac(g(vec![s("a")]), g(vec![s("b")]))), 2);
        let nested = ExprNode::frac(
            g(vec![ExprNode::frac(g(vec![s("a")]), g(vec![s("b")]))]),
            g(vec![s("c")]),
        );
        assert_eq!(depth(&nested), 4);
        // env -> row -> cell symbol
        assert_eq!(depth(&tree(r"\begin{gather}a\\b\end{gather}")), 2);
    }

    #[test]
    fn line_examples() {
        assert_eq!(count_lines(&tree("a+b")), 1);
        assert_eq!(count_lines(&tree(r"\begin{gather}a\\b\end{gather}")), 2);
        assert_eq!(
            count_lines(&tree(r"\begin{align}a\\ \begin{pmatrix}p\\q\end{pmatrix}\end{align}")),
            2
        );
        assert_eq!(count_lines(&tree(r"\begin{pmatrix}p\\q\\r\end{pmatrix}")), 1);
        assert_eq!(count_lines(&tree(r"\frac{\begin{cases}a\\b\\c\end{cases}}{2}")), 3);
        assert_eq!(count_lines(&tree(r"\begin{equation}\begin{split}a\\b\end{split}\end{equation}")), 2);
    }

    #[test]
    fn distinct_command_count() {
        assert_eq!(distinct_commands(&lex(r"\frac{\alpha}{\alpha}\begin{cases}a\end{cases}")), 3);
    }
}
