//! LaTeX math lexing, parsing into a syntax tree, canonical rendering,
//! normalization and structural statistics.

mod ast;
mod lexer;
mod normalize;
mod parser;
mod render;
mod stats;

pub use ast::{ExprNode, MathToken, Row, Span, TokenKind};
pub use lexer::lex;
pub use normalize::{normalize, normalize_with};
pub use parser::{parse, parse_with, Diagnostic, ParseError, ParseMode, ParseOutput, MAX_NESTING};
pub use render::render;
pub use stats::{count_lines, count_lines_with, depth, distinct_commands};

/// Lexes and parses a string with the shipped grammar.
pub fn parse_str(input: &str, mode: ParseMode) -> Result<ExprNode, ParseError> {
    parse(&lex(input), mode)
}

/// Lenient parse that also returns the repairs it made.
pub fn parse_lenient(input: &str) -> ParseOutput {
    parse_with(&lex(input), ParseMode::Lenient, crate::grammar::Grammar::shipped())
        .expect("lenient parsing is total")
}
