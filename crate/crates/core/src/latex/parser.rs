use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::ast::{ExprNode, MathToken, Row, Span, TokenKind};
use crate::grammar::Grammar;

/// Maximum nesting of groups, environments, delimiters and command
/// arguments accepted by the parser.
pub const MAX_NESTING: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    /// Reject malformed input with the first error.
    Strict,
    /// Repair malformed input and report each repair as a diagnostic.
    #[default]
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("unbalanced brace at {}..{}", span.start, span.end)]
    UnbalancedBrace { span: Span },
    #[error("environment `{name}` opened at {}..{} is not closed", span.start, span.end)]
    UnclosedEnvironment { name: String, span: Span },
    #[error("`\\end{{{name}}}` at {}..{} has no matching `\\begin`", span.start, span.end)]
    UnmatchedEnd { name: String, span: Span },
    #[error("unbalanced `\\left`/`\\right` at {}..{}", span.start, span.end)]
    UnbalancedDelimiter { span: Span },
    #[error("optional argument opened at {}..{} is not closed", span.start, span.end)]
    UnclosedBracket { span: Span },
    #[error("`{command}` at {}..{} is missing an argument", span.start, span.end)]
    MissingArgument { command: String, span: Span },
    #[error("script at {}..{} has no base", span.start, span.end)]
    DanglingScript { span: Span },
    #[error("double script at {}..{}", span.start, span.end)]
    DoubleScript { span: Span },
    #[error("nesting deeper than {MAX_NESTING} at {}..{}", span.start, span.end)]
    TooDeep { span: Span },
}

impl ParseError {
    pub fn code(&self) -> &'static str {
        match self {
            ParseError::UnbalancedBrace { .. } => "unbalanced_brace",
            ParseError::UnclosedEnvironment { .. } => "unclosed_environment",
            ParseError::UnmatchedEnd { .. } => "unmatched_end",
            ParseError::UnbalancedDelimiter { .. } => "unbalanced_delimiter",
            ParseError::UnclosedBracket { .. } => "unclosed_bracket",
            ParseError::MissingArgument { .. } => "missing_argument",
            ParseError::DanglingScript { .. } => "dangling_script",
            ParseError::DoubleScript { .. } => "double_script",
            ParseError::TooDeep { .. } => "too_deep",
        }
    }

    pub fn span(&self) -> Span {
        match self {
            ParseError::UnbalancedBrace { span }
            | ParseError::UnclosedEnvironment { span, .. }
            | ParseError::UnmatchedEnd { span, .. }
            | ParseError::UnbalancedDelimiter { span }
            | ParseError::UnclosedBracket { span }
            | ParseError::MissingArgument { span, .. }
            | ParseError::DanglingScript { span }
            | ParseError::DoubleScript { span }
            | ParseError::TooDeep { span } => *span,
        }
    }
}

/// A repair applied by lenient parsing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: String,
    pub message: String,
    pub span: Span,
}

impl From<&ParseError> for Diagnostic {
    fn from(e: &ParseError) -> Self {
        Diagnostic {
            code: e.code().to_string(),
            message: e.to_string(),
            span: e.span(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseOutput {
    pub tree: ExprNode,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses tokens with the shipped grammar.
pub fn parse(tokens: &[MathToken], mode: ParseMode) -> Result<ExprNode, ParseError> {
    parse_with(tokens, mode, Grammar::shipped()).map(|out| out.tree)
}

/// Parses tokens with an explicit grammar, returning lenient repairs.
///
/// In strict mode the first problem is returned as an error. In lenient mode
/// the call never fails, and the diagnostics are empty exactly when a strict
/// parse of the same tokens would succeed.
pub fn parse_with(
    tokens: &[MathToken],
    mode: ParseMode,
    grammar: &Grammar,
) -> Result<ParseOutput, ParseError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        mode,
        grammar,
        scopes: vec![Scope::Top],
        depth: 0,
        diagnostics: Vec::new(),
    };
    let items = p.items()?;
    debug_assert!(p.pos == tokens.len());
    Ok(ParseOutput {
        tree: ExprNode::seq(items),
        diagnostics: p.diagnostics,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Scope {
    Top,
    Group,
    Env(String),
    Left,
    Bracket,
}

struct Parser<'a> {
    tokens: &'a [MathToken],
    pos: usize,
    mode: ParseMode,
    grammar: &'a Grammar,
    scopes: Vec<Scope>,
    depth: usize,
    diagnostics: Vec<Diagnostic>,
}

fn is_cmd(tok: Option<&MathToken>, name: &str) -> bool {
    matches!(tok.map(|t| &t.kind), Some(TokenKind::Command(n)) if n == name)
}

fn is_symbol(tok: Option<&MathToken>, lexeme: &str) -> bool {
    matches!(tok.map(|t| &t.kind), Some(TokenKind::Symbol(s)) if s == lexeme)
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a MathToken> {
        self.tokens.get(self.pos)
    }

    fn scope(&self) -> &Scope {
        self.scopes.last().expect("scope stack is never empty")
    }

    fn in_stack(&self, s: &Scope) -> bool {
        self.scopes.contains(s)
    }

    /// Records a problem: fails in strict mode, logs it in lenient mode.
    fn report(&mut self, err: ParseError) -> Result<(), ParseError> {
        match self.mode {
            ParseMode::Strict => Err(err),
            ParseMode::Lenient => {
                self.diagnostics.push(Diagnostic::from(&err));
                Ok(())
            }
        }
    }

    /// True if the next token cannot start an argument.
    fn at_arg_boundary(&self) -> bool {
        let tok = self.peek();
        match tok.map(|t| &t.kind) {
            None => true,
            Some(
                TokenKind::CloseBrace
                | TokenKind::EndEnv(_)
                | TokenKind::RowBreak
                | TokenKind::Ampersand
                | TokenKind::Superscript
                | TokenKind::Subscript,
            ) => true,
            Some(TokenKind::Command(n)) if n == "right" => true,
            Some(TokenKind::Symbol(s)) if s == "]" => *self.scope() == Scope::Bracket,
            _ => false,
        }
    }

    /// Parses items until the terminator of the current scope (or of an
    /// enclosing scope) without consuming it.
    fn items(&mut self) -> Result<Vec<ExprNode>, ParseError> {
        let mut out: Vec<ExprNode> = Vec::new();
        while let Some(tok) = self.peek() {
            match &tok.kind {
                TokenKind::CloseBrace => {
                    if self.in_stack(&Scope::Group) {
                        break;
                    }
                    self.report(ParseError::UnbalancedBrace { span: tok.span })?;
                    self.pos += 1;
                }
                TokenKind::EndEnv(name) => {
                    if self.in_stack(&Scope::Env(name.clone())) {
                        break;
                    }
                    self.report(ParseError::UnmatchedEnd { name: name.clone(), span: tok.span })?;
                    self.pos += 1;
                }
                TokenKind::Command(n) if n == "right" => {
                    if self.in_stack(&Scope::Left) {
                        break;
                    }
                    self.report(ParseError::UnbalancedDelimiter { span: tok.span })?;
                    self.pos += 1;
                    if self.delimiter_follows() {
                        self.pos += 1;
                    }
                }
                TokenKind::Symbol(s) if s == "]" && *self.scope() == Scope::Bracket => break,
                TokenKind::RowBreak | TokenKind::Ampersand => {
                    if matches!(self.scope(), Scope::Env(_)) {
                        break;
                    }
                    self.pos += 1;
                    out.push(ExprNode::symbol(tok.lexeme()));
                }
                TokenKind::Superscript | TokenKind::Subscript => self.script(&mut out)?,
                _ => {
                    if let Some(node) = self.atom()? {
                        out.push(node);
                    }
                }
            }
        }
        Ok(out)
    }

    fn script(&mut self, out: &mut Vec<ExprNode>) -> Result<(), ParseError> {
        let tok = &self.tokens[self.pos];
        let is_sup = tok.kind == TokenKind::Superscript;
        let span = tok.span;
        self.pos += 1;
        let arg = if self.at_arg_boundary() {
            let command = if is_sup { "^" } else { "_" };
            self.report(ParseError::MissingArgument { command: command.into(), span })?;
            ExprNode::group(Vec::new())
        } else {
            match self.atom()? {
                Some(ExprNode::Group { mut children }) if children.len() == 1 => children.pop().unwrap(),
                Some(node) => node,
                None => ExprNode::group(Vec::new()),
            }
        };
        let script = match out.pop() {
            Some(ExprNode::Script { base, mut sub, mut sup }) => {
                let slot = if is_sup { &mut sup } else { &mut sub };
                if slot.is_some() {
                    self.report(ParseError::DoubleScript { span })?;
                }
                *slot = Some(Box::new(arg));
                ExprNode::Script { base, sub, sup }
            }
            prev => {
                let base = match prev {
                    Some(node) => node,
                    None => {
                        self.report(ParseError::DanglingScript { span })?;
                        ExprNode::group(Vec::new())
                    }
                };
                let (sub, sup) = if is_sup { (None, Some(arg)) } else { (Some(arg), None) };
                ExprNode::script(base, sub, sup)
            }
        };
        out.push(script);
        Ok(())
    }

    /// Enters a nested scope, or reports that the nesting limit is reached.
    fn enter(&mut self, scope: Scope, span: Span) -> Result<bool, ParseError> {
        if self.scopes.len() > MAX_NESTING || self.depth > MAX_NESTING {
            self.report(ParseError::TooDeep { span })?;
            return Ok(false);
        }
        self.scopes.push(scope);
        Ok(true)
    }

    fn leave(&mut self) {
        self.scopes.pop();
    }

    /// Parses one atom. Returns `None` when the token was dropped by a
    /// lenient repair.
    fn atom(&mut self) -> Result<Option<ExprNode>, ParseError> {
        let Some(tok) = self.peek() else {
            return Ok(None);
        };
        match &tok.kind {
            TokenKind::OpenBrace => {
                self.pos += 1;
                if !self.enter(Scope::Group, tok.span)? {
                    return Ok(None);
                }
                let children = self.items()?;
                self.leave();
                self.expect_close_brace(tok.span)?;
                Ok(Some(ExprNode::Group { children }))
            }
            TokenKind::BeginEnv(name) => self.environment(name, tok.span).map(Some),
            TokenKind::Command(name) if name == "text" => self.text(tok.span).map(Some),
            TokenKind::Command(name) => {
                if self.depth > MAX_NESTING {
                    self.report(ParseError::TooDeep { span: tok.span })?;
                    self.pos += 1;
                    return Ok(Some(ExprNode::symbol(tok.lexeme())));
                }
                self.depth += 1;
                let node = self.command(name, tok);
                self.depth -= 1;
                node
            }
            _ => {
                self.pos += 1;
                Ok(Some(ExprNode::symbol(tok.lexeme())))
            }
        }
    }

    fn expect_close_brace(&mut self, open: Span) -> Result<(), ParseError> {
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::CloseBrace)) {
            self.pos += 1;
        } else {
            self.report(ParseError::UnbalancedBrace { span: open })?;
        }
        Ok(())
    }

    fn command(&mut self, name: &str, tok: &'a MathToken) -> Result<Option<ExprNode>, ParseError> {
        if name == "left" {
            return self.delimited(tok.span);
        }
        let Some(arity) = self.grammar.arity(name).filter(|a| a.required > 0 || a.optional) else {
            self.pos += 1;
            return Ok(Some(ExprNode::symbol(tok.lexeme())));
        };
        self.pos += 1;
        let optional = if arity.optional && is_symbol(self.peek(), "[") {
            self.bracket()?
        } else {
            None
        };
        let mut args = Vec::with_capacity(arity.required);
        for _ in 0..arity.required {
            args.push(self.argument(&tok.lexeme(), tok.span)?);
        }
        let node = match (name, args.len()) {
            ("frac", 2) if optional.is_none() => {
                let den = args.pop().unwrap();
                let num = args.pop().unwrap();
                ExprNode::frac(num, den)
            }
            ("sqrt", 1) => ExprNode::Radical {
                index: optional.map(Box::new),
                radicand: Box::new(args.pop().unwrap()),
            },
            _ => ExprNode::Command {
                name: name.to_string(),
                args,
                optional_arg: optional.map(Box::new),
            },
        };
        Ok(Some(node))
    }

    /// A required argument; bare atoms are wrapped into a group.
    fn argument(&mut self, command: &str, span: Span) -> Result<ExprNode, ParseError> {
        if self.at_arg_boundary() {
            self.report(ParseError::MissingArgument { command: command.to_string(), span })?;
            return Ok(ExprNode::group(Vec::new()));
        }
        Ok(match self.atom()? {
            Some(g @ ExprNode::Group { .. }) => g,
            Some(node) => ExprNode::group(vec![node]),
            None => ExprNode::group(Vec::new()),
        })
    }

    /// `[ ... ]` following a command that accepts an optional argument.
    fn bracket(&mut self) -> Result<Option<ExprNode>, ParseError> {
        let open = self.tokens[self.pos].span;
        self.pos += 1;
        if !self.enter(Scope::Bracket, open)? {
            return Ok(None);
        }
        let children = self.items()?;
        self.leave();
        if is_symbol(self.peek(), "]") {
            self.pos += 1;
        } else {
            self.report(ParseError::UnclosedBracket { span: open })?;
        }
        Ok(Some(ExprNode::group(children)))
    }

    fn delimiter_follows(&self) -> bool {
        match self.peek().map(|t| &t.kind) {
            Some(TokenKind::Symbol(s)) => s != "\\ ",
            // `\text` owns the raw token after it, so it is never a delimiter
            Some(TokenKind::Command(n)) => !matches!(n.as_str(), "left" | "right" | "text"),
            _ => false,
        }
    }

    fn delimiter(&mut self, command: &str, span: Span) -> Result<String, ParseError> {
        if self.delimiter_follows() {
            let lexeme = self.tokens[self.pos].lexeme();
            self.pos += 1;
            Ok(lexeme)
        } else {
            self.report(ParseError::MissingArgument { command: command.to_string(), span })?;
            Ok(".".to_string())
        }
    }

    fn delimited(&mut self, open: Span) -> Result<Option<ExprNode>, ParseError> {
        self.pos += 1;
        let left = self.delimiter("\\left", open)?;
        if !self.enter(Scope::Left, open)? {
            return Ok(Some(ExprNode::symbol(left)));
        }
        let children = self.items()?;
        self.leave();
        let right = if is_cmd(self.peek(), "right") {
            let span = self.tokens[self.pos].span;
            self.pos += 1;
            self.delimiter("\\right", span)?
        } else {
            self.report(ParseError::UnbalancedDelimiter { span: open })?;
            ".".to_string()
        };
        Ok(Some(ExprNode::Delimited {
            left,
            body: Box::new(ExprNode::seq(children)),
            right,
        }))
    }

    fn text(&mut self, span: Span) -> Result<ExprNode, ParseError> {
        self.pos += 1;
        if matches!(self.peek().map(|t| &t.kind), Some(TokenKind::OpenBrace)) {
            let open = self.tokens[self.pos].span;
            self.pos += 1;
            let mut content = String::new();
            if let Some(TokenKind::Symbol(s)) = self.peek().map(|t| &t.kind) {
                content = s.clone();
                self.pos += 1;
            }
            self.expect_close_brace(open)?;
            return Ok(ExprNode::Text { content });
        }
        if self.at_arg_boundary() || is_cmd(self.peek(), "text") {
            self.report(ParseError::MissingArgument { command: "\\text".into(), span })?;
            return Ok(ExprNode::Text { content: String::new() });
        }
        let content = self.tokens[self.pos].lexeme();
        self.pos += 1;
        Ok(ExprNode::Text { content })
    }

    fn environment(&mut self, name: &str, open: Span) -> Result<ExprNode, ParseError> {
        self.pos += 1;
        if !self.enter(Scope::Env(name.to_string()), open)? {
            return Ok(ExprNode::symbol(format!("\\begin{{{name}}}")));
        }
        let arg = match self.grammar.env(name) {
            Some(spec) if spec.takes_arg => {
                Some(Box::new(self.argument(&format!("\\begin{{{name}}}"), open)?))
            }
            _ => None,
        };
        let mut rows = Vec::new();
        let mut cells = Vec::new();
        loop {
            let items = self.items()?;
            cells.push(ExprNode::seq(items));
            match self.peek().map(|t| &t.kind) {
                Some(TokenKind::Ampersand) => self.pos += 1,
                Some(TokenKind::RowBreak) => {
                    self.pos += 1;
                    rows.push(Row::new(std::mem::take(&mut cells)));
                }
                Some(TokenKind::EndEnv(n)) if n == name => {
                    self.pos += 1;
                    break;
                }
                _ => {
                    self.report(ParseError::UnclosedEnvironment { name: name.to_string(), span: open })?;
                    break;
                }
            }
        }
        rows.push(Row::new(cells));
        self.leave();
        Ok(ExprNode::Environment { name: name.to_string(), arg, rows })
    }
}
