//! Structured token serialization of syntax trees.
//!
//! Every structural slot of a tree is bracketed by an open and a close
//! token carrying its role, and leaf lexemes appear in between in sibling
//! order. The sequence is flat, but parent-child relations, node types and
//! sibling order can all be read back from it.
//!
//! Slot layout:
//!
//! | node        | tokens                                                        |
//! |-------------|---------------------------------------------------------------|
//! | symbol      | the lexeme as a leaf                                          |
//! | group       | `<grp>` items `</grp>`                                        |
//! | fraction    | `<frac><num>`..`</num><den>`..`</den></frac>`                 |
//! | radical     | `<rad>` [`<idx>`..`</idx>`] `<body>`..`</body></rad>`         |
//! | script      | `<scr><base>`..`</base>` [`<sub>`..] [`<sup>`..] `</scr>`     |
//! | command     | `<cmd:NAME>` [`<opt>`..`</opt>`] (`<grp>`..`</grp>`)* `</cmd:NAME>` |
//! | environment | `<env:NAME>` [`<opt>`..] (`<row>` (`<cell>`..`</cell>`)+ `</row>`)+ |
//! | text        | `<text>` words `</text>`                                      |
//! | delimited   | `<delim:L:R>` items `</delim:L:R>`                            |
//! | sequence    | `<seq>` items `</seq>` (only where a sequence is not implied) |
//!
//! Argument slots (`num`, `den`, `idx`, `body`, `opt` and command `grp`)
//! hold the children of the argument group. Script slots hold their content
//! directly when it is a single node and the group's children otherwise.
//! Cells, delimited bodies and the top level are item lists.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latex::{parse_str, render, ExprNode, ParseError, ParseMode, Row};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SmlRole {
    Frac,
    Num,
    Den,
    Rad,
    Idx,
    Body,
    Sup,
    Sub,
    Base,
    Scr,
    Grp,
    Seq,
    Env(String),
    Row,
    Cell,
    Cmd(String),
    Opt,
    Text,
    Delim(String, String),
}

impl SmlRole {
    /// Roles without a payload, in a fixed order.
    pub const FIXED: [SmlRole; 15] = [
        SmlRole::Frac,
        SmlRole::Num,
        SmlRole::Den,
        SmlRole::Rad,
        SmlRole::Idx,
        SmlRole::Body,
        SmlRole::Sup,
        SmlRole::Sub,
        SmlRole::Base,
        SmlRole::Scr,
        SmlRole::Grp,
        SmlRole::Seq,
        SmlRole::Row,
        SmlRole::Cell,
        SmlRole::Opt,
    ];

    pub fn open_marker(&self) -> String {
        format!("<{self}>")
    }

    pub fn close_marker(&self) -> String {
        format!("</{self}>")
    }

    /// Parses the inside of a marker, e.g. `frac` or `env:gather`.
    pub fn parse(s: &str) -> Option<SmlRole> {
        let fixed = match s {
            "frac" => Some(SmlRole::Frac),
            "num" => Some(SmlRole::Num),
            "den" => Some(SmlRole::Den),
            "rad" => Some(SmlRole::Rad),
            "idx" => Some(SmlRole::Idx),
            "body" => Some(SmlRole::Body),
            "sup" => Some(SmlRole::Sup),
            "sub" => Some(SmlRole::Sub),
            "base" => Some(SmlRole::Base),
            "scr" => Some(SmlRole::Scr),
            "grp" => Some(SmlRole::Grp),
            "seq" => Some(SmlRole::Seq),
            "row" => Some(SmlRole::Row),
            "cell" => Some(SmlRole::Cell),
            "opt" => Some(SmlRole::Opt),
            "text" => Some(SmlRole::Text),
            _ => None,
        };
        if fixed.is_some() {
            return fixed;
        }
        if let Some(name) = s.strip_prefix("env:") {
            return (!name.is_empty()).then(|| SmlRole::Env(name.to_string()));
        }
        if let Some(name) = s.strip_prefix("cmd:") {
            return (!name.is_empty()).then(|| SmlRole::Cmd(name.to_string()));
        }
        let rest = s.strip_prefix("delim:")?;
        let left_len = delimiter_len(rest)?;
        let right = rest[left_len..].strip_prefix(':')?;
        (!right.is_empty()).then(|| SmlRole::Delim(rest[..left_len].to_string(), right.to_string()))
    }

    /// Roles that a node opens, as opposed to slots inside a node.
    fn is_node(&self) -> bool {
        matches!(
            self,
            SmlRole::Frac
                | SmlRole::Rad
                | SmlRole::Scr
                | SmlRole::Grp
                | SmlRole::Seq
                | SmlRole::Env(_)
                | SmlRole::Cmd(_)
                | SmlRole::Text
                | SmlRole::Delim(..)
        )
    }
}

/// Byte length of one delimiter lexeme at the start of `s`: a control word,
/// a control symbol or a single character.
fn delimiter_len(s: &str) -> Option<usize> {
    let mut chars = s.char_indices();
    let (_, first) = chars.next()?;
    if first != '\\' {
        return Some(first.len_utf8());
    }
    let rest = &s[1..];
    let letters = rest.bytes().take_while(u8::is_ascii_alphabetic).count();
    if letters > 0 {
        return Some(1 + letters);
    }
    rest.chars().next().map(|c| 1 + c.len_utf8())
}

impl fmt::Display for SmlRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SmlRole::Frac => "frac",
            SmlRole::Num => "num",
            SmlRole::Den => "den",
            SmlRole::Rad => "rad",
            SmlRole::Idx => "idx",
            SmlRole::Body => "body",
            SmlRole::Sup => "sup",
            SmlRole::Sub => "sub",
            SmlRole::Base => "base",
            SmlRole::Scr => "scr",
            SmlRole::Grp => "grp",
            SmlRole::Seq => "seq",
            SmlRole::Row => "row",
            SmlRole::Cell => "cell",
            SmlRole::Opt => "opt",
            SmlRole::Text => "text",
            SmlRole::Env(name) => return write!(f, "env:{name}"),
            SmlRole::Cmd(name) => return write!(f, "cmd:{name}"),
            SmlRole::Delim(l, r) => return write!(f, "delim:{l}:{r}"),
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SmlToken {
    Open(SmlRole),
    Close(SmlRole),
    Leaf(String),
}

impl fmt::Display for SmlToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SmlToken::Open(r) => write!(f, "<{r}>"),
            SmlToken::Close(r) => write!(f, "</{r}>"),
            SmlToken::Leaf(v) if needs_quoting(v) => {
                f.write_str(&serde_json::to_string(v).expect("strings always serialize"))
            }
            SmlToken::Leaf(v) => f.write_str(v),
        }
    }
}

/// Leaves that could be mistaken for markers or separators in the text form
/// are written as JSON strings.
fn needs_quoting(v: &str) -> bool {
    v.is_empty() || v.starts_with('"') || (v.starts_with('<') && v.len() > 1) || v.contains(char::is_whitespace)
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct SmlSequence {
    pub tokens: Vec<SmlToken>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmlError {
    #[error("unbalanced sequence at token {position}")]
    UnbalancedSml { position: usize },
    #[error("at token {position}: expected {expected}, found {found}")]
    RoleOrderViolation {
        position: usize,
        expected: String,
        found: String,
    },
    #[error("scope <{role}> at token {position} is missing required content")]
    EmptyRequiredScope { role: String, position: usize },
    #[error("malformed token `{token}` at token {position}")]
    MalformedToken { position: usize, token: String },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl SmlError {
    pub fn code(&self) -> &'static str {
        match self {
            SmlError::UnbalancedSml { .. } => "unbalanced_sml",
            SmlError::RoleOrderViolation { .. } => "role_order_violation",
            SmlError::EmptyRequiredScope { .. } => "empty_required_scope",
            SmlError::MalformedToken { .. } => "malformed_token",
            SmlError::Parse(e) => e.code(),
        }
    }
}

/// Serializes a tree in pre-order.
///
/// Argument slots are expected to hold groups, as parsed trees do; any other
/// node in an argument slot is serialized as a one-element group.
pub fn encode_sml(tree: &ExprNode) -> SmlSequence {
    let mut e = Encoder { out: Vec::new() };
    e.container(tree);
    SmlSequence { tokens: e.out }
}

struct Encoder {
    out: Vec<SmlToken>,
}

impl Encoder {
    fn scoped(&mut self, role: SmlRole, body: impl FnOnce(&mut Self)) {
        self.out.push(SmlToken::Open(role.clone()));
        body(self);
        self.out.push(SmlToken::Close(role));
    }

    fn container(&mut self, node: &ExprNode) {
        match node {
            ExprNode::Sequence { children } => children.iter().for_each(|c| self.node(c)),
            other => self.node(other),
        }
    }

    fn arg(&mut self, role: SmlRole, node: &ExprNode) {
        self.scoped(role, |e| match node {
            ExprNode::Group { children } => children.iter().for_each(|c| e.node(c)),
            other => e.node(other),
        });
    }

    fn atom(&mut self, role: SmlRole, node: &ExprNode) {
        self.scoped(role, |e| match node {
            ExprNode::Group { children } if children.len() != 1 => children.iter().for_each(|c| e.node(c)),
            other => e.node(other),
        });
    }

    fn node(&mut self, node: &ExprNode) {
        match node {
            ExprNode::Symbol { lexeme } => self.out.push(SmlToken::Leaf(lexeme.clone())),
            ExprNode::Group { children } => self.scoped(SmlRole::Grp, |e| children.iter().for_each(|c| e.node(c))),
            ExprNode::Sequence { children } => {
                self.scoped(SmlRole::Seq, |e| children.iter().for_each(|c| e.node(c)))
            }
            ExprNode::Fraction { num, den } => self.scoped(SmlRole::Frac, |e| {
                e.arg(SmlRole::Num, num);
                e.arg(SmlRole::Den, den);
            }),
            ExprNode::Radical { index, radicand } => self.scoped(SmlRole::Rad, |e| {
                if let Some(i) = index {
                    e.arg(SmlRole::Idx, i);
                }
                e.arg(SmlRole::Body, radicand);
            }),
            ExprNode::Script { base, sub, sup } => self.scoped(SmlRole::Scr, |e| {
                e.atom(SmlRole::Base, base);
                if let Some(s) = sub {
                    e.atom(SmlRole::Sub, s);
                }
                if let Some(s) = sup {
                    e.atom(SmlRole::Sup, s);
                }
            }),
            ExprNode::Command { name, args, optional_arg } => self.scoped(SmlRole::Cmd(name.clone()), |e| {
                if let Some(o) = optional_arg {
                    e.arg(SmlRole::Opt, o);
                }
                for a in args {
                    e.arg(SmlRole::Grp, a);
                }
            }),
            ExprNode::Environment { name, arg, rows } => self.scoped(SmlRole::Env(name.clone()), |e| {
                if let Some(a) = arg {
                    e.arg(SmlRole::Opt, a);
                }
                for row in rows {
                    e.scoped(SmlRole::Row, |e| {
                        for cell in &row.cells {
                            e.scoped(SmlRole::Cell, |e| e.container(cell));
                        }
                    });
                }
            }),
            ExprNode::Text { content } => self.scoped(SmlRole::Text, |e| {
                e.out.extend(text_leaves(content).into_iter().map(SmlToken::Leaf));
            }),
            ExprNode::Delimited { left, body, right } => {
                self.scoped(SmlRole::Delim(left.clone(), right.clone()), |e| e.container(body))
            }
        }
    }
}

/// Words of a text node. Content whose spaces are not single separators
/// stays one leaf so that joining the words restores it exactly.
fn text_leaves(content: &str) -> Vec<String> {
    if content.is_empty() {
        return Vec::new();
    }
    let words: Vec<&str> = content.split(' ').collect();
    if words.iter().any(|w| w.is_empty()) {
        vec![content.to_string()]
    } else {
        words.into_iter().map(str::to_string).collect()
    }
}

/// Rebuilds the tree from a sequence.
pub fn decode_sml(seq: &SmlSequence) -> Result<ExprNode, SmlError> {
    Decoder { tokens: &seq.tokens, pos: 0 }.top()
}

/// Checks every structural rule and returns the earliest violation.
pub fn validate_sml(seq: &SmlSequence) -> Result<(), SmlError> {
    decode_sml(seq).map(|_| ())
}

struct Decoder<'a> {
    tokens: &'a [SmlToken],
    pos: usize,
}

fn describe(tok: Option<&SmlToken>) -> String {
    tok.map_or_else(|| "end of sequence".to_string(), |t| format!("`{t}`"))
}

impl Decoder<'_> {
    fn top(mut self) -> Result<ExprNode, SmlError> {
        let items = self.items()?;
        if self.pos < self.tokens.len() {
            return Err(SmlError::UnbalancedSml { position: self.pos });
        }
        Ok(ExprNode::seq(items))
    }

    fn peek(&self) -> Option<&SmlToken> {
        self.tokens.get(self.pos)
    }

    fn expect_open(&mut self, role: &SmlRole) -> Result<(), SmlError> {
        match self.peek() {
            Some(SmlToken::Open(r)) if r == role => {
                self.pos += 1;
                Ok(())
            }
            None => Err(SmlError::UnbalancedSml { position: self.pos }),
            other => Err(SmlError::RoleOrderViolation {
                position: self.pos,
                expected: format!("`{}`", role.open_marker()),
                found: describe(other),
            }),
        }
    }

    fn expect_close(&mut self, role: &SmlRole) -> Result<(), SmlError> {
        match self.peek() {
            Some(SmlToken::Close(r)) if r == role => {
                self.pos += 1;
                Ok(())
            }
            None | Some(SmlToken::Close(_)) => Err(SmlError::UnbalancedSml { position: self.pos }),
            other => Err(SmlError::RoleOrderViolation {
                position: self.pos,
                expected: format!("`{}`", role.close_marker()),
                found: describe(other),
            }),
        }
    }

    fn opens(&self, role: &SmlRole) -> bool {
        matches!(self.peek(), Some(SmlToken::Open(r)) if r == role)
    }

    /// Leaves and node scopes up to the next close token.
    fn items(&mut self) -> Result<Vec<ExprNode>, SmlError> {
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None | Some(SmlToken::Close(_)) => return Ok(out),
                Some(SmlToken::Leaf(v)) => {
                    out.push(ExprNode::symbol(v.clone()));
                    self.pos += 1;
                }
                Some(SmlToken::Open(role)) if role.is_node() => out.push(self.node()?),
                other => {
                    return Err(SmlError::RoleOrderViolation {
                        position: self.pos,
                        expected: "a leaf or a node scope".into(),
                        found: describe(other),
                    })
                }
            }
        }
    }

    /// Items of a slot, then its close token.
    fn slot(&mut self, role: SmlRole) -> Result<Vec<ExprNode>, SmlError> {
        self.expect_open(&role)?;
        let items = self.items()?;
        self.expect_close(&role)?;
        Ok(items)
    }

    fn arg(&mut self, role: SmlRole) -> Result<ExprNode, SmlError> {
        self.slot(role).map(ExprNode::group)
    }

    fn atom(&mut self, role: SmlRole) -> Result<ExprNode, SmlError> {
        let mut items = self.slot(role)?;
        Ok(if items.len() == 1 { items.pop().unwrap() } else { ExprNode::group(items) })
    }

    fn node(&mut self) -> Result<ExprNode, SmlError> {
        let start = self.pos;
        let Some(SmlToken::Open(role)) = self.peek().cloned() else {
            unreachable!("node() is only called on an open token")
        };
        self.pos += 1;
        let node = match &role {
            SmlRole::Grp => ExprNode::group(self.items()?),
            SmlRole::Seq => ExprNode::Sequence { children: self.items()? },
            SmlRole::Frac => {
                let num = self.arg(SmlRole::Num)?;
                let den = self.arg(SmlRole::Den)?;
                ExprNode::frac(num, den)
            }
            SmlRole::Rad => {
                let index = if self.opens(&SmlRole::Idx) { Some(Box::new(self.arg(SmlRole::Idx)?)) } else { None };
                let radicand = Box::new(self.arg(SmlRole::Body)?);
                ExprNode::Radical { index, radicand }
            }
            SmlRole::Scr => {
                let base = self.atom(SmlRole::Base)?;
                let sub = if self.opens(&SmlRole::Sub) { Some(self.atom(SmlRole::Sub)?) } else { None };
                let sup = if self.opens(&SmlRole::Sup) { Some(self.atom(SmlRole::Sup)?) } else { None };
                if sub.is_none() && sup.is_none() {
                    return Err(SmlError::EmptyRequiredScope { role: role.to_string(), position: start });
                }
                ExprNode::script(base, sub, sup)
            }
            SmlRole::Cmd(name) => {
                let optional_arg =
                    if self.opens(&SmlRole::Opt) { Some(Box::new(self.arg(SmlRole::Opt)?)) } else { None };
                let mut args = Vec::new();
                while self.opens(&SmlRole::Grp) {
                    args.push(self.arg(SmlRole::Grp)?);
                }
                ExprNode::Command { name: name.clone(), args, optional_arg }
            }
            SmlRole::Env(name) => {
                let arg = if self.opens(&SmlRole::Opt) { Some(Box::new(self.arg(SmlRole::Opt)?)) } else { None };
                let mut rows = Vec::new();
                while self.opens(&SmlRole::Row) {
                    let row_start = self.pos;
                    self.pos += 1;
                    let mut cells = Vec::new();
                    while self.opens(&SmlRole::Cell) {
                        cells.push(ExprNode::seq(self.slot(SmlRole::Cell)?));
                    }
                    if cells.is_empty() {
                        return Err(SmlError::EmptyRequiredScope { role: "row".into(), position: row_start });
                    }
                    self.expect_close(&SmlRole::Row)?;
                    rows.push(Row::new(cells));
                }
                if rows.is_empty() {
                    return Err(SmlError::EmptyRequiredScope { role: role.to_string(), position: start });
                }
                ExprNode::Environment { name: name.clone(), arg, rows }
            }
            SmlRole::Text => {
                let mut words = Vec::new();
                while let Some(SmlToken::Leaf(w)) = self.tokens.get(self.pos) {
                    words.push(w.as_str());
                    self.pos += 1;
                }
                ExprNode::Text { content: words.join(" ") }
            }
            SmlRole::Delim(left, right) => ExprNode::Delimited {
                left: left.clone(),
                body: Box::new(ExprNode::seq(self.items()?)),
                right: right.clone(),
            },
            _ => unreachable!("slot roles are rejected by items()"),
        };
        self.expect_close(&role)?;
        Ok(node)
    }
}

/// Parses LaTeX and serializes the tree.
pub fn latex_to_sml(input: &str, mode: ParseMode) -> Result<SmlSequence, SmlError> {
    Ok(encode_sml(&parse_str(input, mode)?))
}

/// Decodes a sequence and renders the tree as canonical LaTeX.
pub fn sml_to_latex(seq: &SmlSequence) -> Result<String, SmlError> {
    decode_sml(seq).map(|t| render(&t))
}

impl SmlSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Space-separated text form.
    pub fn to_text(&self) -> String {
        self.tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
    }

    /// Parses the text form. Tokens are separated by whitespace; a token
    /// starting with `"` is a JSON string leaf.
    pub fn from_text(s: &str) -> Result<SmlSequence, SmlError> {
        let mut tokens = Vec::new();
        let mut rest = s.trim_start();
        while !rest.is_empty() {
            let position = tokens.len();
            let malformed = |t: &str| SmlError::MalformedToken { position, token: t.to_string() };
            if rest.starts_with('"') {
                let mut stream = serde_json::Deserializer::from_str(rest).into_iter::<String>();
                let leaf = match stream.next() {
                    Some(Ok(v)) => v,
                    _ => return Err(malformed(rest.split_whitespace().next().unwrap_or(rest))),
                };
                let used = stream.byte_offset();
                if rest[used..].starts_with(|c: char| !c.is_whitespace()) {
                    return Err(malformed(rest.split_whitespace().next().unwrap_or(rest)));
                }
                tokens.push(SmlToken::Leaf(leaf));
                rest = rest[used..].trim_start();
                continue;
            }
            let end = rest.find(char::is_whitespace).unwrap_or(rest.len());
            let word = &rest[..end];
            rest = rest[end..].trim_start();
            let token = match word.strip_prefix('<').and_then(|w| w.strip_suffix('>')) {
                Some(inner) if !inner.is_empty() => {
                    let (close, inner) = match inner.strip_prefix('/') {
                        Some(i) => (true, i),
                        None => (false, inner),
                    };
                    let role = SmlRole::parse(inner).ok_or_else(|| malformed(word))?;
                    if close {
                        SmlToken::Close(role)
                    } else {
                        SmlToken::Open(role)
                    }
                }
                _ if word.len() > 1 && word.starts_with('<') => return Err(malformed(word)),
                _ => SmlToken::Leaf(word.to_string()),
            };
            tokens.push(token);
        }
        Ok(SmlSequence { tokens })
    }
}

#[derive(Serialize, Deserialize)]
struct JsonToken {
    t: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    v: Option<String>,
}

impl Serialize for SmlToken {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let j = match self {
            SmlToken::Open(r) => JsonToken { t: "open".into(), r: Some(r.to_string()), v: None },
            SmlToken::Close(r) => JsonToken { t: "close".into(), r: Some(r.to_string()), v: None },
            SmlToken::Leaf(v) => JsonToken { t: "leaf".into(), r: None, v: Some(v.clone()) },
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SmlToken {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = JsonToken::deserialize(d)?;
        let role = || {
            let r = j.r.as_deref().ok_or_else(|| D::Error::missing_field("r"))?;
            SmlRole::parse(r).ok_or_else(|| D::Error::custom(format!("unknown role `{r}`")))
        };
        match j.t.as_str() {
            "open" => Ok(SmlToken::Open(role()?)),
            "close" => Ok(SmlToken::Close(role()?)),
            "leaf" => Ok(SmlToken::Leaf(j.v.clone().ok_or_else(|| D::Error::missing_field("v"))?)),
            other => Err(D::Error::unknown_variant(other, &["open", "close", "leaf"])),
        }
    }
}

impl Serialize for SmlSequence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for SmlSequence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Vec::<SmlToken>::deserialize(d).map(|tokens| SmlSequence { tokens })
    }
}

/// Every structural marker that can be emitted for the given grammar's
/// environments and argument-taking commands. Delimiter markers are open
/// ended and not listed.
pub fn structural_markers(grammar: &crate::grammar::Grammar) -> Vec<String> {
    let mut roles: Vec<SmlRole> = SmlRole::FIXED.to_vec();
    roles.push(SmlRole::Text);
    roles.extend(grammar.environments().map(|(n, _)| SmlRole::Env(n.to_string())));
    roles.extend(
        grammar
            .commands()
            .filter(|(n, a)| (a.required > 0 || a.optional) && !matches!(*n, "frac" | "sqrt" | "text"))
            .map(|(n, _)| SmlRole::Cmd(n.to_string())),
    );
    roles.iter().flat_map(|r| [r.open_marker(), r.close_marker()]).collect()
}
