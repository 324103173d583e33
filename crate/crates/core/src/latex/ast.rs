use serde::{Deserialize, Serialize};

/// Half-open byte range `[start, end)` into the source string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[usize; 2]", into = "[usize; 2]")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

impl From<[usize; 2]> for Span {
    fn from(v: [usize; 2]) -> Self {
        Span::new(v[0], v[1])
    }
}

impl From<Span> for [usize; 2] {
    fn from(s: Span) -> Self {
        [s.start, s.end]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum TokenKind {
    /// Control word such as `\frac`; the name excludes the backslash.
    Command(String),
    OpenBrace,
    CloseBrace,
    Superscript,
    Subscript,
    Ampersand,
    RowBreak,
    /// Any other lexeme: single characters, control symbols like `\{`,
    /// and the raw content of `\text{...}`.
    Symbol(String),
    BeginEnv(String),
    EndEnv(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MathToken {
    pub kind: TokenKind,
    pub span: Span,
}

impl MathToken {
    /// Surface lexeme of the token in canonical spelling.
    pub fn lexeme(&self) -> String {
        match &self.kind {
            TokenKind::Command(name) => format!("\\{name}"),
            TokenKind::OpenBrace => "{".into(),
            TokenKind::CloseBrace => "}".into(),
            TokenKind::Superscript => "^".into(),
            TokenKind::Subscript => "_".into(),
            TokenKind::Ampersand => "&".into(),
            TokenKind::RowBreak => "\\\\".into(),
            TokenKind::Symbol(s) => s.clone(),
            TokenKind::BeginEnv(name) => format!("\\begin{{{name}}}"),
            TokenKind::EndEnv(name) => format!("\\end{{{name}}}"),
        }
    }
}

/// Syntax tree of a math expression.
///
/// Trees produced by the parser are in a canonical shape that the rest of the
/// crate relies on:
/// - command, fraction and radical arguments are always `Group` nodes;
/// - `Sequence` never has exactly one child (a single item stands alone);
/// - a `Script` base is never itself a `Script`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ExprNode {
    Symbol {
        lexeme: String,
    },
    Command {
        name: String,
        args: Vec<ExprNode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        optional_arg: Option<Box<ExprNode>>,
    },
    Group {
        children: Vec<ExprNode>,
    },
    #[serde(rename = "frac")]
    Fraction {
        num: Box<ExprNode>,
        den: Box<ExprNode>,
    },
    #[serde(rename = "sqrt")]
    Radical {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<Box<ExprNode>>,
        radicand: Box<ExprNode>,
    },
    Script {
        base: Box<ExprNode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sub: Option<Box<ExprNode>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        sup: Option<Box<ExprNode>>,
    },
    #[serde(rename = "env")]
    Environment {
        name: String,
        /// Column or count specification, e.g. `{cc}` of `array`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        arg: Option<Box<ExprNode>>,
        rows: Vec<Row>,
    },
    Text {
        content: String,
    },
    Delimited {
        left: String,
        body: Box<ExprNode>,
        right: String,
    },
    Sequence {
        children: Vec<ExprNode>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Row {
    pub cells: Vec<ExprNode>,
}

impl Row {
    pub fn new(cells: Vec<ExprNode>) -> Self {
        Row { cells }
    }
}

impl ExprNode {
    pub fn symbol(lexeme: impl Into<String>) -> Self {
        ExprNode::Symbol {
            lexeme: lexeme.into(),
        }
    }

    pub fn group(children: Vec<ExprNode>) -> Self {
        ExprNode::Group { children }
    }

    pub fn frac(num: ExprNode, den: ExprNode) -> Self {
        ExprNode::Fraction {
            num: Box::new(num),
            den: Box::new(den),
        }
    }

    pub fn script(base: ExprNode, sub: Option<ExprNode>, sup: Option<ExprNode>) -> Self {
        ExprNode::Script {
            base: Box::new(base),
            sub: sub.map(Box::new),
            sup: sup.map(Box::new),
        }
    }

    pub fn env(name: impl Into<String>, rows: Vec<Vec<ExprNode>>) -> Self {
        ExprNode::Environment {
            name: name.into(),
            arg: None,
            rows: rows.into_iter().map(Row::new).collect(),
        }
    }

    /// Wraps a list of items the way the parser does for top-level input,
    /// environment cells and delimited bodies: one item stands alone, any
    /// other count becomes a `Sequence`.
    pub fn seq(mut children: Vec<ExprNode>) -> Self {
        if children.len() == 1 {
            children.pop().unwrap()
        } else {
            ExprNode::Sequence { children }
        }
    }

    pub fn is_empty_group(&self) -> bool {
        matches!(self, ExprNode::Group { children } if children.is_empty())
    }

    /// Direct children in sibling order. Environment rows are not nodes of
    /// their own here; see [`crate::latex::depth`] for how they are counted.
    pub fn children(&self) -> Vec<&ExprNode> {
        match self {
            ExprNode::Symbol { .. } | ExprNode::Text { .. } => Vec::new(),
            ExprNode::Command {
                args, optional_arg, ..
            } => optional_arg.iter().map(|b| b.as_ref()).chain(args.iter()).collect(),
            ExprNode::Group { children } | ExprNode::Sequence { children } => {
                children.iter().collect()
            }
            ExprNode::Fraction { num, den } => vec![num, den],
            ExprNode::Radical { index, radicand } => index
                .iter()
                .map(|b| b.as_ref())
                .chain(std::iter::once(radicand.as_ref()))
                .collect(),
            ExprNode::Script { base, sub, sup } => std::iter::once(base.as_ref())
                .chain(sub.iter().map(|b| b.as_ref()))
                .chain(sup.iter().map(|b| b.as_ref()))
                .collect(),
            ExprNode::Environment { arg, rows, .. } => arg
                .iter()
                .map(|b| b.as_ref())
                .chain(rows.iter().flat_map(|r| r.cells.iter()))
                .collect(),
            ExprNode::Delimited { body, .. } => vec![body],
        }
    }

    /// Number of nodes in the tree, counting environment rows as nodes.
    pub fn node_count(&self) -> usize {
        let rows = match self {
            ExprNode::Environment { rows, .. } => rows.len(),
            _ => 0,
        };
        1 + rows + self.children().into_iter().map(ExprNode::node_count).sum::<usize>()
    }
}
