use super::ast::ExprNode;

/// Renders a tree as canonical LaTeX.
///
/// Scripts are always braced with the subscript first, arguments are always
/// braced, and a single space separates a control word from a following
/// letter. Parsing the output yields the same tree.
pub fn render(tree: &ExprNode) -> String {
    let mut w = Writer::default();
    w.node(tree);
    w.out
}

#[derive(Default)]
struct Writer {
    out: String,
    after_control_word: bool,
}

fn is_control_word(lexeme: &str) -> bool {
    let mut chars = lexeme.chars();
    chars.next() == Some('\\') && {
        let rest = chars.as_str();
        !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_alphabetic())
    }
}

impl Writer {
    fn push(&mut self, s: &str) {
        if s.is_empty() {
            return;
        }
        if self.after_control_word && s.starts_with(|c: char| c.is_ascii_alphabetic()) {
            self.out.push(' ');
        }
        self.out.push_str(s);
        self.after_control_word = is_control_word(s);
    }

    fn children(&mut self, children: &[ExprNode]) {
        for c in children {
            self.node(c);
        }
    }

    /// `{...}` around an argument slot that holds a group.
    fn arg(&mut self, node: &ExprNode) {
        self.push("{");
        match node {
            ExprNode::Group { children } => self.children(children),
            other => self.node(other),
        }
        self.push("}");
    }

    /// Script slots: a group with one child keeps its own braces, since the
    /// parser unwraps exactly one level.
    fn script_slot(&mut self, marker: &str, node: &ExprNode) {
        self.push(marker);
        match node {
            ExprNode::Group { children } if children.len() != 1 => {
                self.push("{");
                self.children(children);
                self.push("}");
            }
            other => {
                self.push("{");
                self.node(other);
                self.push("}");
            }
        }
    }

    fn node(&mut self, node: &ExprNode) {
        match node {
            ExprNode::Symbol { lexeme } => self.push(lexeme),
            ExprNode::Command { name, args, optional_arg } => {
                self.push(&format!("\\{name}"));
                if let Some(opt) = optional_arg {
                    self.bracket(opt);
                }
                for a in args {
                    self.arg(a);
                }
            }
            ExprNode::Group { children } => {
                self.push("{");
                self.children(children);
                self.push("}");
            }
            ExprNode::Fraction { num, den } => {
                self.push("\\frac");
                self.arg(num);
                self.arg(den);
            }
            ExprNode::Radical { index, radicand } => {
                self.push("\\sqrt");
                if let Some(idx) = index {
                    self.bracket(idx);
                }
                self.arg(radicand);
            }
            ExprNode::Script { base, sub, sup } => {
                self.node(base);
                if let Some(s) = sub {
                    self.script_slot("_", s);
                }
                if let Some(s) = sup {
                    self.script_slot("^", s);
                }
            }
            ExprNode::Environment { name, arg, rows } => {
                self.push(&format!("\\begin{{{name}}}"));
                if let Some(a) = arg {
                    self.arg(a);
                }
                for (i, row) in rows.iter().enumerate() {
                    if i > 0 {
                        self.push("\\\\");
                    }
                    for (j, cell) in row.cells.iter().enumerate() {
                        if j > 0 {
                            self.push("&");
                        }
                        self.node(cell);
                    }
                }
                self.push(&format!("\\end{{{name}}}"));
            }
            ExprNode::Text { content } => {
                self.push("\\text");
                self.push("{");
                self.out.push_str(content);
                self.after_control_word = false;
                self.push("}");
            }
            ExprNode::Delimited { left, body, right } => {
                self.push("\\left");
                self.push(left);
                self.node(body);
                self.push("\\right");
                self.push(right);
            }
            ExprNode::Sequence { children } => self.children(children),
        }
    }

    fn bracket(&mut self, node: &ExprNode) {
        self.push("[");
        match node {
            ExprNode::Group { children } => self.children(children),
            other => self.node(other),
        }
        self.push("]");
    }
}
