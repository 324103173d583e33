use super::ast::{MathToken, Span, TokenKind};

/// Splits a LaTeX math string into tokens.
///
/// Lexing is total. Comments (`%` to end of line) and whitespace are
/// dropped, unknown characters become [`TokenKind::Symbol`], and the braced
/// argument of `\text` is kept verbatim (whitespace collapsed and trimmed) as
/// a single symbol so that text-mode spacing survives.
pub fn lex(input: &str) -> Vec<MathToken> {
    Lexer { src: input, pos: 0, out: Vec::new() }.run()
}

struct Lexer<'a> {
    src: &'a str,
    pos: usize,
    out: Vec<MathToken>,
}

impl Lexer<'_> {
    fn run(mut self) -> Vec<MathToken> {
        while let Some(c) = self.peek() {
            let start = self.pos;
            match c {
                '%' => self.skip_comment(),
                c if c.is_whitespace() => self.bump(),
                '\\' => self.control(),
                '{' => self.single(TokenKind::OpenBrace),
                '}' => self.single(TokenKind::CloseBrace),
                '^' => self.single(TokenKind::Superscript),
                '_' => self.single(TokenKind::Subscript),
                '&' => self.single(TokenKind::Ampersand),
                _ => {
                    self.bump();
                    self.push(TokenKind::Symbol(self.src[start..self.pos].to_string()), start);
                }
            }
        }
        self.out
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, pos: usize) -> Option<char> {
        self.src.get(pos..).and_then(|s| s.chars().next())
    }

    fn bump(&mut self) {
        if let Some(c) = self.peek() {
            self.pos += c.len_utf8();
        }
    }

    fn push(&mut self, kind: TokenKind, start: usize) {
        self.out.push(MathToken { kind, span: Span::new(start, self.pos) });
    }

    fn single(&mut self, kind: TokenKind) {
        let start = self.pos;
        self.bump();
        self.push(kind, start);
    }

    fn skip_comment(&mut self) {
        match self.src[self.pos..].find('\n') {
            Some(off) => self.pos += off,
            None => self.pos = self.src.len(),
        }
    }

    fn control(&mut self) {
        let start = self.pos;
        self.bump(); // backslash
        match self.peek() {
            None => self.push(TokenKind::Symbol("\\".into()), start),
            Some('\\') => {
                self.bump();
                self.push(TokenKind::RowBreak, start);
            }
            Some(c) if c.is_ascii_alphabetic() => {
                let name_start = self.pos;
                while self.peek().is_some_and(|c| c.is_ascii_alphabetic()) {
                    self.bump();
                }
                let name = self.src[name_start..self.pos].to_string();
                match name.as_str() {
                    "begin" | "end" => {
                        if let Some((env, end)) = self.env_name(self.pos) {
                            self.pos = end;
                            let kind = if name == "begin" {
                                TokenKind::BeginEnv(env)
                            } else {
                                TokenKind::EndEnv(env)
                            };
                            self.push(kind, start);
                        } else {
                            self.push(TokenKind::Command(name), start);
                        }
                    }
                    "text" => {
                        self.push(TokenKind::Command(name), start);
                        self.text_body();
                    }
                    _ => self.push(TokenKind::Command(name), start),
                }
            }
            Some(c) => {
                self.bump();
                let lexeme = if c.is_whitespace() { "\\ ".to_string() } else { format!("\\{c}") };
                self.push(TokenKind::Symbol(lexeme), start);
            }
        }
    }

    fn skip_ws_from(&self, mut pos: usize) -> usize {
        while let Some(c) = self.peek_at(pos) {
            if c.is_whitespace() {
                pos += c.len_utf8();
            } else {
                break;
            }
        }
        pos
    }

    /// Recognizes `{name}` (after optional whitespace) following `\begin` or
    /// `\end`; returns the name and the byte offset just past `}`.
    fn env_name(&self, from: usize) -> Option<(String, usize)> {
        let pos = self.skip_ws_from(from);
        let rest = self.src.get(pos..)?;
        let inner = rest.strip_prefix('{')?;
        let len = inner
            .bytes()
            .take_while(|b| b.is_ascii_alphabetic() || *b == b'*')
            .count();
        if len == 0 || inner.as_bytes().get(len) != Some(&b'}') {
            return None;
        }
        Some((inner[..len].to_string(), pos + 1 + len + 1))
    }

    /// Lexes the braced argument of `\text` as raw text. If the argument is
    /// not braced, normal lexing resumes. An unterminated argument runs to
    /// the end of input; inner groups left open are closed so the content
    /// stays balanced.
    fn text_body(&mut self) {
        let open = self.skip_ws_from(self.pos);
        if self.peek_at(open) != Some('{') {
            return;
        }
        self.pos = open;
        self.single(TokenKind::OpenBrace);
        let content_start = self.pos;
        let mut content = String::new();
        let mut pending_space = false;
        let mut depth = 0usize;
        let mut closed = false;
        while let Some(c) = self.peek() {
            match c {
                '}' if depth == 0 => {
                    closed = true;
                    break;
                }
                '%' => {
                    self.skip_comment();
                    continue;
                }
                c if c.is_whitespace() => {
                    pending_space = !content.is_empty();
                    self.bump();
                    continue;
                }
                _ => {}
            }
            if pending_space {
                content.push(' ');
                pending_space = false;
            }
            match c {
                '{' => depth += 1,
                '}' => depth -= 1,
                '\\' => {
                    content.push('\\');
                    self.bump();
                    match self.peek() {
                        Some(n) if n.is_whitespace() => {
                            content.push(' ');
                            self.bump();
                        }
                        Some(n) => {
                            content.push(n);
                            self.bump();
                        }
                        None => {}
                    }
                    continue;
                }
                _ => {}
            }
            content.push(c);
            self.bump();
        }
        if !closed {
            content.extend(std::iter::repeat_n('}', depth));
        }
        if !content.is_empty() {
            self.out.push(MathToken {
                kind: TokenKind::Symbol(content),
                span: Span::new(content_start, self.pos),
            });
        }
        if closed {
            self.single(TokenKind::CloseBrace);
        }
    }
}
