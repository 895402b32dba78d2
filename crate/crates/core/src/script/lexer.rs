//! Tokenizer for the model/payoff scripting language.
//!
//! `#` starts a comment that runs to the end of the line. A `\` followed only
//! by whitespace (or a comment) up to the end of the line joins the next line
//! onto the current statement. Newlines are significant: they terminate
//! statements.

use super::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    Ident(String),
    Number(f64),
    /// `init:` prefix of an initial-value statement.
    Init,
    Pays,
    DiscountBy,
    NoDiscount,
    If,
    Else,
    Plus,
    Minus,
    Star,
    Slash,
    Assign,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Newline,
    Eof,
}

impl TokenKind {
    pub fn describe(&self) -> String {
        match self {
            TokenKind::Ident(s) => format!("identifier `{s}`"),
            TokenKind::Number(v) => format!("number `{v}`"),
            TokenKind::Init => "`init:`".into(),
            TokenKind::Pays => "`pays`".into(),
            TokenKind::DiscountBy => "`discountby`".into(),
            TokenKind::NoDiscount => "`nodiscount`".into(),
            TokenKind::If => "`if`".into(),
            TokenKind::Else => "`else`".into(),
            TokenKind::Plus => "`+`".into(),
            TokenKind::Minus => "`-`".into(),
            TokenKind::Star => "`*`".into(),
            TokenKind::Slash => "`/`".into(),
            TokenKind::Assign => "`=`".into(),
            TokenKind::Lt => "`<`".into(),
            TokenKind::Le => "`<=`".into(),
            TokenKind::Gt => "`>`".into(),
            TokenKind::Ge => "`>=`".into(),
            TokenKind::EqEq => "`==`".into(),
            TokenKind::Ne => "`!=`".into(),
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::LBracket => "`[`".into(),
            TokenKind::RBracket => "`]`".into(),
            TokenKind::Comma => "`,`".into(),
            TokenKind::Colon => "`:`".into(),
            TokenKind::Newline => "end of line".into(),
            TokenKind::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek_second(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next().map(|(_, c)| c)
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn offset(&mut self) -> usize {
        self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len())
    }

    fn span(&self) -> Span {
        Span::new(self.line, self.col)
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_continue(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Splits `source` into tokens. Consecutive blank lines collapse to a single
/// `Newline`; the stream always ends with `Newline, Eof`.
pub fn tokenize(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut cur = Cursor {
        chars: source.char_indices().peekable(),
        src: source,
        line: 1,
        col: 1,
    };
    let mut out: Vec<Token> = Vec::new();
    let push_newline = |out: &mut Vec<Token>, span: Span| {
        if !matches!(out.last().map(|t| &t.kind), None | Some(TokenKind::Newline)) {
            out.push(Token {
                kind: TokenKind::Newline,
                span,
            });
        }
    };

    while let Some(c) = cur.peek() {
        let span = cur.span();
        match c {
            ' ' | '\t' | '\r' => {
                cur.bump();
            }
            '\n' => {
                cur.bump();
                push_newline(&mut out, span);
            }
            '#' => {
                while let Some(c) = cur.peek() {
                    if c == '\n' {
                        break;
                    }
                    cur.bump();
                }
            }
            '\\' => {
                cur.bump();
                // Only whitespace or a comment may follow a continuation.
                loop {
                    match cur.peek() {
                        Some(' ') | Some('\t') | Some('\r') => {
                            cur.bump();
                        }
                        Some('#') => {
                            while let Some(c) = cur.peek() {
                                if c == '\n' {
                                    break;
                                }
                                cur.bump();
                            }
                        }
                        Some('\n') => {
                            cur.bump();
                            break;
                        }
                        None => break,
                        Some(_) => {
                            return Err(Diagnostic::new(
                                span,
                                "line continuation `\\` must be the last character on its line",
                            ))
                        }
                    }
                }
            }
            c if c.is_ascii_digit() || (c == '.' && cur.peek_second().is_some_and(|d| d.is_ascii_digit())) => {
                let start = cur.offset();
                while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
                    cur.bump();
                }
                if matches!(cur.peek(), Some('e') | Some('E')) {
                    let second = cur.peek_second();
                    let exp_follows = second.is_some_and(|d| d.is_ascii_digit()) || matches!(second, Some('+') | Some('-'));
                    if exp_follows {
                        cur.bump();
                        if matches!(cur.peek(), Some('+') | Some('-')) {
                            cur.bump();
                        }
                        while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                            cur.bump();
                        }
                    }
                }
                let end = cur.offset();
                let text = &source[start..end];
                let value: f64 = text
                    .parse()
                    .map_err(|_| Diagnostic::new(span, format!("malformed number `{text}`")))?;
                out.push(Token {
                    kind: TokenKind::Number(value),
                    span,
                });
            }
            c if is_ident_start(c) => {
                let start = cur.offset();
                while cur.peek().is_some_and(is_ident_continue) {
                    cur.bump();
                }
                let end = cur.offset();
                let word = &source[start..end];
                let kind = match word {
                    "pays" => TokenKind::Pays,
                    "discountby" => TokenKind::DiscountBy,
                    "nodiscount" => TokenKind::NoDiscount,
                    "if" => TokenKind::If,
                    "else" => TokenKind::Else,
                    "init" => {
                        // `init:` is a keyword; a bare `init` stays an identifier.
                        let mut probe = cur.chars.clone();
                        let mut is_kw = false;
                        while let Some(&(_, c)) = probe.peek() {
                            if c == ' ' || c == '\t' {
                                probe.next();
                                continue;
                            }
                            is_kw = c == ':';
                            break;
                        }
                        if is_kw {
                            while cur.peek() != Some(':') {
                                cur.bump();
                            }
                            cur.bump();
                            TokenKind::Init
                        } else {
                            TokenKind::Ident(word.to_string())
                        }
                    }
                    _ => TokenKind::Ident(word.to_string()),
                };
                out.push(Token { kind, span });
            }
            _ => {
                cur.bump();
                let two = |cur: &mut Cursor, next: char, yes: TokenKind, no: TokenKind| {
                    if cur.peek() == Some(next) {
                        cur.bump();
                        yes
                    } else {
                        no
                    }
                };
                let kind = match c {
                    '+' => TokenKind::Plus,
                    '-' => TokenKind::Minus,
                    '*' => TokenKind::Star,
                    '/' => TokenKind::Slash,
                    '(' => TokenKind::LParen,
                    ')' => TokenKind::RParen,
                    '[' => TokenKind::LBracket,
                    ']' => TokenKind::RBracket,
                    ',' => TokenKind::Comma,
                    ':' => TokenKind::Colon,
                    '=' => two(&mut cur, '=', TokenKind::EqEq, TokenKind::Assign),
                    '<' => two(&mut cur, '=', TokenKind::Le, TokenKind::Lt),
                    '>' => two(&mut cur, '=', TokenKind::Ge, TokenKind::Gt),
                    '!' if cur.peek() == Some('=') => {
                        cur.bump();
                        TokenKind::Ne
                    }
                    other => return Err(Diagnostic::new(span, format!("illegal character `{other}`"))),
                };
                out.push(Token { kind, span });
            }
        }
    }
    let end = cur.span();
    push_newline(&mut out, end);
    out.push(Token {
        kind: TokenKind::Eof,
        span: end,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| t.kind)
            .filter(|k| !matches!(k, TokenKind::Newline | TokenKind::Eof))
            .collect()
    }

    fn ident(s: &str) -> TokenKind {
        TokenKind::Ident(s.into())
    }

    #[test]
    fn segments_a_simple_sde() {
        assert_eq!(
            kinds("d_x = mu*d_t"),
            vec![ident("d_x"), TokenKind::Assign, ident("mu"), TokenKind::Star, ident("d_t")]
        );
    }

    #[test]
    fn continuation_joins_lines() {
        let toks = tokenize("a \\\n + b").unwrap();
        let k: Vec<_> = toks.iter().map(|t| t.kind.clone()).collect();
        assert_eq!(k, vec![ident("a"), TokenKind::Plus, ident("b"), TokenKind::Newline, TokenKind::Eof]);
    }

    #[test]
    fn continuation_tolerates_trailing_blanks() {
        assert_eq!(kinds("a \\  \n+ b"), vec![ident("a"), TokenKind::Plus, ident("b")]);
    }

    #[test]
    fn illegal_character_has_position() {
        let err = tokenize("x = @").unwrap_err();
        assert_eq!((err.span.line, err.span.col), (1, 5));
        assert!(err.message.contains('@'));
    }

    #[test]
    fn comments_and_keywords() {
        let k = kinds("# system\ninit: x = 1e-3 # trailing\nmaturity: c pays x nodiscount");
        assert_eq!(
            k,
            vec![
                TokenKind::Init,
                ident("x"),
                TokenKind::Assign,
                TokenKind::Number(1e-3),
                ident("maturity"),
                TokenKind::Colon,
                ident("c"),
                TokenKind::Pays,
                ident("x"),
                TokenKind::NoDiscount
            ]
        );
    }

    #[test]
    fn comparison_operators() {
        assert_eq!(
            kinds("a<=b<c==d"),
            vec![
                ident("a"),
                TokenKind::Le,
                ident("b"),
                TokenKind::Lt,
                ident("c"),
                TokenKind::EqEq,
                ident("d")
            ]
        );
    }

    #[test]
    fn blank_lines_collapse() {
        let toks = tokenize("\n\na\n\n\nb\n").unwrap();
        let nl = toks.iter().filter(|t| t.kind == TokenKind::Newline).count();
        assert_eq!(nl, 2);
    }
}
