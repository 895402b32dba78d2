//! Scripting language for stochastic systems and payoffs: lexer, parser,
//! validator and pretty-printer.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod validate;

use std::fmt;

pub use ast::*;
pub use lexer::{tokenize, Token, TokenKind};
pub use parser::parse_script;
pub use pretty::pretty_print;
pub use validate::{validate, ValidatedScript};

/// Source position (1-based). All spans compare equal so that tree equality
/// ignores layout.
#[derive(Debug, Clone, Copy, Default, Eq)]
pub struct Span {
    pub line: usize,
    pub col: usize,
}

impl Span {
    pub fn new(line: usize, col: usize) -> Self {
        Span { line, col }
    }
}

impl PartialEq for Span {
    fn eq(&self, _: &Span) -> bool {
        true
    }
}

#[derive(Debug, Clone)]
pub struct Diagnostic {
    pub span: Span,
    pub message: String,
}

impl PartialEq for Diagnostic {
    fn eq(&self, other: &Self) -> bool {
        (self.span.line, self.span.col, &self.message) == (other.span.line, other.span.col, &other.message)
    }
}

impl Diagnostic {
    pub fn new(span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            span,
            message: message.into(),
        }
    }

    /// `file:line:col: message`
    pub fn render(&self, file: &str) -> String {
        format!("{file}:{}:{}: {}", self.span.line, self.span.col, self.message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.span.line, self.span.col, self.message)
    }
}

impl std::error::Error for Diagnostic {}

/// Tokenizes and parses in one step.
pub fn parse_source(source: &str) -> Result<ScriptAst, Diagnostic> {
    parse_script(&tokenize(source)?)
}

/// Bundled example scripts.
pub mod corpus {
    /// Heston call under a log-Euler full-truncation scheme.
    pub const HESTON_LOG_EULER: &str = include_str!("../../scripts/heston_log_euler.pdml");
    /// Heston Asian and barrier calls with running-sum and running-max updates.
    pub const HESTON_EXOTICS: &str = include_str!("../../scripts/heston_exotics.pdml");
    /// Cheyette model with stochastic volatility, caplet under the payment-date
    /// forward measure.
    pub const CHEYETTE_SV_CAPLET: &str = include_str!("../../scripts/cheyette_sv_caplet.pdml");

    pub const ALL: &[(&str, &str)] = &[
        ("heston_log_euler", HESTON_LOG_EULER),
        ("heston_exotics", HESTON_EXOTICS),
        ("cheyette_sv_caplet", CHEYETTE_SV_CAPLET),
    ];
}
