//! Verilog lexing, module header parsing and identifier classification.

mod header;
mod index;
mod lexer;

pub use header::{parse_header, parse_header_tokens, Direction, ModuleHeader, Param, Port};
pub use index::{index_identifiers, IdentClass, IdentifierIndex, Occurrence};
pub(crate) use index::index_tokens;
pub use lexer::{is_keyword, lex, significant, Span, Token, TokenKind, KEYWORDS};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum VerilogError {
    #[error("unterminated block comment starting at byte {offset}")]
    UnterminatedComment { offset: usize },
    #[error("unterminated string literal starting at byte {offset}")]
    UnterminatedString { offset: usize },
    #[error("no `module` keyword found")]
    NoModule,
    #[error("module header is missing its terminating `;` (at byte {offset})")]
    MissingSemicolon { offset: usize },
    #[error("unexpected end of input while parsing {context}")]
    UnexpectedEnd { context: &'static str },
    #[error("expected {expected} at byte {offset}, found `{found}`")]
    Unexpected {
        expected: &'static str,
        found: String,
        offset: usize,
    },
    #[error("duplicate port `{0}` in module header")]
    DuplicatePort(String),
    #[error("duplicate parameter `{0}` in module header")]
    DuplicateParam(String),
}
