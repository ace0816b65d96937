//! Lossless Verilog-2005 lexer.
//!
//! Every byte of the input lands in exactly one token, so concatenating the
//! token texts reproduces the source. Comments, string literals, compiler
//! directives and escaped identifiers are single opaque tokens.

use serde::{Deserialize, Serialize};

use super::VerilogError;

/// Byte range `[start, end)` into the lexed source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenKind {
    Keyword,
    Identifier,
    /// `\name` up to (not including) the terminating whitespace.
    EscapedIdentifier,
    Number,
    String,
    Comment,
    Operator,
    Whitespace,
    /// Compiler directive or macro use: `` `timescale 1ns/1ps`` (whole line)
    /// or `` `WIDTH`` (single word). Passed through untouched.
    Directive,
    /// System task or function name such as `$display`.
    SystemName,
}

impl TokenKind {
    /// Identifier-like tokens that can name user objects.
    pub fn is_identifier(self) -> bool {
        matches!(self, TokenKind::Identifier | TokenKind::EscapedIdentifier)
    }

    /// Tokens that carry no program structure.
    pub fn is_trivia(self) -> bool {
        matches!(self, TokenKind::Whitespace | TokenKind::Comment)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Token<'a> {
    pub kind: TokenKind,
    pub text: &'a str,
    pub span: Span,
}

impl Token<'_> {
    /// Identifier name with the escape backslash dropped, so `\clk` and
    /// `clk` name the same object.
    pub fn ident_name(&self) -> &str {
        match self.kind {
            TokenKind::EscapedIdentifier => &self.text[1..],
            _ => self.text,
        }
    }

    pub fn is_keyword(&self, word: &str) -> bool {
        self.kind == TokenKind::Keyword && self.text == word
    }

    pub fn is_op(&self, op: &str) -> bool {
        self.kind == TokenKind::Operator && self.text == op
    }
}

/// Reserved words of Verilog-2005.
pub const KEYWORDS: &[&str] = &[
    "always", "and", "assign", "automatic", "begin", "buf", "bufif0", "bufif1", "case", "casex",
    "casez", "cell", "cmos", "config", "deassign", "default", "defparam", "design", "disable",
    "edge", "else", "end", "endcase", "endconfig", "endfunction", "endgenerate", "endmodule",
    "endprimitive", "endspecify", "endtable", "endtask", "event", "for", "force", "forever",
    "fork", "function", "generate", "genvar", "highz0", "highz1", "if", "ifnone", "incdir",
    "include", "initial", "inout", "input", "instance", "integer", "join", "large", "liblist",
    "library", "localparam", "macromodule", "medium", "module", "nand", "negedge", "nmos", "nor",
    "noshowcancelled", "not", "notif0", "notif1", "or", "output", "parameter", "pmos", "posedge",
    "primitive", "pull0", "pull1", "pulldown", "pullup", "pulsestyle_ondetect",
    "pulsestyle_onevent", "rcmos", "real", "realtime", "reg", "release", "repeat", "rnmos",
    "rpmos", "rtran", "rtranif0", "rtranif1", "scalared", "showcancelled", "signed", "small",
    "specify", "specparam", "strong0", "strong1", "supply0", "supply1", "table", "task", "time",
    "tran", "tranif0", "tranif1", "tri", "tri0", "tri1", "triand", "trior", "trireg", "unsigned",
    "use", "uwire", "vectored", "wait", "wand", "weak0", "weak1", "while", "wire", "wor", "xnor",
    "xor",
];

pub fn is_keyword(word: &str) -> bool {
    KEYWORDS.binary_search(&word).is_ok()
}

/// Directives whose arguments run to the end of the line.
const LINE_DIRECTIVES: &[&str] = &[
    "begin_keywords", "celldefine", "default_nettype", "define", "else", "elsif", "end_keywords",
    "endcelldefine", "endif", "ifdef", "ifndef", "include", "line", "nounconnected_drive",
    "pragma", "resetall", "timescale", "unconnected_drive", "undef",
];

const OPERATORS_3: &[&str] = &["<<<", ">>>", "===", "!=="];
const OPERATORS_2: &[&str] = &[
    "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "**", "~&", "~|", "~^", "^~", "->", "+:",
    "-:",
];

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_continue(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'$'
}

fn is_base_char(b: u8) -> bool {
    matches!(b, b'b' | b'B' | b'o' | b'O' | b'd' | b'D' | b'h' | b'H')
}

fn is_based_digit(b: u8) -> bool {
    b.is_ascii_hexdigit() || matches!(b, b'x' | b'X' | b'z' | b'Z' | b'?' | b'_')
}

struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn peek(&self, off: usize) -> Option<u8> {
        self.bytes.get(self.pos + off).copied()
    }

    fn eat_while(&mut self, pred: impl Fn(u8) -> bool) {
        while self.pos < self.bytes.len() && pred(self.bytes[self.pos]) {
            self.pos += 1;
        }
    }

    /// Advance past one (possibly multi-byte) character.
    fn bump_char(&mut self) {
        let ch = self.src[self.pos..].chars().next().expect("not at end");
        self.pos += ch.len_utf8();
    }

    fn next_token(&mut self) -> Result<Option<Token<'a>>, VerilogError> {
        let start = self.pos;
        let Some(b) = self.peek(0) else {
            return Ok(None);
        };
        let kind = match b {
            b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => {
                self.eat_while(|c| c.is_ascii_whitespace() || c == 0x0b);
                TokenKind::Whitespace
            }
            b'/' if self.peek(1) == Some(b'/') => {
                self.eat_while(|c| c != b'\n');
                TokenKind::Comment
            }
            b'/' if self.peek(1) == Some(b'*') => {
                match self.src[start + 2..].find("*/") {
                    Some(rel) => self.pos = start + 2 + rel + 2,
                    None => return Err(VerilogError::UnterminatedComment { offset: start }),
                }
                TokenKind::Comment
            }
            b'"' => {
                self.pos += 1;
                loop {
                    match self.peek(0) {
                        None | Some(b'\n') => {
                            return Err(VerilogError::UnterminatedString { offset: start })
                        }
                        Some(b'\\') => {
                            self.pos += 1;
                            if self.pos < self.bytes.len() {
                                self.bump_char();
                            }
                        }
                        Some(b'"') => {
                            self.pos += 1;
                            break;
                        }
                        Some(_) => self.bump_char(),
                    }
                }
                TokenKind::String
            }
            b'\\' => {
                self.pos += 1;
                while let Some(c) = self.peek(0) {
                    if c.is_ascii_whitespace() {
                        break;
                    }
                    self.bump_char();
                }
                if self.pos == start + 1 {
                    TokenKind::Operator
                } else {
                    TokenKind::EscapedIdentifier
                }
            }
            b'`' => {
                self.pos += 1;
                self.eat_while(is_ident_continue);
                let word = &self.src[start + 1..self.pos];
                if LINE_DIRECTIVES.contains(&word) {
                    // Continuation lines end in a backslash.
                    loop {
                        self.eat_while(|c| c != b'\n');
                        let line = &self.src[start..self.pos];
                        if line.trim_end_matches('\r').ends_with('\\') && self.pos < self.bytes.len()
                        {
                            self.pos += 1;
                        } else {
                            break;
                        }
                    }
                    // Keep a trailing CR with the newline whitespace.
                    if self.src[start..self.pos].ends_with('\r') {
                        self.pos -= 1;
                    }
                }
                TokenKind::Directive
            }
            b'$' if self.peek(1).is_some_and(is_ident_continue) => {
                self.pos += 1;
                self.eat_while(is_ident_continue);
                TokenKind::SystemName
            }
            c if is_ident_start(c) => {
                self.eat_while(is_ident_continue);
                if is_keyword(&self.src[start..self.pos]) {
                    TokenKind::Keyword
                } else {
                    TokenKind::Identifier
                }
            }
            c if c.is_ascii_digit() => {
                self.lex_number();
                TokenKind::Number
            }
            b'\'' if self.based_literal_follows(self.pos) => {
                self.lex_based_tail();
                TokenKind::Number
            }
            _ => {
                let rest = &self.src[start..];
                if let Some(op) = OPERATORS_3.iter().chain(OPERATORS_2).find(|op| rest.starts_with(**op)) {
                    self.pos += op.len();
                } else {
                    self.bump_char();
                }
                TokenKind::Operator
            }
        };
        Ok(Some(Token {
            kind,
            text: &self.src[start..self.pos],
            span: Span::new(start, self.pos),
        }))
    }

    /// Whether `'` at `at` opens a based literal (`'hFF`, `'sb1`, `'0`, `'x`).
    fn based_literal_follows(&self, at: usize) -> bool {
        let b1 = self.bytes.get(at + 1).copied();
        let b2 = self.bytes.get(at + 2).copied();
        match b1 {
            Some(c) if is_base_char(c) => true,
            Some(b's' | b'S') => b2.is_some_and(is_base_char),
            Some(b'0' | b'1' | b'x' | b'X' | b'z' | b'Z') => {
                !b2.is_some_and(|c| is_ident_continue(c) || c == b'\'')
            }
            _ => false,
        }
    }

    fn lex_number(&mut self) {
        self.eat_while(|c| c.is_ascii_digit() || c == b'_');
        if self.peek(0) == Some(b'.') && self.peek(1).is_some_and(|c| c.is_ascii_digit()) {
            self.pos += 1;
            self.eat_while(|c| c.is_ascii_digit() || c == b'_');
        }
        if matches!(self.peek(0), Some(b'e' | b'E')) {
            let sign = usize::from(matches!(self.peek(1), Some(b'+' | b'-')));
            if self.peek(1 + sign).is_some_and(|c| c.is_ascii_digit()) {
                self.pos += 1 + sign;
                self.eat_while(|c| c.is_ascii_digit() || c == b'_');
            }
        }
        if self.peek(0) == Some(b'\'') && self.based_literal_follows(self.pos) {
            self.lex_based_tail();
        }
    }

    /// Consume `'[s]<base><digits>` or `'0`/`'1`/`'x`/`'z`.
    fn lex_based_tail(&mut self) {
        self.pos += 1;
        if matches!(self.peek(0), Some(b's' | b'S')) {
            self.pos += 1;
        }
        match self.peek(0) {
            Some(c) if is_base_char(c) => {
                self.pos += 1;
                // Whitespace between base and digits is legal.
                let save = self.pos;
                self.eat_while(|c| c == b' ' || c == b'\t');
                if self.peek(0).is_some_and(is_based_digit) {
                    self.eat_while(is_based_digit);
                } else {
                    self.pos = save;
                }
            }
            Some(_) => self.pos += 1,
            None => {}
        }
    }
}

/// Split `source` into a lossless token stream.
pub fn lex(source: &str) -> Result<Vec<Token<'_>>, VerilogError> {
    let mut lexer = Lexer {
        src: source,
        bytes: source.as_bytes(),
        pos: 0,
    };
    let mut tokens = Vec::new();
    while let Some(tok) = lexer.next_token()? {
        tokens.push(tok);
    }
    Ok(tokens)
}

/// Tokens that carry program structure (no whitespace or comments).
pub fn significant<'a, 'b>(tokens: &'b [Token<'a>]) -> impl Iterator<Item = &'b Token<'a>> {
    tokens.iter().filter(|t| !t.kind.is_trivia())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokenKind, &str)> {
        lex(src).unwrap().into_iter().map(|t| (t.kind, t.text)).collect()
    }

    #[test]
    fn keyword_table_is_sorted() {
        let mut sorted = KEYWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, KEYWORDS);
    }

    #[test]
    fn minimal_module() {
        assert_eq!(
            kinds("module m;"),
            vec![
                (TokenKind::Keyword, "module"),
                (TokenKind::Whitespace, " "),
                (TokenKind::Identifier, "m"),
                (TokenKind::Operator, ";"),
            ]
        );
    }

    #[test]
    fn comments_are_opaque() {
        let toks = lex("// clk\nwire clk;").unwrap();
        assert_eq!(toks[0].kind, TokenKind::Comment);
        assert!(toks[0].text.contains("clk"));
        let idents: Vec<_> = toks.iter().filter(|t| t.kind.is_identifier()).map(|t| t.text).collect();
        assert_eq!(idents, vec!["clk"]);
    }

    #[test]
    fn escaped_identifier_stops_at_whitespace() {
        let toks = kinds("\\bus+idx [3] = 1");
        assert_eq!(toks[0], (TokenKind::EscapedIdentifier, "\\bus+idx"));
        assert_eq!(toks[1], (TokenKind::Whitespace, " "));
    }

    #[test]
    fn numbers() {
        for lit in ["8'hFF", "4'sb1010", "'b0", "32'd 15", "1.5e3", "12_000", "'0", "3'bx1z"] {
            let toks = kinds(lit);
            assert_eq!(toks, vec![(TokenKind::Number, lit)], "literal {lit}");
        }
    }

    #[test]
    fn operators_longest_match() {
        let toks: Vec<_> = kinds("a<<<=b===c")
            .into_iter()
            .filter(|(k, _)| *k == TokenKind::Operator)
            .map(|(_, t)| t)
            .collect();
        assert_eq!(toks, vec!["<<<", "=", "==="]);
    }

    #[test]
    fn star_sensitivity_list_is_not_an_attribute() {
        let ops: Vec<_> = kinds("@(*)").into_iter().map(|(_, t)| t).collect();
        assert_eq!(ops, vec!["@", "(", "*", ")"]);
    }

    #[test]
    fn directives_and_system_names() {
        let toks = kinds("`timescale 1ns/1ps\n`define W 8\nassign x = `W; $display(\"hi\");");
        assert_eq!(toks[0], (TokenKind::Directive, "`timescale 1ns/1ps"));
        assert_eq!(toks[2], (TokenKind::Directive, "`define W 8"));
        assert!(toks.contains(&(TokenKind::Directive, "`W")));
        assert!(toks.contains(&(TokenKind::SystemName, "$display")));
        assert!(toks.contains(&(TokenKind::String, "\"hi\"")));
    }

    #[test]
    fn strings_with_escapes() {
        let toks = kinds(r#"$display("a \"quoted\" clk");"#);
        assert_eq!(toks[2], (TokenKind::String, r#""a \"quoted\" clk""#));
    }

    #[test]
    fn unterminated_block_comment() {
        let err = lex("wire a; /* open").unwrap_err();
        assert_eq!(err, VerilogError::UnterminatedComment { offset: 8 });
    }

    #[test]
    fn unterminated_string() {
        let err = lex("x = \"abc\n").unwrap_err();
        assert_eq!(err, VerilogError::UnterminatedString { offset: 4 });
    }

    #[test]
    fn non_ascii_survives() {
        let src = "wire a; // µ-arch\nassign a = 1'b1; §";
        let joined: String = lex(src).unwrap().iter().map(|t| t.text).collect();
        assert_eq!(joined, src);
    }
}
