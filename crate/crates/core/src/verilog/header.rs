//! Module header extraction: `module name #(params) (ports);`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::lexer::{lex, Span, Token, TokenKind};
use super::VerilogError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Input,
    Output,
    Inout,
    /// Non-ANSI port list; direction lives in the module body.
    Unspecified,
}

impl Direction {
    fn from_keyword(word: &str) -> Option<Self> {
        match word {
            "input" => Some(Direction::Input),
            "output" => Some(Direction::Output),
            "inout" => Some(Direction::Inout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    /// Default-value source text, trimmed; empty when absent.
    pub default: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Port {
    pub name: String,
    pub direction: Direction,
    /// Packed range text such as `[7:0]`; empty for scalar or non-ANSI ports.
    pub width: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleHeader {
    pub name: String,
    pub params: Vec<Param>,
    pub ports: Vec<Port>,
    /// Exact source from `module` through the terminating `;`.
    pub raw_text: String,
}

impl ModuleHeader {
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn port_names(&self) -> impl Iterator<Item = &str> {
        self.ports.iter().map(|p| p.name.as_str())
    }
}

/// Parse the first module header in `source`.
pub fn parse_header(source: &str) -> Result<ModuleHeader, VerilogError> {
    let tokens = lex(source)?;
    parse_header_tokens(source, &tokens).map(|(h, _)| h)
}

/// Parse the first module header from an existing token stream, returning the
/// header and its byte span in `source`.
pub fn parse_header_tokens(
    source: &str,
    tokens: &[Token<'_>],
) -> Result<(ModuleHeader, Span), VerilogError> {
    let sig: Vec<&Token<'_>> = tokens.iter().filter(|t| !t.kind.is_trivia()).collect();
    let start = sig
        .iter()
        .position(|t| t.is_keyword("module"))
        .ok_or(VerilogError::NoModule)?;
    let mut cur = Cursor { sig: &sig, pos: start + 1 };

    let name_tok = cur.next().ok_or(VerilogError::UnexpectedEnd { context: "module name" })?;
    if !name_tok.kind.is_identifier() {
        return Err(VerilogError::Unexpected {
            expected: "module name",
            found: name_tok.text.to_string(),
            offset: name_tok.span.start,
        });
    }
    let name = name_tok.ident_name().to_string();

    let mut params = Vec::new();
    if cur.peek().is_some_and(|t| t.is_op("#")) {
        cur.pos += 1;
        let items = cur.paren_items("parameter list")?;
        for item in items {
            if let Some(p) = parse_param(source, item)? {
                params.push(p);
            }
        }
    }

    let mut ports = Vec::new();
    if cur.peek().is_some_and(|t| t.is_op("(")) {
        let items = cur.paren_items("port list")?;
        let ansi = items.iter().any(|item| {
            item.first()
                .is_some_and(|t| t.kind == TokenKind::Keyword && Direction::from_keyword(t.text).is_some())
        });
        let mut inherited = Direction::Unspecified;
        for item in items {
            if let Some(p) = parse_port(source, item, ansi, &mut inherited)? {
                ports.push(p);
            }
        }
    }

    let semi = match cur.next() {
        Some(t) if t.is_op(";") => t,
        Some(t) => {
            return Err(VerilogError::MissingSemicolon { offset: t.span.start });
        }
        None => return Err(VerilogError::MissingSemicolon { offset: source.len() }),
    };

    check_unique(params.iter().map(|p| p.name.as_str()), VerilogError::DuplicateParam)?;
    check_unique(ports.iter().map(|p| p.name.as_str()), VerilogError::DuplicatePort)?;

    let span = Span::new(sig[start].span.start, semi.span.end);
    let header = ModuleHeader {
        name,
        params,
        ports,
        raw_text: source[span.start..span.end].to_string(),
    };
    Ok((header, span))
}

fn check_unique<'a>(
    names: impl Iterator<Item = &'a str>,
    err: impl Fn(String) -> VerilogError,
) -> Result<(), VerilogError> {
    let mut seen = HashSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(err(n.to_string()));
        }
    }
    Ok(())
}

struct Cursor<'s, 'a> {
    sig: &'s [&'s Token<'a>],
    pos: usize,
}

impl<'s, 'a> Cursor<'s, 'a> {
    fn peek(&self) -> Option<&'s Token<'a>> {
        self.sig.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<&'s Token<'a>> {
        let t = self.peek();
        self.pos += 1;
        t
    }

    /// Consume a balanced `( ... )` group and split its contents at
    /// top-level commas. An empty group yields no items.
    fn paren_items(&mut self, context: &'static str) -> Result<Vec<&'s [&'s Token<'a>]>, VerilogError> {
        match self.next() {
            Some(t) if t.is_op("(") => {}
            Some(t) => {
                return Err(VerilogError::Unexpected {
                    expected: "(",
                    found: t.text.to_string(),
                    offset: t.span.start,
                })
            }
            None => return Err(VerilogError::UnexpectedEnd { context }),
        }
        let mut depth = 0usize;
        let mut items = Vec::new();
        let mut item_start = self.pos;
        loop {
            let t = self.next().ok_or(VerilogError::UnexpectedEnd { context })?;
            if t.kind != TokenKind::Operator {
                continue;
            }
            match t.text {
                "(" | "[" | "{" => depth += 1,
                ")" if depth == 0 => {
                    let last = &self.sig[item_start..self.pos - 1];
                    if !(items.is_empty() && last.is_empty()) {
                        items.push(last);
                    }
                    return Ok(items);
                }
                ")" | "]" | "}" => depth = depth.saturating_sub(1),
                "," if depth == 0 => {
                    items.push(&self.sig[item_start..self.pos - 1]);
                    item_start = self.pos;
                }
                _ => {}
            }
        }
    }
}

fn slice_text<'a>(source: &'a str, toks: &[&Token<'_>]) -> &'a str {
    match (toks.first(), toks.last()) {
        (Some(a), Some(b)) => &source[a.span.start..b.span.end],
        _ => "",
    }
}

fn parse_param(source: &str, item: &[&Token<'_>]) -> Result<Option<Param>, VerilogError> {
    if item.is_empty() {
        return Ok(None);
    }
    let eq = item.iter().position(|t| t.is_op("="));
    let lhs = &item[..eq.unwrap_or(item.len())];
    let name_tok = lhs
        .iter()
        .rev()
        .find(|t| t.kind.is_identifier())
        .ok_or_else(|| VerilogError::Unexpected {
            expected: "parameter name",
            found: slice_text(source, item).to_string(),
            offset: item[0].span.start,
        })?;
    let default = match eq {
        Some(i) => slice_text(source, &item[i + 1..]).trim().to_string(),
        None => String::new(),
    };
    Ok(Some(Param {
        name: name_tok.ident_name().to_string(),
        default,
    }))
}

fn parse_port(
    source: &str,
    item: &[&Token<'_>],
    ansi: bool,
    inherited: &mut Direction,
) -> Result<Option<Port>, VerilogError> {
    if item.is_empty() {
        return Ok(None);
    }
    // Explicit port expression `.name(expr)`: the external name is `name`.
    if item[0].is_op(".") {
        if let Some(t) = item.get(1).filter(|t| t.kind.is_identifier()) {
            return Ok(Some(Port {
                name: t.ident_name().to_string(),
                direction: Direction::Unspecified,
                width: String::new(),
            }));
        }
    }

    let mut direction = Direction::Unspecified;
    if ansi {
        if let Some(d) = item
            .first()
            .filter(|t| t.kind == TokenKind::Keyword)
            .and_then(|t| Direction::from_keyword(t.text))
        {
            *inherited = d;
        }
        direction = *inherited;
    }

    // Name is the last identifier at depth 0 before any `=` initializer;
    // the width is the last packed range in front of the name.
    let mut depth = 0usize;
    let mut name_idx = None;
    let mut ranges: Vec<(usize, usize)> = Vec::new();
    let mut range_open = 0;
    for (i, t) in item.iter().enumerate() {
        if t.kind == TokenKind::Operator {
            match t.text {
                "[" => {
                    if depth == 0 {
                        range_open = i;
                    }
                    depth += 1;
                }
                "]" => {
                    depth = depth.saturating_sub(1);
                    if depth == 0 {
                        ranges.push((range_open, i));
                    }
                }
                "(" | "{" => depth += 1,
                ")" | "}" => depth = depth.saturating_sub(1),
                "=" if depth == 0 => break,
                _ => {}
            }
        } else if depth == 0 && t.kind.is_identifier() {
            name_idx = Some(i);
        }
    }
    let name_idx = name_idx.ok_or_else(|| VerilogError::Unexpected {
        expected: "port name",
        found: slice_text(source, item).to_string(),
        offset: item[0].span.start,
    })?;
    let width = ranges
        .iter()
        .rev()
        .find(|(_, close)| *close < name_idx)
        .map(|&(o, c)| slice_text(source, &item[o..=c]).to_string())
        .unwrap_or_default();
    Ok(Some(Port {
        name: item[name_idx].ident_name().to_string(),
        direction,
        width,
    }))
}
