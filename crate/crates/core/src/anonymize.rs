//! Identifier anonymization.
//!
//! The module name becomes `module_name`; header parameters and then header
//! ports become `val_0, val_1, ...` in declaration order; every remaining
//! identifier gets the next free `val_i` in order of first occurrence. Only
//! identifier tokens change. Comments, strings, directives, numbers and
//! whitespace are copied byte for byte.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::verilog::{
    index_tokens, lex, parse_header_tokens, IdentifierIndex, ModuleHeader, Span, Token, TokenKind,
    VerilogError,
};

pub const MODULE_PLACEHOLDER: &str = "module_name";
const PLACEHOLDER_PREFIX: &str = "val_";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnonymizeError {
    #[error(transparent)]
    Parse(#[from] VerilogError),
    #[error("identifier `{0}` collides with the reserved map key `placeholder_count`")]
    ReservedKey(String),
    #[error("invalid map file: {0}")]
    MapFormat(String),
}

/// Whether `name` is a placeholder emitted by the anonymizer.
pub fn is_placeholder(name: &str) -> bool {
    name == MODULE_PLACEHOLDER
        || name
            .strip_prefix(PLACEHOLDER_PREFIX)
            .is_some_and(|d| !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit()))
}

/// Ordered original → replacement mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenameMap {
    pub entries: Vec<(String, String)>,
    pub placeholder_count: usize,
}

impl RenameMap {
    pub fn get(&self, original: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(o, _)| o == original)
            .map(|(_, r)| r.as_str())
    }

    fn lookup(&self) -> HashMap<&str, &str> {
        self.entries
            .iter()
            .map(|(o, r)| (o.as_str(), r.as_str()))
            .collect()
    }

    /// Map-file form: `{original: replacement, ..., "placeholder_count": n}`.
    pub fn to_json(&self) -> Result<Value, AnonymizeError> {
        let mut obj = Map::new();
        for (o, r) in &self.entries {
            if o == "placeholder_count" {
                return Err(AnonymizeError::ReservedKey(o.clone()));
            }
            obj.insert(o.clone(), Value::String(r.clone()));
        }
        obj.insert("placeholder_count".into(), Value::from(self.placeholder_count));
        Ok(Value::Object(obj))
    }

    pub fn from_json(value: &Value) -> Result<Self, AnonymizeError> {
        let obj = value
            .as_object()
            .ok_or_else(|| AnonymizeError::MapFormat("expected a JSON object".into()))?;
        let mut map = RenameMap::default();
        for (k, v) in obj {
            if k == "placeholder_count" {
                map.placeholder_count = v
                    .as_u64()
                    .ok_or_else(|| AnonymizeError::MapFormat("placeholder_count must be an integer".into()))?
                    as usize;
            } else {
                let r = v
                    .as_str()
                    .ok_or_else(|| AnonymizeError::MapFormat(format!("value for `{k}` must be a string")))?;
                map.entries.push((k.clone(), r.to_string()));
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnonymizeOptions {
    /// Drop comments from the output. Off by default.
    pub strip_comments: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Anonymized {
    pub text: String,
    pub map: RenameMap,
}

struct PlaceholderAlloc {
    next: usize,
    used: HashSet<String>,
}

impl PlaceholderAlloc {
    fn fresh(&mut self) -> String {
        loop {
            let candidate = format!("{PLACEHOLDER_PREFIX}{}", self.next);
            self.next += 1;
            if self.used.insert(candidate.clone()) {
                return candidate;
            }
        }
    }
}

fn build_map(header: &ModuleHeader, tokens: &[Token<'_>]) -> RenameMap {
    let mut alloc = PlaceholderAlloc {
        next: 0,
        used: HashSet::from([MODULE_PLACEHOLDER.to_string()]),
    };
    let mut seen: HashSet<&str> = HashSet::new();
    let mut entries = vec![(header.name.clone(), MODULE_PLACEHOLDER.to_string())];
    seen.insert(&header.name);

    let header_names = header.param_names().chain(header.port_names());
    let body_names = tokens
        .iter()
        .filter(|t| t.kind.is_identifier())
        .map(|t| t.ident_name());
    for name in header_names.chain(body_names) {
        if seen.insert(name) {
            entries.push((name.to_string(), alloc.fresh()));
        }
    }
    RenameMap {
        placeholder_count: entries.len() - 1,
        entries,
    }
}

fn stripped_comment(text: &str) -> String {
    if text.starts_with("//") {
        return String::new();
    }
    let newlines = text.matches('\n').count();
    if newlines == 0 {
        " ".to_string()
    } else {
        "\n".repeat(newlines)
    }
}

fn render(tokens: &[Token<'_>], map: &HashMap<&str, &str>, opts: AnonymizeOptions) -> String {
    let mut out = String::with_capacity(tokens.iter().map(|t| t.text.len()).sum());
    for t in tokens {
        match t.kind {
            TokenKind::Identifier | TokenKind::EscapedIdentifier => {
                out.push_str(map.get(t.ident_name()).copied().unwrap_or(t.text))
            }
            TokenKind::Comment if opts.strip_comments => out.push_str(&stripped_comment(t.text)),
            _ => out.push_str(t.text),
        }
    }
    out
}

pub fn anonymize_module(source: &str) -> Result<Anonymized, AnonymizeError> {
    anonymize_module_with(source, AnonymizeOptions::default())
}

pub fn anonymize_module_with(source: &str, opts: AnonymizeOptions) -> Result<Anonymized, AnonymizeError> {
    let tokens = lex(source)?;
    let (header, _) = parse_header_tokens(source, &tokens)?;
    let map = build_map(&header, &tokens);
    let text = render(&tokens, &map.lookup(), opts);
    Ok(Anonymized { text, map })
}

/// Anonymize a header on its own; equals the header slice of
/// [`anonymize_module`] on the full source.
pub fn anonymize_header(header: &ModuleHeader) -> Result<Anonymized, AnonymizeError> {
    anonymize_module(&header.raw_text)
}

/// Rewrite identifier tokens of `source` through `map`; identifiers absent
/// from the map are left as they are.
pub fn apply_rename(source: &str, map: &RenameMap) -> Result<String, AnonymizeError> {
    let tokens = lex(source)?;
    Ok(render(&tokens, &map.lookup(), AnonymizeOptions::default()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Violation {
    /// An original identifier survived.
    Leftover { name: String, span: Span },
    /// Identifier does not follow the placeholder grammar.
    NotPlaceholder { name: String, span: Span },
    /// One original identifier was renamed two different ways.
    Inconsistent {
        original: String,
        first: String,
        second: String,
        span: Span,
    },
    /// Two different originals share one replacement.
    NotInjective {
        replacement: String,
        originals: (String, String),
        span: Span,
    },
    /// Identifier token counts differ, so occurrences cannot be aligned.
    CountMismatch { original: usize, anonymized: usize },
    /// The anonymized text does not lex.
    Unlexable { message: String },
}

/// Check anonymized text against the index of the original source.
///
/// Identifier occurrences are aligned positionally with the original index;
/// the implied mapping must be consistent and injective, and no original
/// name may survive.
pub fn verify_anonymized(anon_source: &str, original_index: &IdentifierIndex) -> Vec<Violation> {
    let tokens = match lex(anon_source) {
        Ok(t) => t,
        Err(e) => return vec![Violation::Unlexable { message: e.to_string() }],
    };
    let originals: HashSet<&str> = original_index
        .occurrences
        .iter()
        .map(|o| o.name.as_str())
        .filter(|n| !is_placeholder(n))
        .collect();

    let idents: Vec<&Token<'_>> = tokens.iter().filter(|t| t.kind.is_identifier()).collect();
    let mut violations = Vec::new();
    let mut flagged = vec![false; idents.len()];
    for (i, t) in idents.iter().enumerate() {
        let name = t.ident_name();
        if originals.contains(name) {
            violations.push(Violation::Leftover { name: name.into(), span: t.span });
            flagged[i] = true;
        } else if !is_placeholder(name) {
            violations.push(Violation::NotPlaceholder { name: name.into(), span: t.span });
            flagged[i] = true;
        }
    }

    if idents.len() != original_index.occurrences.len() {
        violations.push(Violation::CountMismatch {
            original: original_index.occurrences.len(),
            anonymized: idents.len(),
        });
        return violations;
    }

    let mut forward: HashMap<&str, &str> = HashMap::new();
    let mut backward: HashMap<&str, &str> = HashMap::new();
    for ((occ, t), bad) in original_index.occurrences.iter().zip(&idents).zip(&flagged) {
        if *bad {
            continue;
        }
        let (orig, repl) = (occ.name.as_str(), t.ident_name());
        match forward.get(orig) {
            Some(prev) if *prev != repl => violations.push(Violation::Inconsistent {
                original: orig.into(),
                first: (*prev).into(),
                second: repl.into(),
                span: t.span,
            }),
            Some(_) => {}
            None => {
                forward.insert(orig, repl);
            }
        }
        match backward.get(repl) {
            Some(prev) if *prev != orig => violations.push(Violation::NotInjective {
                replacement: repl.into(),
                originals: ((*prev).into(), orig.into()),
                span: t.span,
            }),
            Some(_) => {}
            None => {
                backward.insert(repl, orig);
            }
        }
    }
    violations
}

/// Index of `source` against its own header (convenience for verification).
pub fn original_index(source: &str) -> Result<IdentifierIndex, AnonymizeError> {
    let tokens = lex(source)?;
    let (header, _) = parse_header_tokens(source, &tokens)?;
    Ok(index_tokens(&tokens, &header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::verilog::parse_header;

    const SYNC_FIFO: &str = "module sync_fifo #(DEPTH=32, WIDTH=8)\n    (clk, rst_n, wr_en, rd_en);";
    const SYNC_FIFO_ANON: &str = "module module_name #(val_0=32, val_1=8)\n    (val_2, val_3, val_4, val_5);";

    const HALF_ADDER: &str = "// half adder\nmodule half_adder(input a, input b, output sum, output cout);\n  assign sum = a ^ b;\n  assign cout = a & b;\nendmodule\n";

    #[test]
    fn sync_fifo_golden() {
        let out = anonymize_module(SYNC_FIFO).unwrap();
        assert_eq!(out.text, SYNC_FIFO_ANON);
        assert_eq!(out.map.placeholder_count, 6);
        assert_eq!(out.map.get("sync_fifo"), Some("module_name"));
        assert_eq!(out.map.get("rd_en"), Some("val_5"));
    }

    #[test]
    fn empty_module() {
        let out = anonymize_module("module m;").unwrap();
        assert_eq!(out.text, "module module_name;");
        assert_eq!(out.map.entries, vec![("m".to_string(), "module_name".to_string())]);
        assert_eq!(out.map.placeholder_count, 0);
    }

    #[test]
    fn params_only_header() {
        let h = parse_header("module f #(N=4)();").unwrap();
        assert_eq!(anonymize_header(&h).unwrap().text, "module module_name #(val_0=4)();");
    }

    #[test]
    fn half_adder_leaves_no_original_identifier() {
        let out = anonymize_module(HALF_ADDER).unwrap();
        let originals = ["half_adder", "a", "b", "sum", "cout"];
        let relexed = lex(&out.text).unwrap();
        assert!(relexed
            .iter()
            .filter(|t| t.kind.is_identifier())
            .all(|t| !originals.contains(&t.ident_name())));
        assert!(out.text.starts_with("// half adder\n"));
        assert!(out.text.contains("assign val_2 = val_0 ^ val_1;"));
    }

    #[test]
    fn non_ansi_header_matches_full_module_slice() {
        let src = "module acc #(W=8) (clk, d, q);\n  output [W-1:0] q;\n  input clk;\n  input [W-1:0] d;\n  reg [W-1:0] r;\n  always @(posedge clk) r <= r + d;\n  assign q = r;\nendmodule";
        let full = anonymize_module(src).unwrap();
        let h = parse_header(src).unwrap();
        let hdr = anonymize_header(&h).unwrap();
        let full_header = parse_header(&full.text).unwrap();
        assert_eq!(full_header.raw_text, hdr.text);
        // q is declared output first in the body but keeps its list position
        assert_eq!(full.map.get("q"), Some("val_3"));
        assert_eq!(full.map.get("r"), Some("val_4"));
    }

    #[test]
    fn comments_strings_and_system_names_untouched() {
        let src = "module t(clk);\n  input clk; // clk is the clock\n  initial $display(\"clk=%b\", clk);\nendmodule";
        let out = anonymize_module(src).unwrap();
        assert_eq!(
            out.text,
            "module module_name(val_0);\n  input val_0; // clk is the clock\n  initial $display(\"clk=%b\", val_0);\nendmodule"
        );
    }

    #[test]
    fn escaped_identifiers_lose_the_backslash() {
        let src = "module m(\\a.b , y);\n  assign y = \\a.b ;\nendmodule";
        let out = anonymize_module(src).unwrap();
        assert_eq!(out.text, "module module_name(val_0 , val_1);\n  assign val_1 = val_0 ;\nendmodule");
    }

    #[test]
    fn existing_placeholder_names_never_duplicate() {
        let src = "module m(val_1, x);\n  wire val_0, module_name;\n  assign module_name = val_1 & x;\nendmodule";
        let out = anonymize_module(src).unwrap();
        let replacements: HashSet<_> = out.map.entries.iter().map(|(_, r)| r.as_str()).collect();
        assert_eq!(replacements.len(), out.map.entries.len());
        assert_eq!(out.map.get("val_1"), Some("val_0"));
        assert_eq!(out.map.get("module_name"), Some("val_3"));
        assert!(verify_anonymized(&out.text, &original_index(src).unwrap()).is_empty());
    }

    #[test]
    fn strip_comments_option() {
        let src = "module m(a); /* multi\nline */ // tail\nendmodule";
        let out = anonymize_module_with(src, AnonymizeOptions { strip_comments: true }).unwrap();
        assert_eq!(out.text, "module module_name(val_0); \n \nendmodule");
    }

    #[test]
    fn verify_clean_and_planted_leftover() {
        let idx = original_index(SYNC_FIFO).unwrap();
        assert!(verify_anonymized(SYNC_FIFO_ANON, &idx).is_empty());

        let planted = SYNC_FIFO_ANON.replace("val_2", "clk");
        let v = verify_anonymized(&planted, &idx);
        assert_eq!(v.len(), 1);
        match &v[0] {
            Violation::Leftover { name, span } => {
                assert_eq!(name, "clk");
                assert_eq!(&planted[span.start..span.end], "clk");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn verify_detects_non_injective_map() {
        let mut out = anonymize_module(SYNC_FIFO).unwrap();
        for (o, r) in out.map.entries.iter_mut() {
            if o == "rd_en" {
                *r = "val_0".into();
            }
        }
        let corrupted = apply_rename(SYNC_FIFO, &out.map).unwrap();
        let v = verify_anonymized(&corrupted, &original_index(SYNC_FIFO).unwrap());
        assert_eq!(v.len(), 1);
        assert!(matches!(
            &v[0],
            Violation::NotInjective { replacement, originals, .. }
                if replacement == "val_0" && originals == &("DEPTH".to_string(), "rd_en".to_string())
        ));
    }

    #[test]
    fn verify_flags_non_placeholder_and_count_mismatch() {
        let idx = original_index(SYNC_FIFO).unwrap();
        let v = verify_anonymized("module module_name #(val_0=32, val_1=8) (foo, val_3, val_4);", &idx);
        assert!(v.contains(&Violation::CountMismatch { original: 7, anonymized: 6 }));
        assert!(v.iter().any(|x| matches!(x, Violation::NotPlaceholder { name, .. } if name == "foo")));
    }

    #[test]
    fn map_json_shape() {
        let out = anonymize_module(SYNC_FIFO).unwrap();
        let json = out.map.to_json().unwrap();
        assert_eq!(
            serde_json::to_string(&json).unwrap(),
            r#"{"sync_fifo":"module_name","DEPTH":"val_0","WIDTH":"val_1","clk":"val_2","rst_n":"val_3","wr_en":"val_4","rd_en":"val_5","placeholder_count":6}"#
        );
        assert_eq!(RenameMap::from_json(&json).unwrap(), out.map);
    }

    #[test]
    fn placeholder_grammar() {
        assert!(is_placeholder("module_name"));
        assert!(is_placeholder("val_12"));
        assert!(!is_placeholder("val_"));
        assert!(!is_placeholder("val_1a"));
        assert!(!is_placeholder("value_1"));
    }
}
