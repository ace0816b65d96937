//! Classification of identifier occurrences against a module header.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::header::ModuleHeader;
use super::lexer::{lex, Span, Token};
use super::VerilogError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IdentClass {
    ModuleName,
    Param,
    Port,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Occurrence {
    /// Identifier name (escape backslash dropped).
    pub name: String,
    pub span: Span,
    pub class: IdentClass,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentifierIndex {
    pub occurrences: Vec<Occurrence>,
}

impl IdentifierIndex {
    /// Distinct names in first-occurrence order.
    pub fn names(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.occurrences
            .iter()
            .map(|o| o.name.as_str())
            .filter(|n| seen.insert(*n))
            .collect()
    }

    pub fn class_of(&self, name: &str) -> Option<IdentClass> {
        self.occurrences.iter().find(|o| o.name == name).map(|o| o.class)
    }
}

pub(crate) struct Classifier<'h> {
    header: &'h ModuleHeader,
    params: HashSet<&'h str>,
    ports: HashSet<&'h str>,
}

impl<'h> Classifier<'h> {
    pub(crate) fn new(header: &'h ModuleHeader) -> Self {
        Self {
            header,
            params: header.param_names().collect(),
            ports: header.port_names().collect(),
        }
    }

    pub(crate) fn classify(&self, name: &str) -> IdentClass {
        if name == self.header.name {
            IdentClass::ModuleName
        } else if self.params.contains(name) {
            IdentClass::Param
        } else if self.ports.contains(name) {
            IdentClass::Port
        } else {
            IdentClass::Other
        }
    }
}

pub(crate) fn index_tokens(tokens: &[Token<'_>], header: &ModuleHeader) -> IdentifierIndex {
    let classifier = Classifier::new(header);
    let occurrences = tokens
        .iter()
        .filter(|t| t.kind.is_identifier())
        .map(|t| Occurrence {
            name: t.ident_name().to_string(),
            span: t.span,
            class: classifier.classify(t.ident_name()),
        })
        .collect();
    IdentifierIndex { occurrences }
}

/// Classify every identifier token of `source`. Identifiers inside comments,
/// strings and directives are not tokens of identifier kind and are skipped.
pub fn index_identifiers(source: &str, header: &ModuleHeader) -> Result<IdentifierIndex, VerilogError> {
    let tokens = lex(source)?;
    Ok(index_tokens(&tokens, header))
}
