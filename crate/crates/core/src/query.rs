//! The seven set-compositional templates, their logical expressions, and
//! the natural-language surface forms in both directions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateKind {
    Atomic,
    Union2,
    Union3,
    Inter2,
    Inter3,
    Excl2,
    InterExcl3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorFamily {
    Atomic,
    Disjunction,
    Conjunction,
    Exclusion,
}

impl TemplateKind {
    pub const ALL: [TemplateKind; 7] = [
        TemplateKind::Atomic,
        TemplateKind::Union2,
        TemplateKind::Union3,
        TemplateKind::Inter2,
        TemplateKind::Inter3,
        TemplateKind::Excl2,
        TemplateKind::InterExcl3,
    ];

    /// Number of atomic predicates.
    pub fn depth(self) -> usize {
        match self {
            TemplateKind::Atomic => 1,
            TemplateKind::Union2 | TemplateKind::Inter2 | TemplateKind::Excl2 => 2,
            TemplateKind::Union3 | TemplateKind::Inter3 | TemplateKind::InterExcl3 => 3,
        }
    }

    pub fn operator_family(self) -> OperatorFamily {
        match self {
            TemplateKind::Atomic => OperatorFamily::Atomic,
            TemplateKind::Union2 | TemplateKind::Union3 => OperatorFamily::Disjunction,
            TemplateKind::Inter2 | TemplateKind::Inter3 => OperatorFamily::Conjunction,
            TemplateKind::Excl2 | TemplateKind::InterExcl3 => OperatorFamily::Exclusion,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateKind::Atomic => "Atomic",
            TemplateKind::Union2 => "Union2",
            TemplateKind::Union3 => "Union3",
            TemplateKind::Inter2 => "Inter2",
            TemplateKind::Inter3 => "Inter3",
            TemplateKind::Excl2 => "Excl2",
            TemplateKind::InterExcl3 => "InterExcl3",
        }
    }

    /// Set-algebra notation, e.g. `(A∩B)∖C`.
    pub fn notation(self) -> &'static str {
        match self {
            TemplateKind::Atomic => "A",
            TemplateKind::Union2 => "A∪B",
            TemplateKind::Union3 => "A∪B∪C",
            TemplateKind::Inter2 => "A∩B",
            TemplateKind::Inter3 => "A∩B∩C",
            TemplateKind::Excl2 => "A∖B",
            TemplateKind::InterExcl3 => "(A∩B)∖C",
        }
    }

    fn check_arity<S>(self, attributes: &[S]) -> Result<()> {
        if attributes.len() != self.depth() {
            return Err(Error::Arity {
                template: self.name(),
                expected: self.depth(),
                got: attributes.len(),
            });
        }
        Ok(())
    }
}

impl fmt::Display for TemplateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TemplateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TemplateKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown template {s:?}")))
    }
}

impl OperatorFamily {
    pub fn name(self) -> &'static str {
        match self {
            OperatorFamily::Atomic => "atomic",
            OperatorFamily::Disjunction => "disjunction",
            OperatorFamily::Conjunction => "conjunction",
            OperatorFamily::Exclusion => "exclusion",
        }
    }
}

impl fmt::Display for OperatorFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Template metadata carried by every benchmark query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QueryTemplate {
    pub kind: TemplateKind,
}

impl QueryTemplate {
    pub fn new(kind: TemplateKind) -> Self {
        QueryTemplate { kind }
    }

    pub fn depth(&self) -> usize {
        self.kind.depth()
    }

    pub fn operator_family(&self) -> OperatorFamily {
        self.kind.operator_family()
    }
}

impl From<TemplateKind> for QueryTemplate {
    fn from(kind: TemplateKind) -> Self {
        QueryTemplate { kind }
    }
}

/// Boolean expression over attribute predicates.
///
/// `Not` is only meaningful as a conjunct: `And([A, Not(B)])` reads A∖B.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LogicalExpr {
    Atom(String),
    And(Vec<LogicalExpr>),
    Or(Vec<LogicalExpr>),
    Not(Box<LogicalExpr>),
}

impl LogicalExpr {
    pub fn atom(a: impl Into<String>) -> Self {
        LogicalExpr::Atom(a.into())
    }

    pub fn not(e: LogicalExpr) -> Self {
        LogicalExpr::Not(Box::new(e))
    }

    /// Canonical expression of a template instance.
    pub fn from_template<S: AsRef<str>>(kind: TemplateKind, attributes: &[S]) -> Result<Self> {
        kind.check_arity(attributes)?;
        let a = |i: usize| LogicalExpr::atom(attributes[i].as_ref());
        Ok(match kind {
            TemplateKind::Atomic => a(0),
            TemplateKind::Union2 => LogicalExpr::Or(vec![a(0), a(1)]),
            TemplateKind::Union3 => LogicalExpr::Or(vec![a(0), a(1), a(2)]),
            TemplateKind::Inter2 => LogicalExpr::And(vec![a(0), a(1)]),
            TemplateKind::Inter3 => LogicalExpr::And(vec![a(0), a(1), a(2)]),
            TemplateKind::Excl2 => LogicalExpr::And(vec![a(0), LogicalExpr::not(a(1))]),
            TemplateKind::InterExcl3 => LogicalExpr::And(vec![a(0), a(1), LogicalExpr::not(a(2))]),
        })
    }

    /// Atoms in left-to-right order.
    pub fn atoms(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            LogicalExpr::Atom(a) => out.push(a),
            LogicalExpr::And(cs) | LogicalExpr::Or(cs) => {
                cs.iter().for_each(|c| c.collect_atoms(out))
            }
            LogicalExpr::Not(c) => c.collect_atoms(out),
        }
    }
}

impl fmt::Display for LogicalExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |f: &mut fmt::Formatter<'_>, cs: &[LogicalExpr], op: &str| {
            f.write_str("(")?;
            for (i, c) in cs.iter().enumerate() {
                if i > 0 {
                    write!(f, " {op} ")?;
                }
                write!(f, "{c}")?;
            }
            f.write_str(")")
        };
        match self {
            LogicalExpr::Atom(a) => write!(f, "{a:?}"),
            LogicalExpr::And(cs) => join(f, cs, "AND"),
            LogicalExpr::Or(cs) => join(f, cs, "OR"),
            LogicalExpr::Not(c) => write!(f, "NOT {c}"),
        }
    }
}

pub fn render_query_text<S: AsRef<str>>(kind: TemplateKind, attributes: &[S]) -> Result<String> {
    kind.check_arity(attributes)?;
    let a = |i: usize| attributes[i].as_ref();
    Ok(match kind {
        TemplateKind::Atomic => format!("Who likes {}?", a(0)),
        TemplateKind::Union2 => format!("Who likes {} or {}?", a(0), a(1)),
        TemplateKind::Union3 => format!("Who likes {} or {} or {}?", a(0), a(1), a(2)),
        TemplateKind::Inter2 => format!("Who likes {} and also {}?", a(0), a(1)),
        TemplateKind::Inter3 => format!("Who likes {} and also both {} and {}?", a(0), a(1), a(2)),
        TemplateKind::Excl2 => format!("Who likes {} but not {}?", a(0), a(1)),
        TemplateKind::InterExcl3 => {
            format!("Who likes {} and also {} but not {}?", a(0), a(1), a(2))
        }
    })
}

/// Recover the template and attribute tuple from a rendered query.
///
/// Markers are tried in precedence order: `" but not "`, `" and also both "`,
/// `" and also "`, `" or "`. Attributes that themselves contain a marker make
/// the text ambiguous; such queries should be resolved from their metadata.
pub fn parse_template_instance(text: &str) -> Result<(TemplateKind, Vec<String>)> {
    let unrecognized = || Error::UnrecognizedTemplate(text.to_string());
    let body = text
        .trim()
        .strip_prefix("Who likes ")
        .and_then(|s| s.strip_suffix('?'))
        .ok_or_else(unrecognized)?;

    let parts: Vec<&str>;
    let kind;
    if let Some((head, excluded)) = body.split_once(" but not ") {
        if let Some((a, b)) = head.split_once(" and also ") {
            kind = TemplateKind::InterExcl3;
            parts = vec![a, b, excluded];
        } else {
            kind = TemplateKind::Excl2;
            parts = vec![head, excluded];
        }
    } else if let Some((a, tail)) = body.split_once(" and also both ") {
        let (b, c) = tail.split_once(" and ").ok_or_else(unrecognized)?;
        kind = TemplateKind::Inter3;
        parts = vec![a, b, c];
    } else if let Some((a, b)) = body.split_once(" and also ") {
        kind = TemplateKind::Inter2;
        parts = vec![a, b];
    } else if body.contains(" or ") {
        parts = body.split(" or ").collect();
        kind = match parts.len() {
            2 => TemplateKind::Union2,
            3 => TemplateKind::Union3,
            _ => return Err(unrecognized()),
        };
    } else {
        kind = TemplateKind::Atomic;
        parts = vec![body];
    }

    let attrs: Vec<String> = parts.iter().map(|p| p.trim().to_string()).collect();
    if attrs.iter().any(String::is_empty) {
        return Err(unrecognized());
    }
    Ok((kind, attrs))
}

pub fn parse_query_text(text: &str) -> Result<LogicalExpr> {
    let (kind, attrs) = parse_template_instance(text)?;
    LogicalExpr::from_template(kind, &attrs)
}
