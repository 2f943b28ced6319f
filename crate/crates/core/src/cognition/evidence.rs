//! Evidence citations and their three-valued evaluation.
//!
//! Compact grammar: a bare key (`obs.Seoul.temp_f`, `goal.choose_colder`) or
//! `<key> <op> <key|literal>` where literal is a number, `true`/`false`, or a
//! JSON-quoted string.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

use crate::memory::{KeyRoot, MemoryKey, Resolved, Resolver};

#[derive(Debug, Error, PartialEq)]
#[error("cannot parse evidence `{text}`: {reason}")]
pub struct EvidenceParseError {
    pub text: String,
    pub reason: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Gt,
    Le,
    Ge,
    Eq,
    Ne,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Gt => ">",
            CmpOp::Le => "<=",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "<" => CmpOp::Lt,
            ">" => CmpOp::Gt,
            "<=" => CmpOp::Le,
            ">=" => CmpOp::Ge,
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            _ => return None,
        })
    }

    fn holds(self, ord: Ordering) -> bool {
        match self {
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Bool(bool),
    Text(String),
}

impl Literal {
    fn to_value(&self) -> Value {
        match self {
            Literal::Number(n) => Value::from(*n),
            Literal::Bool(b) => Value::Bool(*b),
            Literal::Text(s) => Value::String(s.clone()),
        }
    }
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Number(n) => write!(f, "{n}"),
            Literal::Bool(b) => write!(f, "{b}"),
            Literal::Text(s) => f.write_str(&serde_json::to_string(s).expect("strings serialize")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Operand {
    Key(MemoryKey),
    Literal(Literal),
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Operand::Key(k) => write!(f, "{k}"),
            Operand::Literal(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvidenceExpr {
    MemoryRef(MemoryKey),
    Comparison {
        lhs: MemoryKey,
        op: CmpOp,
        rhs: Operand,
    },
    GoalRef(MemoryKey),
}

/// Kleene truth value; `Unknown` when a referenced key is absent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    pub fn and(self, other: Truth) -> Truth {
        match (self, other) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::Unknown, _) | (_, Truth::Unknown) => Truth::Unknown,
            _ => Truth::True,
        }
    }
}

impl EvidenceExpr {
    pub fn reference(key: MemoryKey) -> Self {
        if key.root() == KeyRoot::Goal {
            EvidenceExpr::GoalRef(key)
        } else {
            EvidenceExpr::MemoryRef(key)
        }
    }

    /// Memory keys the expression reads.
    pub fn keys(&self) -> Vec<&MemoryKey> {
        match self {
            EvidenceExpr::MemoryRef(k) | EvidenceExpr::GoalRef(k) => vec![k],
            EvidenceExpr::Comparison { lhs, rhs, .. } => match rhs {
                Operand::Key(r) => vec![lhs, r],
                Operand::Literal(_) => vec![lhs],
            },
        }
    }

    pub fn is_comparison(&self) -> bool {
        matches!(self, EvidenceExpr::Comparison { .. })
    }

    /// References are true when they resolve to anything other than `false`.
    pub fn evaluate(&self, resolver: &dyn Resolver) -> Truth {
        match self {
            EvidenceExpr::MemoryRef(k) | EvidenceExpr::GoalRef(k) => match resolver.resolve(k) {
                Resolved::NotFound => Truth::Unknown,
                Resolved::Value(Value::Bool(false)) => Truth::False,
                Resolved::Value(_) => Truth::True,
            },
            EvidenceExpr::Comparison { lhs, op, rhs } => {
                let Resolved::Value(left) = resolver.resolve(lhs) else {
                    return Truth::Unknown;
                };
                let right = match rhs {
                    Operand::Key(k) => match resolver.resolve(k) {
                        Resolved::Value(v) => v,
                        Resolved::NotFound => return Truth::Unknown,
                    },
                    Operand::Literal(l) => l.to_value(),
                };
                match compare_values(&left, &right) {
                    Some(ord) if op.holds(ord) => Truth::True,
                    Some(_) => Truth::False,
                    // ordering across types is meaningless; only != holds
                    None => {
                        if *op == CmpOp::Ne {
                            Truth::True
                        } else {
                            Truth::False
                        }
                    }
                }
            }
        }
    }
}

fn compare_values(a: &Value, b: &Value) -> Option<Ordering> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64()?.partial_cmp(&y.as_f64()?),
        (Value::Bool(x), Value::Bool(y)) => Some(x.cmp(y)),
        (Value::String(x), Value::String(y)) => Some(x.cmp(y)),
        _ => None,
    }
}

/// Conjunction over `exprs`; empty is true.
pub fn evaluate_all(exprs: &[EvidenceExpr], resolver: &dyn Resolver) -> Truth {
    exprs
        .iter()
        .fold(Truth::True, |acc, e| acc.and(e.evaluate(resolver)))
}

impl fmt::Display for EvidenceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvidenceExpr::MemoryRef(k) | EvidenceExpr::GoalRef(k) => write!(f, "{k}"),
            EvidenceExpr::Comparison { lhs, op, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
        }
    }
}

impl FromStr for EvidenceExpr {
    type Err = EvidenceParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: &str| EvidenceParseError {
            text: s.to_string(),
            reason: reason.to_string(),
        };
        let text = s.trim();
        let (lhs_text, rest) = match text.split_once(char::is_whitespace) {
            Some((l, r)) => (l, r.trim_start()),
            None => (text, ""),
        };
        let lhs: MemoryKey = lhs_text.parse().map_err(|_| err("left side is not a memory key"))?;
        if rest.is_empty() {
            return Ok(EvidenceExpr::reference(lhs));
        }
        let (op_text, rhs_text) = rest
            .split_once(char::is_whitespace)
            .ok_or_else(|| err("expected `<key> <op> <operand>`"))?;
        let op = CmpOp::parse(op_text).ok_or_else(|| err("unknown comparison operator"))?;
        let rhs = parse_operand(rhs_text.trim()).ok_or_else(|| err("right side is not a key or literal"))?;
        Ok(EvidenceExpr::Comparison { lhs, op, rhs })
    }
}

fn parse_operand(s: &str) -> Option<Operand> {
    if s.starts_with('"') {
        return serde_json::from_str::<String>(s)
            .ok()
            .map(|t| Operand::Literal(Literal::Text(t)));
    }
    match s {
        "true" => return Some(Operand::Literal(Literal::Bool(true))),
        "false" => return Some(Operand::Literal(Literal::Bool(false))),
        _ => {}
    }
    if let Some(first) = s.split('.').next() {
        if KeyRoot::is_root(first) {
            return s.parse().ok().map(Operand::Key);
        }
    }
    let n: f64 = s.parse().ok()?;
    n.is_finite().then_some(Operand::Literal(Literal::Number(n)))
}

impl Serialize for EvidenceExpr {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EvidenceExpr {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
