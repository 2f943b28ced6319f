//! `[Memory Fact]` lines: the serialized memory handed to cognition, and the
//! parser the scripted proposer uses to read them back.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::memory::{
    self, EntryKind, KeyRoot, MemoryEntry, MemoryKey, MemorySnapshot, Payload, Resolved, Resolver,
};

pub const FACT_PREFIX: &str = "[Memory Fact] ";

/// Renders a scalar the way fact lines show it: `68.0` becomes `68`.
pub fn render_value(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        Value::Number(n) => match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f}"),
            _ => n.to_string(),
        },
        Value::Bool(b) => b.to_string(),
        Value::Null => "null".to_string(),
        Value::Array(items) => items.iter().map(render_value).collect::<Vec<_>>().join("|"),
        Value::Object(_) => serde_json::to_string(v).expect("values serialize"),
    }
}

/// Single-line rendering of an observation, action record or feedback entry.
pub fn format_memory_fact(entry: &MemoryEntry) -> String {
    let fields: Vec<(&String, &Value)> = match (entry.kind, entry.key.root()) {
        (EntryKind::Observation, KeyRoot::Obs) => {
            let entity = entity_label(&entry.key);
            let body = entry
                .payload
                .iter()
                .filter(|(_, v)| v.as_str() != Some(entity.as_str()))
                .collect::<Vec<_>>();
            return join_fact(&entity, &body);
        }
        (EntryKind::ActionRecord, _) => {
            let status = entry.payload.get_key_value("status");
            status
                .into_iter()
                .chain(
                    entry
                        .payload
                        .iter()
                        .filter(|(k, _)| !matches!(k.as_str(), "name" | "args" | "status")),
                )
                .collect()
        }
        _ => entry.payload.iter().collect(),
    };
    join_fact(&entry.key.to_string(), &fields)
}

fn entity_label(key: &MemoryKey) -> String {
    key.segments()[1..].join(".")
}

fn join_fact(label: &str, fields: &[(&String, &Value)]) -> String {
    let body = fields
        .iter()
        .map(|(k, v)| format!("{k}={}", render_value(v)))
        .collect::<Vec<_>>()
        .join(", ");
    format!("{FACT_PREFIX}{label}: {body}")
}

/// Entries that are serialized into cognition input, ordered by (key, version).
pub fn fact_entries(snapshot: &MemorySnapshot) -> impl Iterator<Item = &MemoryEntry> {
    snapshot.iter().filter(|e| {
        matches!(
            (e.kind, e.key.root()),
            (EntryKind::Observation, KeyRoot::Obs)
                | (EntryKind::ActionRecord, _)
                | (EntryKind::ControlFeedback, _)
        )
    })
}

/// Parses one fact line back into its key and payload.
pub fn parse_memory_fact(line: &str) -> Option<(MemoryKey, Payload)> {
    let rest = line.strip_prefix(FACT_PREFIX)?;
    let (label, body) = rest.split_once(": ").or_else(|| rest.strip_suffix(':').map(|l| (l, "")))?;
    let first = label.split('.').next()?;
    let key: MemoryKey = if KeyRoot::is_root(first) {
        label.parse().ok()?
    } else {
        format!("obs.{label}").parse().ok()?
    };
    let mut payload = Payload::new();
    let mut current: Option<(String, String)> = None;
    for piece in body.split(", ") {
        match field_start(piece) {
            Some((name, value)) => {
                if let Some((k, v)) = current.take() {
                    payload.insert(k, parse_scalar(&v));
                }
                current = Some((name.to_string(), value.to_string()));
            }
            None => match current.as_mut() {
                Some((_, v)) => {
                    v.push_str(", ");
                    v.push_str(piece);
                }
                None if piece.is_empty() => {}
                None => return None,
            },
        }
    }
    if let Some((k, v)) = current {
        payload.insert(k, parse_scalar(&v));
    }
    Some((key, payload))
}

fn field_start(piece: &str) -> Option<(&str, &str)> {
    let (name, value) = piece.split_once('=')?;
    let valid = !name.is_empty()
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.starts_with(|c: char| c.is_ascii_digit());
    valid.then_some((name, value))
}

fn parse_scalar(s: &str) -> Value {
    match s {
        "true" => Value::Bool(true),
        "false" => Value::Bool(false),
        "null" => Value::Null,
        _ => match s.parse::<f64>() {
            Ok(n) if n.is_finite() && !s.is_empty() => Value::from(n),
            _ => Value::String(s.to_string()),
        },
    }
}

/// Latest parsed payload per key, as seen through fact lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactView {
    facts: BTreeMap<MemoryKey, Payload>,
}

impl FactView {
    pub fn from_lines<S: AsRef<str>>(lines: &[S]) -> Self {
        let mut facts = BTreeMap::new();
        for line in lines {
            if let Some((k, p)) = parse_memory_fact(line.as_ref()) {
                facts.insert(k, p);
            }
        }
        Self { facts }
    }

    pub fn get(&self, key: &MemoryKey) -> Option<&Payload> {
        self.facts.get(key)
    }
}

impl Resolver for FactView {
    fn resolve(&self, key: &MemoryKey) -> Resolved {
        for len in (1..=key.len()).rev() {
            let prefix = MemoryKey::new(key.segments()[..len].to_vec()).expect("prefix of a valid key");
            if let Some(p) = self.facts.get(&prefix) {
                return memory::descend(p, &key.segments()[len..]);
            }
        }
        Resolved::NotFound
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn entry(key: &str, kind: EntryKind, payload: Value) -> MemoryEntry {
        MemoryEntry {
            key: key.parse().unwrap(),
            kind,
            payload: payload.as_object().unwrap().clone(),
            source: "t".into(),
            timestamp: "2025-01-01T12:00:00.000Z".into(),
            version: 1,
        }
    }

    #[test]
    fn observation_line() {
        let e = entry(
            "obs.Seoul",
            EntryKind::Observation,
            json!({"location": "Seoul", "temp_f": 12, "precipitation": false}),
        );
        assert_eq!(format_memory_fact(&e), "[Memory Fact] Seoul: temp_f=12, precipitation=false");
        assert_eq!(format_memory_fact(&e), format_memory_fact(&e.clone()));
        let f = entry(
            "obs.Seoul",
            EntryKind::Observation,
            json!({"location": "Seoul", "temp_f": 68.0, "precipitation": false}),
        );
        assert_eq!(format_memory_fact(&f), "[Memory Fact] Seoul: temp_f=68, precipitation=false");
    }

    #[test]
    fn action_record_line() {
        let e = entry(
            "act.book_flight",
            EntryKind::ActionRecord,
            json!({"name": "book_flight", "args": ["Seoul"], "status": "executed", "confirmation": "ABC123"}),
        );
        assert_eq!(
            format_memory_fact(&e),
            "[Memory Fact] act.book_flight: status=executed, confirmation=ABC123"
        );
    }

    #[test]
    fn parse_round_trips_observations_and_actions() {
        let line = "[Memory Fact] Seoul: temp_f=51.8, precipitation=false";
        let (k, p) = parse_memory_fact(line).unwrap();
        assert_eq!(k.to_string(), "obs.Seoul");
        assert_eq!(p["temp_f"], json!(51.8));
        assert_eq!(p["precipitation"], json!(false));
        let (k, p) = parse_memory_fact("[Memory Fact] act.book_flight: status=executed, confirmation=ABC123").unwrap();
        assert_eq!(k.to_string(), "act.book_flight");
        assert_eq!(p["confirmation"], json!("ABC123"));
        let (_, p) = parse_memory_fact("[Memory Fact] feedback.cycle2: message=Rejected a, b=c, rules=R-DEDUP").unwrap();
        assert_eq!(p["message"], json!("Rejected a"));
        assert!(parse_memory_fact("not a fact").is_none());
    }

    #[test]
    fn fact_view_resolves_with_latest_line() {
        let view = FactView::from_lines(&[
            "[Memory Fact] Seoul: temp_f=50, precipitation=false",
            "[Memory Fact] Seoul: temp_f=51.8, precipitation=false",
        ]);
        assert_eq!(view.resolve(&"obs.Seoul.temp_f".parse().unwrap()), Resolved::Value(json!(51.8)));
        assert_eq!(view.resolve(&"obs.Jeju.temp_f".parse().unwrap()), Resolved::NotFound);
    }
}
