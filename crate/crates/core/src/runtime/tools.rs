//! Builtin simulated tools over [`WorldState`].

use std::sync::Arc;

use serde_json::{json, Value};

use super::world::{Booking, Chart, SentEmail};
use super::{ArgType, ErrorCode, ExtraArgs, Field, RecordTarget, ToolError, ToolRegistry, ToolSpec, WorldState};
use crate::cognition::ToolCall;
use crate::memory::Payload;

fn str_arg<'a>(call: &'a ToolCall, name: &str) -> &'a str {
    call.arguments.get(name).and_then(Value::as_str).unwrap_or_default()
}

fn object(v: Value) -> Payload {
    match v {
        Value::Object(m) => m,
        _ => unreachable!("handlers build objects"),
    }
}

pub fn get_weather() -> ToolSpec {
    ToolSpec {
        name: "get_weather".into(),
        args: vec![
            Field::required("location", ArgType::String),
            Field::optional("date", ArgType::String),
        ],
        extra_args: None,
        output: vec![
            Field::required("location", ArgType::String),
            Field::required("temp_f", ArgType::Float),
            Field::required("precipitation", ArgType::Bool),
        ],
        target: RecordTarget::Observation {
            entity_arg: "location".into(),
        },
        handler: Arc::new(|call, world: &mut WorldState| {
            let location = str_arg(call, "location");
            let date = call
                .arguments
                .get("date")
                .and_then(Value::as_str)
                .unwrap_or(&world.default_date)
                .to_string();
            let row = world.weather_at(location, &date).ok_or_else(|| {
                ToolError::new(ErrorCode::DomainError, format!("no forecast for {location} on {date}"))
            })?;
            Ok(object(json!({
                "location": row.location,
                "temp_f": row.temp_f,
                "precipitation": row.precipitation,
            })))
        }),
    }
}

/// Named temperatures in, the colder location and the spread out. Ties go to
/// the lexicographically smaller name.
pub fn compare_temperatures() -> ToolSpec {
    ToolSpec {
        name: "compare_temperatures".into(),
        args: Vec::new(),
        extra_args: Some(ExtraArgs {
            ty: ArgType::Float,
            min: 2,
        }),
        output: vec![
            Field::required("colder", ArgType::String),
            Field::required("delta_f", ArgType::Float),
        ],
        target: RecordTarget::Action,
        handler: Arc::new(|call, _world: &mut WorldState| {
            let mut temps: Vec<(&str, f64)> = call
                .arguments
                .iter()
                .filter_map(|(k, v)| v.as_f64().map(|t| (k.as_str(), t)))
                .collect();
            temps.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
            let (colder, low) = temps[0];
            let delta = ((temps[1].1 - low) * 100.0).round() / 100.0;
            Ok(object(json!({"colder": colder, "delta_f": delta})))
        }),
    }
}

pub fn send_email() -> ToolSpec {
    ToolSpec {
        name: "send_email".into(),
        args: vec![
            Field::required("to", ArgType::String),
            Field::required("subject", ArgType::String),
            Field::optional("body", ArgType::String),
        ],
        extra_args: None,
        output: vec![Field::required("message_id", ArgType::String)],
        target: RecordTarget::Action,
        handler: Arc::new(|call, world: &mut WorldState| {
            let message_id = format!("msg-{:04}", world.outbox.len() + 1);
            world.outbox.push(SentEmail {
                to: str_arg(call, "to").into(),
                subject: str_arg(call, "subject").into(),
                message_id: message_id.clone(),
            });
            Ok(object(json!({ "message_id": message_id })))
        }),
    }
}

pub fn book_flight() -> ToolSpec {
    ToolSpec {
        name: "book_flight".into(),
        args: vec![
            Field::required("location", ArgType::String),
            Field::optional("date", ArgType::String),
        ],
        extra_args: None,
        output: vec![Field::required("confirmation", ArgType::String)],
        target: RecordTarget::Action,
        handler: Arc::new(|call, world: &mut WorldState| {
            let location = str_arg(call, "location");
            if !world.weather.iter().any(|r| r.location == location) {
                return Err(ToolError::new(ErrorCode::DomainError, format!("no flights to {location}")));
            }
            let confirmation = world.confirmation_token(world.bookings.len() + 1);
            world.bookings.push(Booking {
                location: location.into(),
                confirmation: confirmation.clone(),
            });
            Ok(object(json!({ "confirmation": confirmation })))
        }),
    }
}

pub fn make_chart() -> ToolSpec {
    ToolSpec {
        name: "make_chart".into(),
        args: vec![Field::required("location", ArgType::String)],
        extra_args: None,
        output: vec![Field::required("artifact_id", ArgType::String)],
        target: RecordTarget::Action,
        handler: Arc::new(|call, world: &mut WorldState| {
            let location = str_arg(call, "location");
            let artifact_id = format!("chart-{:04}", world.charts.len() + 1);
            world.charts.push(Chart {
                location: location.into(),
                artifact_id: artifact_id.clone(),
            });
            Ok(object(json!({ "artifact_id": artifact_id })))
        }),
    }
}

pub fn builtin_registry() -> ToolRegistry {
    let mut r = ToolRegistry::default();
    for spec in [get_weather(), compare_temperatures(), send_email(), book_flight(), make_chart()] {
        r.register(spec).expect("builtin names are distinct");
    }
    r
}
