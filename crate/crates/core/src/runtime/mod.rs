//! Tool registry and executor.
//!
//! Execution validates arguments, consults the idempotency cache and the
//! fault schedule, runs the handler, normalizes its output to the tool's
//! schema and stages the memory record. Failures are values, never panics,
//! and a failed call stages nothing.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cognition::ToolCall;
use crate::memory::{ActionStatus, EntryKind, MemoryKey, MemoryStore, NewEntry, Payload, StatusUpdate};

pub mod tools;
pub mod world;

pub use tools::builtin_registry;
pub use world::WorldState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    SchemaViolation,
    ToolUnavailable,
    TransientFailure,
    DomainError,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCode::SchemaViolation => "SchemaViolation",
            ErrorCode::ToolUnavailable => "ToolUnavailable",
            ErrorCode::TransientFailure => "TransientFailure",
            ErrorCode::DomainError => "DomainError",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[error("{code}: {message}")]
pub struct ToolError {
    pub code: ErrorCode,
    pub message: String,
}

impl ToolError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArgType {
    String,
    Float,
    Bool,
}

impl ArgType {
    fn admits(self, v: &Value) -> bool {
        match self {
            ArgType::String => v.is_string(),
            ArgType::Float => v.is_number(),
            ArgType::Bool => v.is_boolean(),
        }
    }

    fn normalize(self, v: &Value) -> Option<Value> {
        match self {
            ArgType::String => v.as_str().map(|s| Value::String(s.trim().to_string())),
            ArgType::Float => v.as_f64().map(Value::from),
            ArgType::Bool => v.as_bool().map(Value::Bool),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub ty: ArgType,
    pub required: bool,
}

impl Field {
    pub fn required(name: &str, ty: ArgType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
        }
    }

    pub fn optional(name: &str, ty: ArgType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: false,
        }
    }
}

/// Free-form named arguments beyond the declared ones, e.g. one temperature per city.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtraArgs {
    pub ty: ArgType,
    pub min: usize,
}

/// Where a successful call is recorded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecordTarget {
    /// `obs.<value of entity_arg>`, replaced by the normalized output.
    Observation { entity_arg: String },
    /// `act.<tool>`: a pending record followed by its executed version.
    Action,
}

pub type Handler = Arc<dyn Fn(&ToolCall, &mut WorldState) -> Result<Payload, ToolError> + Send + Sync>;

#[derive(Clone)]
pub struct ToolSpec {
    pub name: String,
    pub args: Vec<Field>,
    pub extra_args: Option<ExtraArgs>,
    pub output: Vec<Field>,
    pub target: RecordTarget,
    pub handler: Handler,
}

impl fmt::Debug for ToolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ToolSpec")
            .field("name", &self.name)
            .field("args", &self.args)
            .field("extra_args", &self.extra_args)
            .field("output", &self.output)
            .field("target", &self.target)
            .finish_non_exhaustive()
    }
}

impl ToolSpec {
    pub fn required_args(&self) -> impl Iterator<Item = &Field> {
        self.args.iter().filter(|f| f.required)
    }

    /// Type-checks arguments; presence of required fields included.
    pub fn validate_args(&self, call: &ToolCall) -> Result<(), ToolError> {
        let violation = |m: String| ToolError::new(ErrorCode::SchemaViolation, m);
        for field in &self.args {
            match call.arguments.get(&field.name) {
                Some(v) if field.ty.admits(v) => {}
                Some(_) => return Err(violation(format!("argument `{}` must be {:?}", field.name, field.ty))),
                None if field.required => return Err(violation(format!("argument `{}` is required", field.name))),
                None => {}
            }
        }
        let mut extras = 0;
        for (name, v) in &call.arguments {
            if self.args.iter().any(|f| &f.name == name) {
                continue;
            }
            match self.extra_args {
                Some(x) if x.ty.admits(v) => extras += 1,
                Some(x) => return Err(violation(format!("argument `{name}` must be {:?}", x.ty))),
                None => return Err(violation(format!("unexpected argument `{name}`"))),
            }
        }
        if let Some(x) = self.extra_args {
            if extras < x.min {
                return Err(violation(format!("expected at least {} named {:?} arguments", x.min, x.ty)));
            }
        }
        Ok(())
    }

    pub fn record_key(&self, call: &ToolCall) -> Result<MemoryKey, ToolError> {
        let segment = match &self.target {
            RecordTarget::Action => return MemoryKey::new(["act", self.name.as_str()]).map_err(key_error),
            RecordTarget::Observation { entity_arg } => call
                .arguments
                .get(entity_arg)
                .and_then(Value::as_str)
                .map(str::trim)
                .ok_or_else(|| {
                    ToolError::new(ErrorCode::SchemaViolation, format!("argument `{entity_arg}` is required"))
                })?,
        };
        MemoryKey::new(["obs", segment]).map_err(key_error)
    }

    fn normalize_output(&self, raw: &Payload) -> Result<Payload, ToolError> {
        let mut out = Payload::new();
        for field in &self.output {
            match raw.get(&field.name).and_then(|v| field.ty.normalize(v)) {
                Some(v) => {
                    out.insert(field.name.clone(), v);
                }
                None if field.required => {
                    return Err(ToolError::new(
                        ErrorCode::SchemaViolation,
                        format!("{} produced no valid `{}`", self.name, field.name),
                    ))
                }
                None => {}
            }
        }
        Ok(out)
    }
}

fn key_error(e: crate::memory::MemoryError) -> ToolError {
    ToolError::new(ErrorCode::SchemaViolation, e.to_string())
}

#[derive(Debug, Error, PartialEq)]
pub enum RegistryError {
    #[error("tool `{0}` is already registered")]
    DuplicateName(String),
}

#[derive(Debug, Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, ToolSpec>,
}

impl ToolRegistry {
    pub fn register(&mut self, spec: ToolSpec) -> Result<(), RegistryError> {
        if self.tools.contains_key(&spec.name) {
            return Err(RegistryError::DuplicateName(spec.name));
        }
        self.tools.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name.trim())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tools.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Ok { payload: Payload },
    Err { code: ErrorCode, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResult {
    pub outcome: Outcome,
    pub latency_ms: u64,
    pub idempotency_hit: bool,
}

impl ToolResult {
    pub fn payload(&self) -> Option<&Payload> {
        match &self.outcome {
            Outcome::Ok { payload } => Some(payload),
            Outcome::Err { .. } => None,
        }
    }

    pub fn error(&self) -> Option<ToolError> {
        match &self.outcome {
            Outcome::Err { code, message } => Some(ToolError::new(*code, message.clone())),
            Outcome::Ok { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvocationLog {
    pub cycle: u32,
    pub tool: String,
    pub args: BTreeMap<String, Value>,
    pub outcome: Outcome,
    pub latency_ms: u64,
    pub idempotency_hit: bool,
}

/// Executes calls for one episode; owns the world and all runtime caches.
#[derive(Debug)]
pub struct Runtime {
    registry: ToolRegistry,
    world: WorldState,
    seed: u64,
    ordinals: BTreeMap<String, u64>,
    handler_calls: BTreeMap<String, u64>,
    cache: BTreeMap<String, Payload>,
    log: Vec<InvocationLog>,
}

impl Runtime {
    pub fn new(registry: ToolRegistry, world: WorldState, seed: u64) -> Self {
        Self {
            registry,
            world,
            seed,
            ordinals: BTreeMap::new(),
            handler_calls: BTreeMap::new(),
            cache: BTreeMap::new(),
            log: Vec::new(),
        }
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }

    pub fn into_world(self) -> WorldState {
        self.world
    }

    pub fn log(&self) -> &[InvocationLog] {
        &self.log
    }

    pub fn handler_invocations(&self, tool: &str) -> u64 {
        self.handler_calls.get(tool).copied().unwrap_or(0)
    }

    /// Runs `call` and stages its record on success; always appends one log entry.
    pub fn execute(&mut self, call: &ToolCall, cycle: u32, memory: &mut MemoryStore) -> ToolResult {
        let call = call.canonical();
        let ordinal = {
            let n = self.ordinals.entry(call.name.clone()).or_insert(0);
            *n += 1;
            *n
        };
        let latency_ms = self.latency(&call.name, ordinal);
        let (outcome, hit) = match self.run(&call, ordinal, memory) {
            Ok((payload, hit)) => (Outcome::Ok { payload }, hit),
            Err(e) => (
                Outcome::Err {
                    code: e.code,
                    message: e.message,
                },
                false,
            ),
        };
        self.log.push(InvocationLog {
            cycle,
            tool: call.name.clone(),
            args: call.arguments.clone(),
            outcome: outcome.clone(),
            latency_ms,
            idempotency_hit: hit,
        });
        ToolResult {
            outcome,
            latency_ms,
            idempotency_hit: hit,
        }
    }

    fn run(&mut self, call: &ToolCall, ordinal: u64, memory: &mut MemoryStore) -> Result<(Payload, bool), ToolError> {
        let spec = self
            .registry
            .get(&call.name)
            .cloned()
            .ok_or_else(|| ToolError::new(ErrorCode::ToolUnavailable, format!("no tool named `{}`", call.name)))?;
        spec.validate_args(call)?;
        let key = spec.record_key(call)?;
        let cache_key = call.canonical_key();
        if let Some(payload) = self.cache.get(&cache_key).cloned() {
            stage(&spec, call, &key, &payload, memory)?;
            return Ok((payload, true));
        }
        if let Some(code) = self.world.scheduled_fault(&call.name, ordinal) {
            return Err(ToolError::new(code, format!("scheduled {code} on call {ordinal} of {}", call.name)));
        }
        *self.handler_calls.entry(call.name.clone()).or_insert(0) += 1;
        let raw = (spec.handler)(call, &mut self.world)?;
        let payload = spec.normalize_output(&raw)?;
        stage(&spec, call, &key, &payload, memory)?;
        self.cache.insert(cache_key, payload.clone());
        Ok((payload, false))
    }

    fn latency(&self, tool: &str, ordinal: u64) -> u64 {
        let h = Sha256::digest(tool.as_bytes());
        let tool_hash = u64::from_be_bytes(h[..8].try_into().expect("8 bytes"));
        ChaCha8Rng::seed_from_u64(self.seed ^ tool_hash ^ ordinal).gen_range(5..=250)
    }
}

fn stage(
    spec: &ToolSpec,
    call: &ToolCall,
    key: &MemoryKey,
    payload: &Payload,
    memory: &mut MemoryStore,
) -> Result<(), ToolError> {
    let result = match spec.target {
        RecordTarget::Observation { .. } => memory
            .write_staged(NewEntry::new(key.clone(), EntryKind::Observation, payload.clone(), &spec.name))
            .map(|_| ()),
        RecordTarget::Action => {
            let mut pending = Payload::new();
            pending.insert("name".into(), Value::String(spec.name.clone()));
            pending.insert(
                "args".into(),
                Value::Object(call.arguments.clone().into_iter().collect()),
            );
            pending.insert("status".into(), Value::String(ActionStatus::Pending.as_str().into()));
            memory
                .write_staged(NewEntry::new(key.clone(), EntryKind::ActionRecord, pending, &spec.name))
                .and_then(|_| {
                    memory.update_status_with(key, StatusUpdate::Action(ActionStatus::Executed), payload.clone())
                })
                .map(|_| ())
        }
    };
    result.map_err(|e| ToolError::new(ErrorCode::SchemaViolation, e.to_string()))
}
