//! Canonical typed events and the decoders that homogenize raw payloads.
//!
//! Every payload entering the pipeline, whatever its wire format, ends up as
//! an [`EventRecord`]: a schema name plus a map of typed values. The
//! canonical byte form produced by [`encode_canonical`] is what travels
//! between services over the broker.

mod canonical;
mod decode;
mod schema;

pub use canonical::{decode_canonical, encode_canonical, CanonicalError};
pub use decode::{decode, decode_at, DecodeError, InputFormat, RawMessage};
pub use schema::{EventSchema, FieldType, SchemaError, UnknownFieldType};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Nanoseconds since the Unix epoch.
pub type Timestamp = i64;

/// Reserved payload field carrying the generation timestamp.
pub const GEN_TS_FIELD: &str = "genTs";

/// A single typed field value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Integer(i64),
    Double(f64),
    String(String),
    Boolean(bool),
}

impl Value {
    pub fn field_type(&self) -> FieldType {
        match self {
            Value::Integer(_) => FieldType::Integer,
            Value::Double(_) => FieldType::Double,
            Value::String(_) => FieldType::String,
            Value::Boolean(_) => FieldType::Boolean,
        }
    }

    /// Numeric view of the value; integers widen to `f64`.
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            Value::Integer(i) => Some(i as f64),
            Value::Double(d) => Some(d),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            Value::Integer(i) => Some(i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::String(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            Value::Boolean(b) => Some(b),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Integer(i) => write!(f, "{i}"),
            Value::Double(d) => write!(f, "{d:?}"),
            Value::String(s) => write!(f, "'{s}'"),
            Value::Boolean(b) => write!(f, "{b}"),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Integer(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Double(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::String(v.to_owned())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::String(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Boolean(v)
    }
}

/// One homogenized event instance.
///
/// `recv_ts` is local ingestion metadata and is not part of the canonical
/// wire form; `gen_ts` and `transf_ts` are.
#[derive(Debug, Clone, PartialEq)]
pub struct EventRecord {
    pub schema_name: String,
    pub values: BTreeMap<String, Value>,
    pub gen_ts: Option<Timestamp>,
    /// Stamped by the transformer when it republishes the record.
    pub transf_ts: Option<Timestamp>,
    pub recv_ts: Timestamp,
}

impl EventRecord {
    pub fn new(schema_name: impl Into<String>, values: BTreeMap<String, Value>) -> Self {
        Self {
            schema_name: schema_name.into(),
            values,
            gen_ts: None,
            transf_ts: None,
            recv_ts: 0,
        }
    }

    pub fn with_gen_ts(mut self, ts: Timestamp) -> Self {
        self.gen_ts = Some(ts);
        self
    }

    pub fn get(&self, field: &str) -> Option<&Value> {
        self.values.get(field)
    }
}

/// Wall-clock time in nanoseconds since the epoch.
pub fn now_nanos() -> Timestamp {
    let d = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .unwrap_or_default();
    d.as_nanos() as Timestamp
}
