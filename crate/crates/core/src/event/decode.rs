use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::Reader;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use super::{now_nanos, EventRecord, EventSchema, FieldType, Timestamp, Value, GEN_TS_FIELD};

/// Wire formats accepted on the ingestion side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    Json,
    Xml,
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Json => "json",
            InputFormat::Xml => "xml",
        })
    }
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(InputFormat::Json),
            "xml" => Ok(InputFormat::Xml),
            other => Err(format!("unsupported input type `{other}` (expected json or xml)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawMessage {
    pub payload: Vec<u8>,
    pub format: InputFormat,
}

impl RawMessage {
    pub fn json(payload: impl Into<Vec<u8>>) -> Self {
        Self {
            payload: payload.into(),
            format: InputFormat::Json,
        }
    }

    pub fn xml(payload: impl Into<Vec<u8>>) -> Self {
        Self {
            payload: payload.into(),
            format: InputFormat::Xml,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize)]
#[serde(tag = "error", rename_all = "camelCase")]
pub enum DecodeError {
    #[error("malformed payload: {reason}")]
    MalformedPayload { reason: String },
    #[error("missing field `{field}`")]
    MissingField { field: String },
    #[error("field `{field}`: cannot coerce {found} to {expected}")]
    TypeMismatch {
        field: String,
        expected: FieldType,
        found: String,
    },
}

impl DecodeError {
    /// The offending field, when the error is tied to one.
    pub fn field(&self) -> Option<&str> {
        match self {
            DecodeError::MalformedPayload { .. } => None,
            DecodeError::MissingField { field } | DecodeError::TypeMismatch { field, .. } => {
                Some(field)
            }
        }
    }

    fn malformed(reason: impl fmt::Display) -> Self {
        DecodeError::MalformedPayload {
            reason: reason.to_string(),
        }
    }

    fn mismatch(field: &str, expected: FieldType, found: impl fmt::Display) -> Self {
        DecodeError::TypeMismatch {
            field: field.to_owned(),
            expected,
            found: found.to_string(),
        }
    }
}

/// Decodes a raw payload against `schema`, stamping `recv_ts` from the wall clock.
pub fn decode(raw: &RawMessage, schema: &EventSchema) -> Result<EventRecord, DecodeError> {
    decode_at(raw, schema, now_nanos())
}

/// Decodes a raw payload against `schema` with an explicit ingestion time.
pub fn decode_at(
    raw: &RawMessage,
    schema: &EventSchema,
    recv_ts: Timestamp,
) -> Result<EventRecord, DecodeError> {
    let text = std::str::from_utf8(&raw.payload).map_err(DecodeError::malformed)?;
    let (values, gen_ts) = match raw.format {
        InputFormat::Json => decode_json(text, schema)?,
        InputFormat::Xml => decode_xml(text, schema)?,
    };
    Ok(EventRecord {
        schema_name: schema.name().to_owned(),
        values,
        gen_ts,
        transf_ts: None,
        recv_ts,
    })
}

type Decoded = (BTreeMap<String, Value>, Option<Timestamp>);

fn decode_json(text: &str, schema: &EventSchema) -> Result<Decoded, DecodeError> {
    let doc: serde_json::Value = serde_json::from_str(text).map_err(DecodeError::malformed)?;
    let serde_json::Value::Object(obj) = doc else {
        return Err(DecodeError::malformed("top-level JSON value is not an object"));
    };
    let mut values = BTreeMap::new();
    for field in schema.fields() {
        let v = obj.get(&field.name).ok_or_else(|| DecodeError::MissingField {
            field: field.name.clone(),
        })?;
        values.insert(field.name.clone(), coerce_json(&field.name, v, field.ty)?);
    }
    let gen_ts = match obj.get(GEN_TS_FIELD) {
        None => None,
        Some(v) => match coerce_json(GEN_TS_FIELD, v, FieldType::Integer)? {
            Value::Integer(ts) => Some(ts),
            _ => unreachable!("integer coercion yields integers"),
        },
    };
    for key in obj.keys() {
        if key != GEN_TS_FIELD && schema.field_type(key).is_none() {
            debug!(field = %key, schema = schema.name(), "dropping unknown payload field");
        }
    }
    Ok((values, gen_ts))
}

const I64_UPPER: f64 = 9_223_372_036_854_775_808.0; // 2^63

fn f64_to_i64_exact(f: f64) -> Option<i64> {
    (f.is_finite() && f.fract() == 0.0 && (-I64_UPPER..I64_UPPER).contains(&f)).then_some(f as i64)
}

/// Widens an integer to `f64`, refusing values that would lose precision.
fn i64_to_f64_exact(i: i64) -> Option<f64> {
    let f = i as f64;
    (f < I64_UPPER && f as i64 == i).then_some(f)
}

fn coerce_json(field: &str, v: &serde_json::Value, ty: FieldType) -> Result<Value, DecodeError> {
    use serde_json::Value as J;
    match (ty, v) {
        (FieldType::Integer, J::Number(n)) => {
            if let Some(i) = n.as_i64() {
                Ok(Value::Integer(i))
            } else if n.is_u64() {
                Err(DecodeError::mismatch(field, ty, format!("out-of-range number {n}")))
            } else {
                n.as_f64()
                    .and_then(f64_to_i64_exact)
                    .map(Value::Integer)
                    .ok_or_else(|| DecodeError::mismatch(field, ty, format!("number {n}")))
            }
        }
        (FieldType::Double, J::Number(n)) => {
            if let Some(i) = n.as_i64() {
                i64_to_f64_exact(i)
                    .map(Value::Double)
                    .ok_or_else(|| DecodeError::mismatch(field, ty, format!("inexact integer {n}")))
            } else if n.is_u64() {
                Err(DecodeError::mismatch(field, ty, format!("inexact integer {n}")))
            } else {
                Ok(Value::Double(n.as_f64().unwrap_or(f64::NAN)))
            }
        }
        (FieldType::Integer | FieldType::Double | FieldType::Boolean, J::String(s)) => {
            coerce_text(field, s, ty)
        }
        (FieldType::String, J::String(s)) => Ok(Value::String(s.clone())),
        (FieldType::Boolean, J::Bool(b)) => Ok(Value::Boolean(*b)),
        (_, other) => Err(DecodeError::mismatch(field, ty, json_kind(other))),
    }
}

fn json_kind(v: &serde_json::Value) -> &'static str {
    match v {
        serde_json::Value::Null => "null",
        serde_json::Value::Bool(_) => "boolean",
        serde_json::Value::Number(_) => "number",
        serde_json::Value::String(_) => "string",
        serde_json::Value::Array(_) => "array",
        serde_json::Value::Object(_) => "object",
    }
}

fn coerce_text(field: &str, text: &str, ty: FieldType) -> Result<Value, DecodeError> {
    let t = text.trim();
    let bad = || DecodeError::mismatch(field, ty, format!("text {t:?}"));
    match ty {
        FieldType::Integer => {
            if let Ok(i) = t.parse::<i64>() {
                return Ok(Value::Integer(i));
            }
            if t.bytes().all(|b| b.is_ascii_digit() || b == b'-' || b == b'+') && !t.is_empty() {
                // Digits only but unparseable: out of range.
                return Err(bad());
            }
            t.parse::<f64>()
                .ok()
                .and_then(f64_to_i64_exact)
                .map(Value::Integer)
                .ok_or_else(bad)
        }
        FieldType::Double => {
            if let Ok(i) = t.parse::<i64>() {
                return i64_to_f64_exact(i).map(Value::Double).ok_or_else(bad);
            }
            match t.parse::<f64>() {
                Ok(d) if d.is_finite() => Ok(Value::Double(d)),
                _ => Err(bad()),
            }
        }
        FieldType::Boolean => match t.to_ascii_lowercase().as_str() {
            "true" => Ok(Value::Boolean(true)),
            "false" => Ok(Value::Boolean(false)),
            _ => Err(bad()),
        },
        FieldType::String => Ok(Value::String(text.to_owned())),
    }
}

/// Flat XML: one child element per field under a single root; attributes
/// and nested content below field elements are ignored.
fn decode_xml(text: &str, schema: &EventSchema) -> Result<Decoded, DecodeError> {
    let mut reader = Reader::from_str(text);
    let mut depth = 0usize;
    let mut seen_root = false;
    let mut current: Option<(String, String)> = None;
    let mut elements: BTreeMap<String, String> = BTreeMap::new();

    loop {
        let ev = reader.read_event().map_err(DecodeError::malformed)?;
        match ev {
            Event::Start(e) => {
                depth += 1;
                if depth == 1 {
                    if seen_root {
                        return Err(DecodeError::malformed("multiple root elements"));
                    }
                    seen_root = true;
                } else if depth == 2 {
                    let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                    current = Some((name, String::new()));
                }
            }
            Event::Empty(e) => {
                if depth == 0 {
                    if seen_root {
                        return Err(DecodeError::malformed("multiple root elements"));
                    }
                    seen_root = true;
                } else if depth == 1 {
                    let name = String::from_utf8_lossy(e.local_name().as_ref()).into_owned();
                    insert_element(&mut elements, name, String::new())?;
                }
            }
            Event::End(_) => {
                if depth == 2 {
                    if let Some((name, value)) = current.take() {
                        insert_element(&mut elements, name, value)?;
                    }
                }
                depth = depth.saturating_sub(1);
            }
            Event::Text(t) => {
                let s = t.unescape().map_err(DecodeError::malformed)?;
                if depth == 2 {
                    if let Some((_, buf)) = current.as_mut() {
                        buf.push_str(&s);
                    }
                } else if depth == 0 && !s.trim().is_empty() {
                    return Err(DecodeError::malformed("text outside the root element"));
                }
            }
            Event::CData(c) => {
                if depth == 2 {
                    if let Some((_, buf)) = current.as_mut() {
                        buf.push_str(&String::from_utf8_lossy(&c));
                    }
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !seen_root {
        return Err(DecodeError::malformed("no root element"));
    }
    if depth != 0 {
        return Err(DecodeError::malformed("unclosed element"));
    }

    let mut values = BTreeMap::new();
    for field in schema.fields() {
        let text = elements
            .get(&field.name)
            .ok_or_else(|| DecodeError::MissingField {
                field: field.name.clone(),
            })?;
        values.insert(field.name.clone(), coerce_text(&field.name, text, field.ty)?);
    }
    let gen_ts = match elements.get(GEN_TS_FIELD) {
        None => None,
        Some(t) => match coerce_text(GEN_TS_FIELD, t, FieldType::Integer)? {
            Value::Integer(ts) => Some(ts),
            _ => unreachable!("integer coercion yields integers"),
        },
    };
    Ok((values, gen_ts))
}

fn insert_element(
    elements: &mut BTreeMap<String, String>,
    name: String,
    value: String,
) -> Result<(), DecodeError> {
    if elements.contains_key(&name) {
        return Err(DecodeError::malformed(format!("element `{name}` appears more than once")));
    }
    elements.insert(name, value);
    Ok(())
}
