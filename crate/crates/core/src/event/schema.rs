use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Closed set of field types understood by the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    /// 64-bit signed integer.
    Integer,
    /// 64-bit float.
    Double,
    String,
    Boolean,
}

impl FieldType {
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldType::Integer | FieldType::Double)
    }
}

impl fmt::Display for FieldType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FieldType::Integer => "integer",
            FieldType::Double => "double",
            FieldType::String => "string",
            FieldType::Boolean => "boolean",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown field type `{0}`")]
pub struct UnknownFieldType(pub String);

impl FromStr for FieldType {
    type Err = UnknownFieldType;

    /// Type names are case-insensitive; `int`/`long` map to `Integer` and
    /// `float` to `Double`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "integer" | "int" | "long" => Ok(FieldType::Integer),
            "double" | "float" => Ok(FieldType::Double),
            "string" => Ok(FieldType::String),
            "boolean" | "bool" => Ok(FieldType::Boolean),
            _ => Err(UnknownFieldType(s.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemaError {
    #[error("schema `{0}` has no fields")]
    Empty(String),
    #[error("schema `{schema}` declares field `{field}` twice")]
    DuplicateField { schema: String, field: String },
    #[error("invalid identifier `{0}`")]
    InvalidIdentifier(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaField {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: FieldType,
}

/// A named, ordered list of typed fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct EventSchema {
    name: String,
    fields: Vec<SchemaField>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    name: String,
    fields: Vec<SchemaField>,
}

impl TryFrom<RawSchema> for EventSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        EventSchema::new(raw.name, raw.fields.into_iter().map(|f| (f.name, f.ty)))
    }
}

impl From<EventSchema> for RawSchema {
    fn from(s: EventSchema) -> Self {
        RawSchema {
            name: s.name,
            fields: s.fields,
        }
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl EventSchema {
    pub fn new<N, I>(name: impl Into<String>, fields: I) -> Result<Self, SchemaError>
    where
        N: Into<String>,
        I: IntoIterator<Item = (N, FieldType)>,
    {
        let name = name.into();
        if !is_identifier(&name) {
            return Err(SchemaError::InvalidIdentifier(name));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (field, ty) in fields {
            let field = field.into();
            if !is_identifier(&field) {
                return Err(SchemaError::InvalidIdentifier(field));
            }
            if !seen.insert(field.clone()) {
                return Err(SchemaError::DuplicateField {
                    schema: name,
                    field,
                });
            }
            out.push(SchemaField { name: field, ty });
        }
        if out.is_empty() {
            return Err(SchemaError::Empty(name));
        }
        Ok(Self { name, fields: out })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn fields(&self) -> &[SchemaField] {
        &self.fields
    }

    pub fn field_type(&self, field: &str) -> Option<FieldType> {
        self.fields.iter().find(|f| f.name == field).map(|f| f.ty)
    }

    /// The schema used throughout the air-quality case study.
    pub fn air_quality() -> Self {
        EventSchema::new(
            "AirQualityMeasurement",
            [
                ("PM10", FieldType::Integer),
                ("PM25", FieldType::Double),
                ("stationId", FieldType::Integer),
            ],
        )
        .expect("static schema is valid")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type_names_are_case_insensitive() {
        assert_eq!("Double".parse::<FieldType>().unwrap(), FieldType::Double);
        assert_eq!("integer".parse::<FieldType>().unwrap(), FieldType::Integer);
        assert_eq!("String".parse::<FieldType>().unwrap(), FieldType::String);
        assert!("decimal".parse::<FieldType>().is_err());
    }

    #[test]
    fn rejects_duplicate_and_empty() {
        let dup = EventSchema::new("S", [("a", FieldType::Integer), ("a", FieldType::Double)]);
        assert!(matches!(dup, Err(SchemaError::DuplicateField { .. })));
        let empty = EventSchema::new("S", Vec::<(String, FieldType)>::new());
        assert_eq!(empty, Err(SchemaError::Empty("S".into())));
    }

    #[test]
    fn json_form_validates() {
        let json = r#"{"name":"Dummy","fields":[{"name":"p1","type":"string"},{"name":"p2","type":"double"}]}"#;
        let s: EventSchema = serde_json::from_str(json).unwrap();
        assert_eq!(s.field_type("p2"), Some(FieldType::Double));
        let bad = r#"{"name":"Dummy","fields":[]}"#;
        assert!(serde_json::from_str::<EventSchema>(bad).is_err());
    }
}
