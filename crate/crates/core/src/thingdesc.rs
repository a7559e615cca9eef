//! W3C Web of Things Thing Descriptions for the pipeline services.

use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const TD_CONTEXT: &str = "https://www.w3.org/2019/wot/td/v1";
pub const ID_PREFIX: &str = "urn:dev:smartports:";
pub const TD_CONTENT_TYPE: &str = "application/td+json";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TdError {
    #[error("action `{0}` is declared twice")]
    DuplicateAction(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSchema {
    #[serde(rename = "type")]
    pub ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub properties: IndexMap<String, DataSchema>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
}

impl DataSchema {
    pub fn new(ty: &str, description: &str) -> Self {
        DataSchema {
            ty: ty.to_owned(),
            description: Some(description.to_owned()),
            properties: IndexMap::new(),
            required: Vec::new(),
        }
    }

    /// An object schema from `(name, type, description)` triples.
    pub fn object(props: &[(&str, &str, &str)]) -> Self {
        DataSchema {
            ty: "object".into(),
            description: None,
            properties: props
                .iter()
                .map(|(n, t, d)| (n.to_string(), DataSchema::new(t, d)))
                .collect(),
            required: Vec::new(),
        }
    }

    pub fn require(mut self, names: &[&str]) -> Self {
        self.required = names.iter().map(|s| s.to_string()).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Form {
    pub href: String,
    #[serde(rename = "htv:methodName", default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(rename = "contentType", default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionAffordance {
    pub title: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<DataSchema>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<DataSchema>,
    pub forms: Vec<Form>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PropertyAffordance {
    #[serde(rename = "type")]
    pub ty: String,
    pub description: String,
    pub read_only: bool,
    pub forms: Vec<Form>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecurityScheme {
    pub scheme: String,
    #[serde(rename = "in")]
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ThingDescription {
    #[serde(rename = "@context")]
    pub context: String,
    pub id: String,
    pub title: String,
    pub security_definitions: IndexMap<String, SecurityScheme>,
    pub security: Vec<String>,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub properties: IndexMap<String, PropertyAffordance>,
    pub actions: IndexMap<String, ActionAffordance>,
}

impl ThingDescription {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec_pretty(self).expect("thing descriptions always serialize")
    }
}

/// One HTTP action a service implements.
#[derive(Debug, Clone)]
pub struct ActionSpec {
    pub name: String,
    pub title: String,
    pub description: String,
    pub input: Option<DataSchema>,
    pub output: Option<DataSchema>,
    /// Path below the service base URL, e.g. `/schema`.
    pub path: String,
    pub method: String,
}

#[derive(Debug, Clone)]
pub struct PropertySpec {
    pub name: String,
    pub ty: String,
    pub description: String,
    pub path: String,
}

#[derive(Debug, Clone)]
pub struct ServiceDescriptor {
    /// Thing name, used for `title` and the `urn:dev:smartports:` id.
    pub name: String,
    /// Absolute base URL, e.g. `http://localhost:8081`.
    pub base_url: String,
    pub actions: Vec<ActionSpec>,
    pub properties: Vec<PropertySpec>,
}

pub fn build_td(d: &ServiceDescriptor) -> Result<ThingDescription, TdError> {
    let base = d.base_url.trim_end_matches('/');
    let mut actions = IndexMap::new();
    for a in &d.actions {
        let affordance = ActionAffordance {
            title: a.title.clone(),
            description: a.description.clone(),
            input: a.input.clone(),
            output: a.output.clone(),
            forms: vec![Form {
                href: format!("{base}{}", a.path),
                method: Some(a.method.clone()),
                content_type: Some("application/json".into()),
            }],
        };
        if actions.insert(a.name.clone(), affordance).is_some() {
            return Err(TdError::DuplicateAction(a.name.clone()));
        }
    }
    let properties = d
        .properties
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                PropertyAffordance {
                    ty: p.ty.clone(),
                    description: p.description.clone(),
                    read_only: true,
                    forms: vec![Form {
                        href: format!("{base}{}", p.path),
                        method: Some("GET".into()),
                        content_type: Some("application/json".into()),
                    }],
                },
            )
        })
        .collect();
    Ok(ThingDescription {
        context: TD_CONTEXT.into(),
        id: format!("{ID_PREFIX}{}", d.name),
        title: d.name.clone(),
        security_definitions: IndexMap::from([(
            "basic_sc".to_string(),
            SecurityScheme {
                scheme: "basic".into(),
                location: "header".into(),
            },
        )]),
        security: vec!["basic_sc".into()],
        properties,
        actions,
    })
}

fn action(name: &str, title: &str, description: &str, path: &str, input: DataSchema, output: DataSchema) -> ActionSpec {
    ActionSpec {
        name: name.into(),
        title: title.into(),
        description: description.into(),
        input: Some(input),
        output: Some(output),
        path: path.into(),
        method: "POST".into(),
    }
}

pub fn transformer_descriptor(base_url: &str) -> ServiceDescriptor {
    ServiceDescriptor {
        name: "EventTransformer".into(),
        base_url: base_url.into(),
        actions: vec![
            action(
                "transformMessage",
                "Transform message",
                "Transforms an input message into the desired output format",
                "/transformmessage",
                DataSchema::object(&[
                    ("event", "string", "The message to be transformed"),
                    ("json", "boolean", "Indicates if the message comes as JSON"),
                    ("xml", "boolean", "Indicates if the message comes as XML"),
                ])
                .require(&["event"]),
                // JSON Schema has no map type; an object keyed by field name.
                DataSchema::new("object", "The transformed message as a map of field name to value"),
            ),
            action(
                "sendEventMap",
                "Send event map",
                "Send the transformed message to the desired output topic",
                "/sendeventmap",
                DataSchema::object(&[
                    ("outputHost", "string", "The output host where the Message Broker is running"),
                    ("outputQueue", "string", "The output topic where the message will be sent"),
                    ("eventMap", "object", "The message, as a map of field name to value, to be sent"),
                ])
                .require(&["eventMap"]),
                DataSchema::new("object", "Publication acknowledgement"),
            ),
        ],
        properties: Vec::new(),
    }
}

pub fn cep_descriptor(base_url: &str) -> ServiceDescriptor {
    let deployed = || DataSchema::object(&[("id", "integer", "Identifier of the new deployment")]);
    ServiceDescriptor {
        name: "EventProcessor".into(),
        base_url: base_url.into(),
        actions: vec![
            action(
                "deploySchema",
                "Deploy schema",
                "Registers an event type from a create schema statement",
                "/schema",
                DataSchema::object(&[("schema", "string", "The create schema statement")]).require(&["schema"]),
                deployed(),
            ),
            action(
                "deployPattern",
                "Deploy pattern",
                "Deploys a select, pattern or context statement; @Tag annotations carry the alert action",
                "/pattern",
                DataSchema::object(&[("pattern", "string", "The statement text")]).require(&["pattern"]),
                deployed(),
            ),
            action(
                "deployDataflow",
                "Deploy dataflow",
                "Starts consuming a broker queue into the event bus",
                "/dataflow",
                DataSchema::object(&[
                    ("dataflow", "string", "The create dataflow statement"),
                    ("name", "string", "The dataflow name"),
                ])
                .require(&["dataflow", "name"]),
                deployed(),
            ),
        ],
        properties: vec![PropertySpec {
            name: "deploymentsCount".into(),
            ty: "integer".into(),
            description: "Number of active deployments".into(),
            path: "/properties/deploymentsCount".into(),
        }],
    }
}

pub fn actions_descriptor(base_url: &str) -> ServiceDescriptor {
    ServiceDescriptor {
        name: "EventActions".into(),
        base_url: base_url.into(),
        actions: vec![action(
            "executeAction",
            "Execute action",
            "Performs the action named by an alert envelope's action tag",
            "/execute",
            DataSchema::object(&[
                ("stream", "string", "Stream that produced the alert"),
                ("values", "object", "The complex event's values"),
                ("tags", "array", "Action tags as name/value pairs"),
                ("detectTs", "integer", "Detection time in nanoseconds since the epoch"),
            ])
            .require(&["stream", "values", "tags", "detectTs"]),
            DataSchema::new("object", "Outcome of the action"),
        )],
        properties: Vec::new(),
    }
}

/// `GET /td` serving a fixed, pre-serialized description.
pub fn td_router<S: Clone + Send + Sync + 'static>(td: &ThingDescription) -> Router<S> {
    let body = td.to_json();
    Router::new().route(
        "/td",
        get(move || {
            let body = body.clone();
            async move { ([(header::CONTENT_TYPE, TD_CONTENT_TYPE)], body).into_response() }
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transformer_td_shape() {
        let td = build_td(&transformer_descriptor("http://localhost:8081")).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&td.to_json()).unwrap();
        assert_eq!(v["@context"], TD_CONTEXT);
        assert_eq!(v["id"], "urn:dev:smartports:EventTransformer");
        assert_eq!(v["securityDefinitions"]["basic_sc"]["scheme"], "basic");
        assert_eq!(v["securityDefinitions"]["basic_sc"]["in"], "header");
        assert_eq!(v["security"][0], "basic_sc");
        let tm = &v["actions"]["transformMessage"];
        assert_eq!(tm["input"]["properties"]["json"]["type"], "boolean");
        assert_eq!(tm["forms"][0]["href"], "http://localhost:8081/transformmessage");
        // Declaration order survives serialization.
        let text = String::from_utf8(td.to_json()).unwrap();
        assert!(text.find("\"transformMessage\"").unwrap() < text.find("\"sendEventMap\"").unwrap());
        assert_eq!(v["actions"].as_object().unwrap().len(), 2);
        for p in ["outputHost", "outputQueue", "eventMap"] {
            assert!(v["actions"]["sendEventMap"]["input"]["properties"].get(p).is_some());
        }
    }

    #[test]
    fn round_trip_and_determinism() {
        for d in [
            transformer_descriptor("http://h:1"),
            cep_descriptor("http://h:2/"),
            actions_descriptor("http://h:3"),
        ] {
            let td = build_td(&d).unwrap();
            let back: ThingDescription = serde_json::from_slice(&td.to_json()).unwrap();
            assert_eq!(back, td);
            assert_eq!(td.to_json(), build_td(&d).unwrap().to_json());
        }
    }

    #[test]
    fn cep_forms_and_property() {
        let td = build_td(&cep_descriptor("http://h:2/")).unwrap();
        let hrefs: Vec<_> = td.actions.values().map(|a| a.forms[0].href.as_str()).collect();
        assert_eq!(hrefs, vec!["http://h:2/schema", "http://h:2/pattern", "http://h:2/dataflow"]);
        assert!(td.properties.contains_key("deploymentsCount"));
    }

    #[test]
    fn empty_and_duplicate() {
        let mut d = ServiceDescriptor {
            name: "Nothing".into(),
            base_url: "http://x".into(),
            actions: vec![],
            properties: vec![],
        };
        let td = build_td(&d).unwrap();
        assert!(td.actions.is_empty());
        let v: serde_json::Value = serde_json::from_slice(&td.to_json()).unwrap();
        assert!(v["actions"].as_object().unwrap().is_empty());
        let a = transformer_descriptor("http://x").actions[0].clone();
        d.actions = vec![a.clone(), a];
        assert_eq!(build_td(&d), Err(TdError::DuplicateAction("transformMessage".into())));
    }
}
