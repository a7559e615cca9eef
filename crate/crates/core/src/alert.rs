//! The message the CEP service publishes for every tagged complex event.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::epl::ComplexEvent;
use crate::event::{Timestamp, Value};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub name: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AlertEnvelope {
    pub stream: String,
    pub values: BTreeMap<String, Value>,
    pub tags: Vec<Tag>,
    pub detect_ts: Timestamp,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_ts: Option<Timestamp>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transf_ts: Option<Timestamp>,
}

impl AlertEnvelope {
    pub fn tag(&self, name: &str) -> Option<&str> {
        self.tags.iter().find(|t| t.name == name).map(|t| t.value.as_str())
    }

    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("envelopes serialize")
    }
}

impl From<&ComplexEvent> for AlertEnvelope {
    fn from(ce: &ComplexEvent) -> Self {
        AlertEnvelope {
            stream: ce.stream_name.clone(),
            values: ce.values.clone(),
            tags: ce
                .tags
                .iter()
                .map(|(name, value)| Tag {
                    name: name.clone(),
                    value: value.clone(),
                })
                .collect(),
            detect_ts: ce.detect_ts,
            gen_ts: ce.gen_ts,
            transf_ts: ce.transf_ts,
        }
    }
}
