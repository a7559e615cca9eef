//! Building blocks for an IoT telemetry pipeline: payload homogenization,
//! an embedded complex-event-processing engine, a small message broker,
//! the three pipeline services and a latency benchmark harness.

pub mod actions;
pub mod alert;
pub mod broker;
pub mod cep;
pub mod epl;
pub mod event;
pub mod harness;
pub mod service;
pub mod simulator;
pub mod thingdesc;
pub mod transformer;

pub use event::{EventRecord, EventSchema, FieldType, Timestamp, Value};
