//! Statement runtime: deployments, routing, contexts and windows.
//!
//! The engine is single-writer and clock-driven: every call carries the
//! current engine time and time may never go backwards.

mod agg;
mod compile;

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use indexmap::IndexMap;
use serde::Serialize;
use thiserror::Error;

use self::agg::{Agg, TwoStack};
use self::compile::{lower, lower_projection, CExpr, Projection, Scope, StreamType};
use super::ast::{EplStatement, StatementBody};
use super::{parse_statement, EplError};
use crate::event::{EventRecord, EventSchema, FieldType, Timestamp, Value};

pub type DeploymentId = u64;

const NANOS_PER_SEC: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DeployError {
    #[error("unknown schema or stream `{0}`")]
    UnknownSchema(String),
    #[error("unknown context `{0}`")]
    UnknownContext(String),
    #[error("schema or stream `{0}` already exists")]
    DuplicateSchema(String),
    #[error("context `{0}` already exists")]
    DuplicateContext(String),
    #[error("dataflow `{0}` already exists")]
    DuplicateDataflow(String),
    #[error("type error: {0}")]
    TypeError(String),
    #[error("inserting into `{0}` would feed the statement its own output")]
    Cycle(String),
    #[error("`{name}` is still used by deployment {by}")]
    InUse { name: String, by: DeploymentId },
    #[error("unknown deployment {0}")]
    UnknownDeployment(DeploymentId),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("engine time moved backwards from {last} to {now}")]
    ClockRegression { last: Timestamp, now: Timestamp },
    #[error("unknown stream `{0}`")]
    UnknownStream(String),
    #[error("invalid event: {0}")]
    InvalidEvent(String),
}

/// A row produced by a deployed select or pattern.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ComplexEvent {
    pub stream_name: String,
    pub values: BTreeMap<String, Value>,
    pub tags: Vec<(String, String)>,
    pub detect_ts: Timestamp,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_ts: Option<Timestamp>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transf_ts: Option<Timestamp>,
    pub deployment: DeploymentId,
}

impl ComplexEvent {
    pub fn tag(&self, name: &str) -> Option<&str> {
        self.tags.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone)]
struct Row {
    values: Vec<Value>,
    gen_ts: Option<Timestamp>,
    transf_ts: Option<Timestamp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum KeyPart {
    Int(i64),
    Float(u64),
    Str(String),
    Bool(bool),
}

type GroupKey = Vec<KeyPart>;

fn key_part(v: &Value) -> KeyPart {
    match v {
        Value::Integer(i) => KeyPart::Int(*i),
        // -0.0 and 0.0 group together.
        Value::Double(x) => KeyPart::Float(if *x == 0.0 { 0 } else { x.to_bits() }),
        Value::String(s) => KeyPart::Str(s.clone()),
        Value::Boolean(b) => KeyPart::Bool(*b),
    }
}

#[derive(Debug)]
enum StreamOrigin {
    Schema,
    Derived(BTreeSet<DeploymentId>),
}

#[derive(Debug)]
struct StreamInfo {
    ty: StreamType,
    origin: StreamOrigin,
}

#[derive(Debug)]
struct GroupAcc {
    agg: Agg,
    last: Row,
}

#[derive(Debug)]
enum Window {
    /// Stateless: one row per matching event.
    None,
    /// Aggregates over everything seen so far.
    Unbounded { groups: IndexMap<GroupKey, GroupAcc> },
    Sliding {
        dur: i64,
        /// Arrival time and group of every retained event, oldest first.
        events: VecDeque<(Timestamp, GroupKey)>,
        groups: HashMap<GroupKey, (TwoStack, Row)>,
    },
    Context {
        dur: i64,
        /// Start of the open interval; unset until the engine clock is.
        start: Option<Timestamp>,
        snapshot: bool,
        groups: IndexMap<GroupKey, GroupAcc>,
    },
}

#[derive(Debug)]
struct Query {
    source: String,
    output: String,
    routed: bool,
    tags: Vec<(String, String)>,
    filter: Option<CExpr>,
    proj: Projection,
    group_by: Vec<CExpr>,
    /// Output column index for each field of the output stream's layout.
    route_perm: Vec<usize>,
    window: Window,
}

#[derive(Debug)]
enum Runtime {
    Schema(String),
    Context(String),
    Dataflow { name: String, schema: String },
    Query(Box<Query>),
}

#[derive(Debug)]
struct Deployment {
    statement: EplStatement,
    runtime: Runtime,
}

/// One engine instance. See the module docs for the threading contract.
#[derive(Debug, Default)]
pub struct Engine {
    streams: HashMap<String, StreamInfo>,
    schemas: HashMap<String, EventSchema>,
    contexts: HashMap<String, u64>,
    deployments: BTreeMap<DeploymentId, Deployment>,
    subscribers: HashMap<String, Vec<DeploymentId>>,
    next_id: DeploymentId,
    now: Option<Timestamp>,
}

struct Emitted {
    event: ComplexEvent,
    route: Option<Row>,
}

impl Query {
    fn group_key(&self, row: &[Value]) -> GroupKey {
        self.group_by.iter().map(|g| key_part(&g.eval(row, None))).collect()
    }

    fn single(&self, row: &Row) -> Agg {
        let inputs: Vec<Value> = self.proj.slots.inputs.iter().map(|e| e.eval(&row.values, None)).collect();
        Agg::single(&inputs, row.gen_ts)
    }

    fn emit(&self, id: DeploymentId, row: &Row, agg: Option<&Agg>, detect_ts: Timestamp) -> Emitted {
        self_emit(&self.proj, &self.output, self.routed, &self.tags, &self.route_perm, id, row, agg, detect_ts)
    }

    /// Closes every context interval that ended at or before `now`.
    fn roll(&mut self, id: DeploymentId, now: Timestamp, out: &mut Vec<Emitted>) {
        let Window::Context { dur, start, snapshot, groups } = &mut self.window else {
            return;
        };
        let Some(s) = start else {
            *start = Some(now);
            return;
        };
        while *s + *dur <= now {
            let end = *s + *dur;
            if groups.is_empty() {
                *s += (now - *s) / *dur * *dur;
                break;
            }
            let closed = std::mem::take(groups);
            *s = end;
            if *snapshot {
                for acc in closed.values() {
                    out.push(self_emit(&self.proj, &self.output, self.routed, &self.tags, &self.route_perm, id, &acc.last, Some(&acc.agg), end));
                }
            }
        }
    }

    fn next_end(&self) -> Option<Timestamp> {
        match &self.window {
            Window::Context { dur, start: Some(s), .. } => Some(s + dur),
            _ => None,
        }
    }

    fn on_row(&mut self, id: DeploymentId, row: Row, now: Timestamp, out: &mut Vec<Emitted>) {
        self.roll(id, now, out);
        if let Some(f) = &self.filter {
            if !f.test(&row.values, None) {
                return;
            }
        }
        let item = match &self.window {
            Window::None => {
                out.push(self.emit(id, &row, None, now));
                return;
            }
            _ => self.single(&row),
        };
        let key = self.group_key(&row.values);
        let identity = Agg::empty(&self.proj.slots.integer);
        match &mut self.window {
            Window::None => unreachable!(),
            Window::Unbounded { groups } => {
                let acc = groups.entry(key).or_insert_with(|| GroupAcc {
                    agg: identity,
                    last: row.clone(),
                });
                acc.agg.merge(&item);
                acc.last = row;
                let e = self_emit(&self.proj, &self.output, self.routed, &self.tags, &self.route_perm, id, &acc.last, Some(&acc.agg), now);
                out.push(e);
            }
            Window::Context { snapshot, groups, .. } => {
                let acc = groups.entry(key).or_insert_with(|| GroupAcc {
                    agg: identity,
                    last: row.clone(),
                });
                acc.agg.merge(&item);
                acc.last = row;
                if !*snapshot {
                    let e = self_emit(&self.proj, &self.output, self.routed, &self.tags, &self.route_perm, id, &acc.last, Some(&acc.agg), now);
                    out.push(e);
                }
            }
            Window::Sliding { dur, events, groups } => {
                let horizon = now - *dur;
                while let Some((ts, _)) = events.front() {
                    if *ts >= horizon {
                        break;
                    }
                    let (_, k) = events.pop_front().expect("front exists");
                    if let Some((stack, _)) = groups.get_mut(&k) {
                        stack.pop();
                        if stack.is_empty() {
                            groups.remove(&k);
                        }
                    }
                }
                events.push_back((now, key.clone()));
                let entry = groups
                    .entry(key)
                    .or_insert_with(|| (TwoStack::new(identity), row.clone()));
                entry.0.push(item);
                entry.1 = row;
                let total = entry.0.total();
                let e = self_emit(&self.proj, &self.output, self.routed, &self.tags, &self.route_perm, id, &entry.1, Some(&total), now);
                out.push(e);
            }
        }
    }
}

// Free-standing so it can be called while the window is mutably borrowed.
#[allow(clippy::too_many_arguments)]
fn self_emit(
    proj: &Projection,
    output: &str,
    routed: bool,
    tags: &[(String, String)],
    route_perm: &[usize],
    id: DeploymentId,
    row: &Row,
    agg: Option<&Agg>,
    detect_ts: Timestamp,
) -> Emitted {
    let cols: Vec<Value> = proj.columns.iter().map(|(_, _, e)| e.eval(&row.values, agg)).collect();
    let (gen_ts, transf_ts) = match agg {
        Some(a) => (a.min_gen, None),
        None => (row.gen_ts, row.transf_ts),
    };
    let route = routed.then(|| Row {
        values: route_perm.iter().map(|&i| cols[i].clone()).collect(),
        gen_ts,
        transf_ts,
    });
    let values = proj
        .columns
        .iter()
        .zip(cols)
        .map(|((name, _, _), v)| (name.clone(), v))
        .collect();
    Emitted {
        event: ComplexEvent {
            stream_name: output.to_owned(),
            values,
            tags: tags.to_vec(),
            detect_ts,
            gen_ts,
            transf_ts,
            deployment: id,
        },
        route,
    }
}

impl Engine {
    pub fn new() -> Self {
        Self::default()
    }

    /// Current engine time, once any time has been observed.
    pub fn now(&self) -> Option<Timestamp> {
        self.now
    }

    /// A registered `create schema` type.
    pub fn schema(&self, name: &str) -> Option<&EventSchema> {
        self.schemas.get(name)
    }

    /// Field layout of any known stream, registered or derived.
    pub fn stream_fields(&self, name: &str) -> Option<Vec<(String, FieldType)>> {
        self.streams.get(name).map(|s| s.ty.fields.clone())
    }

    pub fn deployments(&self) -> impl Iterator<Item = (DeploymentId, &EplStatement)> {
        self.deployments.iter().map(|(id, d)| (*id, &d.statement))
    }

    pub fn statement(&self, id: DeploymentId) -> Option<&EplStatement> {
        self.deployments.get(&id).map(|d| &d.statement)
    }

    pub fn deploy_text(&mut self, text: &str) -> Result<DeploymentId, EplError> {
        let stmt = parse_statement(text)?;
        Ok(self.deploy(stmt)?)
    }

    pub fn deploy(&mut self, stmt: EplStatement) -> Result<DeploymentId, DeployError> {
        let id = self.next_id + 1;
        let runtime = match &stmt.body {
            StatementBody::CreateSchema(s) => {
                if self.streams.contains_key(&s.name) {
                    return Err(DeployError::DuplicateSchema(s.name.clone()));
                }
                let schema = EventSchema::new(s.name.clone(), s.fields.iter().cloned())
                    .map_err(|e| DeployError::TypeError(e.to_string()))?;
                self.streams.insert(
                    s.name.clone(),
                    StreamInfo {
                        ty: StreamType {
                            fields: s.fields.clone(),
                        },
                        origin: StreamOrigin::Schema,
                    },
                );
                self.schemas.insert(s.name.clone(), schema);
                Runtime::Schema(s.name.clone())
            }
            StatementBody::CreateContext(c) => {
                if self.contexts.contains_key(&c.name) {
                    return Err(DeployError::DuplicateContext(c.name.clone()));
                }
                self.contexts.insert(c.name.clone(), c.duration_s);
                Runtime::Context(c.name.clone())
            }
            StatementBody::Dataflow(d) => {
                if !self.streams.contains_key(&d.out_schema) {
                    return Err(DeployError::UnknownSchema(d.out_schema.clone()));
                }
                let taken = self.deployments.values().any(|x| {
                    matches!(&x.runtime, Runtime::Dataflow { name, .. } if *name == d.name)
                });
                if taken {
                    return Err(DeployError::DuplicateDataflow(d.name.clone()));
                }
                Runtime::Dataflow {
                    name: d.name.clone(),
                    schema: d.out_schema.clone(),
                }
            }
            StatementBody::Select(_) | StatementBody::Pattern(_) => {
                let q = self.compile_query(&stmt)?;
                self.install_query(id, &q);
                Runtime::Query(Box::new(q))
            }
        };
        self.next_id = id;
        self.deployments.insert(
            id,
            Deployment {
                statement: stmt,
                runtime,
            },
        );
        self.rebuild_subscribers();
        Ok(id)
    }

    fn compile_query(&self, stmt: &EplStatement) -> Result<Query, DeployError> {
        let (source, binding, projections, insert_into, filter, group_by, window) = match &stmt.body {
            StatementBody::Select(s) => {
                let window = match (&s.context, s.source.window_s) {
                    (Some(ctx), _) => {
                        let d = *self
                            .contexts
                            .get(ctx)
                            .ok_or_else(|| DeployError::UnknownContext(ctx.clone()))?;
                        Some(Window::Context {
                            dur: d as i64 * NANOS_PER_SEC,
                            start: self.now,
                            snapshot: s.snapshot_on_terminate,
                            groups: IndexMap::new(),
                        })
                    }
                    (None, Some(w)) => Some(Window::Sliding {
                        dur: w as i64 * NANOS_PER_SEC,
                        events: VecDeque::new(),
                        groups: HashMap::new(),
                    }),
                    (None, None) => None,
                };
                (
                    &s.source.stream,
                    s.source.binding.as_deref(),
                    &s.projections,
                    &s.insert_into,
                    None,
                    &s.group_by[..],
                    window,
                )
            }
            StatementBody::Pattern(p) => (
                &p.every.stream,
                Some(p.every.binding.as_str()),
                &p.projections,
                &p.insert_into,
                p.every.filter.as_ref(),
                &[][..],
                None,
            ),
            _ => unreachable!("only selects and patterns compile to queries"),
        };
        let info = self
            .streams
            .get(source)
            .ok_or_else(|| DeployError::UnknownSchema(source.clone()))?;
        let scope = Scope {
            stream_name: source,
            stream: &info.ty,
            binding,
        };
        let is_pattern = matches!(stmt.body, StatementBody::Pattern(_));
        let proj = lower_projection(projections, &scope, !is_pattern)?;
        let filter = filter
            .map(|f| {
                let (c, t) = lower(f, &scope, None)?;
                if t != FieldType::Boolean {
                    return Err(DeployError::TypeError(format!("filter `{f}` is {t}, expected boolean")));
                }
                Ok(c)
            })
            .transpose()?;
        let group_by = group_by
            .iter()
            .map(|g| lower(&crate::epl::ast::Expr::Field(g.clone()), &scope, None).map(|(c, _)| c))
            .collect::<Result<Vec<_>, _>>()?;
        let window = match window {
            Some(w) => w,
            None if proj.has_aggregate || !group_by.is_empty() => Window::Unbounded {
                groups: IndexMap::new(),
            },
            None => Window::None,
        };

        let out_ty = proj.output_type();
        let (output, routed, route_perm) = match insert_into {
            Some(target) => {
                let perm = match self.streams.get(target) {
                    Some(existing) => {
                        if !existing.ty.same_shape(&out_ty) {
                            return Err(DeployError::TypeError(format!(
                                "columns do not match the existing stream `{target}`"
                            )));
                        }
                        existing
                            .ty
                            .fields
                            .iter()
                            .map(|(n, _)| out_ty.index_of(n).expect("same shape"))
                            .collect()
                    }
                    None => (0..out_ty.fields.len()).collect(),
                };
                if self.reaches(target, source) {
                    return Err(DeployError::Cycle(target.clone()));
                }
                (target.clone(), true, perm)
            }
            None => (stmt.name().unwrap_or(source).to_owned(), false, Vec::new()),
        };
        Ok(Query {
            source: source.clone(),
            output,
            routed,
            tags: stmt.tags(),
            filter,
            proj,
            group_by,
            route_perm,
            window,
        })
    }

    /// Whether events on `from` can flow into `to` through deployed inserts.
    fn reaches(&self, from: &str, to: &str) -> bool {
        let mut seen = BTreeSet::new();
        let mut stack = vec![from.to_owned()];
        while let Some(s) = stack.pop() {
            if s == to {
                return true;
            }
            if !seen.insert(s.clone()) {
                continue;
            }
            for d in self.deployments.values() {
                if let Runtime::Query(q) = &d.runtime {
                    if q.routed && q.source == s {
                        stack.push(q.output.clone());
                    }
                }
            }
        }
        false
    }

    fn install_query(&mut self, id: DeploymentId, q: &Query) {
        if !q.routed {
            return;
        }
        match self.streams.get_mut(&q.output) {
            Some(StreamInfo {
                origin: StreamOrigin::Derived(producers),
                ..
            }) => {
                producers.insert(id);
            }
            Some(_) => {}
            None => {
                self.streams.insert(
                    q.output.clone(),
                    StreamInfo {
                        ty: q.proj.output_type(),
                        origin: StreamOrigin::Derived(BTreeSet::from([id])),
                    },
                );
            }
        }
    }

    fn rebuild_subscribers(&mut self) {
        self.subscribers.clear();
        for (id, d) in &self.deployments {
            if let Runtime::Query(q) = &d.runtime {
                self.subscribers.entry(q.source.clone()).or_default().push(*id);
            }
        }
    }

    fn user_of(&self, stream: &str) -> Option<DeploymentId> {
        self.deployments.iter().find_map(|(id, d)| match &d.runtime {
            Runtime::Query(q) if q.source == stream || (q.routed && q.output == stream) => Some(*id),
            Runtime::Dataflow { schema, .. } if schema == stream => Some(*id),
            _ => None,
        })
    }

    pub fn undeploy(&mut self, id: DeploymentId) -> Result<(), DeployError> {
        let d = self.deployments.get(&id).ok_or(DeployError::UnknownDeployment(id))?;
        match &d.runtime {
            Runtime::Schema(name) => {
                if let Some(by) = self.user_of(name) {
                    return Err(DeployError::InUse {
                        name: name.clone(),
                        by,
                    });
                }
                let name = name.clone();
                self.streams.remove(&name);
                self.schemas.remove(&name);
            }
            Runtime::Context(name) => {
                // Bound selects keep the duration they were deployed with.
                let name = name.clone();
                self.contexts.remove(&name);
            }
            Runtime::Dataflow { .. } => {}
            Runtime::Query(q) => {
                let output = q.output.clone();
                if let Some(StreamInfo {
                    origin: StreamOrigin::Derived(producers),
                    ..
                }) = self.streams.get_mut(&output)
                {
                    producers.remove(&id);
                }
            }
        }
        self.deployments.remove(&id);
        self.rebuild_subscribers();
        let orphaned: Vec<String> = self
            .streams
            .iter()
            .filter(|(_, s)| matches!(&s.origin, StreamOrigin::Derived(p) if p.is_empty()))
            .map(|(n, _)| n.clone())
            .collect();
        for name in orphaned {
            if self.user_of(&name).is_none() {
                self.streams.remove(&name);
            }
        }
        Ok(())
    }

    fn set_clock(&mut self, now: Timestamp) -> Result<(), EngineError> {
        if let Some(last) = self.now {
            if now < last {
                return Err(EngineError::ClockRegression { last, now });
            }
        }
        self.now = Some(now);
        Ok(())
    }

    /// Closes elapsed context intervals, emitting their snapshots in time
    /// order, and routes the results downstream.
    pub fn advance_time(&mut self, now: Timestamp) -> Result<Vec<ComplexEvent>, EngineError> {
        self.set_clock(now)?;
        let mut out = Vec::new();
        loop {
            let next = self
                .deployments
                .iter()
                .filter_map(|(id, d)| match &d.runtime {
                    Runtime::Query(q) => q.next_end().map(|end| (end, *id)),
                    _ => None,
                })
                .min();
            let Some((end, id)) = next.filter(|(end, _)| *end <= now) else {
                break;
            };
            let mut emitted = Vec::new();
            if let Some(Deployment {
                runtime: Runtime::Query(q),
                ..
            }) = self.deployments.get_mut(&id)
            {
                q.roll(id, end, &mut emitted);
            }
            self.cascade(emitted, end, &mut out);
        }
        // Contexts deployed before the clock was known start now.
        for d in self.deployments.values_mut() {
            if let Runtime::Query(q) = &mut d.runtime {
                if let Window::Context { start: start @ None, .. } = &mut q.window {
                    *start = Some(now);
                }
            }
        }
        Ok(out)
    }

    /// Feeds one event; outputs include everything derived from it and any
    /// context snapshots due at `now`.
    pub fn on_event(&mut self, record: &EventRecord, now: Timestamp) -> Result<Vec<ComplexEvent>, EngineError> {
        let info = self
            .streams
            .get(&record.schema_name)
            .ok_or_else(|| EngineError::UnknownStream(record.schema_name.clone()))?;
        if record.values.len() != info.ty.fields.len() {
            return Err(EngineError::InvalidEvent(format!(
                "`{}` expects {} fields, got {}",
                record.schema_name,
                info.ty.fields.len(),
                record.values.len()
            )));
        }
        let mut values = Vec::with_capacity(info.ty.fields.len());
        for (name, ty) in &info.ty.fields {
            match record.values.get(name) {
                Some(v) if v.field_type() == *ty => values.push(v.clone()),
                Some(v) => {
                    return Err(EngineError::InvalidEvent(format!(
                        "field `{name}` is {}, expected {ty}",
                        v.field_type()
                    )))
                }
                None => return Err(EngineError::InvalidEvent(format!("missing field `{name}`"))),
            }
        }
        let mut out = self.advance_time(now)?;
        let row = Row {
            values,
            gen_ts: record.gen_ts,
            transf_ts: record.transf_ts,
        };
        self.route(&record.schema_name, row, now, &mut out);
        Ok(out)
    }

    /// Emits `emitted` and, depth first, everything derived from it, so a
    /// derived row is fully processed before its next sibling.
    fn cascade(&mut self, emitted: Vec<Emitted>, now: Timestamp, out: &mut Vec<ComplexEvent>) {
        for e in emitted {
            let stream = e.route.as_ref().map(|_| e.event.stream_name.clone());
            out.push(e.event);
            if let (Some(stream), Some(row)) = (stream, e.route) {
                self.route(&stream, row, now, out);
            }
        }
    }

    fn route(&mut self, stream: &str, row: Row, now: Timestamp, out: &mut Vec<ComplexEvent>) {
        let Some(subs) = self.subscribers.get(stream).cloned() else {
            return;
        };
        for id in subs {
            let mut emitted = Vec::new();
            if let Some(Deployment {
                runtime: Runtime::Query(q),
                ..
            }) = self.deployments.get_mut(&id)
            {
                q.on_row(id, row.clone(), now, &mut emitted);
            }
            self.cascade(emitted, now, out);
        }
    }
}
