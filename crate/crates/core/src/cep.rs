//! The CEP service: an HTTP API around one engine, fed by broker dataflows.
//!
//! Every engine call happens on a single loop task. HTTP handlers send it
//! control messages; dataflow consumers send it decoded records through a
//! bounded channel, so a slow engine backs up into the broker's prefetch.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, oneshot};
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use crate::alert::AlertEnvelope;
use crate::broker::{
    broker_addr_on, default_port, Backoff, BrokerClient, BrokerError, Confirm, QueueName, DEFAULT_PREFETCH,
};
use crate::epl::{
    parse_statement, ComplexEvent, DeployError, DeploymentId, Engine, EngineError, EplStatement, StatementBody,
    StatementKind,
};
use crate::event::{decode_canonical, now_nanos, EventRecord, Timestamp};
use crate::service::{advertised_base, json_error};
use crate::thingdesc::{build_td, cep_descriptor, td_router};

pub const DEFAULT_HTTP_PORT: u16 = 8080;
pub const DEFAULT_ALERTS_QUEUE: &str = "alerts";
pub const EVENT_CHANNEL_CAPACITY: usize = 65_536;
/// Carries the engine time, in nanoseconds, for `POST /clock`.
pub const TEST_CLOCK_HEADER: &str = "x-portpipe-test-clock";
/// `@Tag(name='queue', value=Q)` sends a statement's envelopes to `Q`
/// instead of the alerts queue.
pub const QUEUE_TAG: &str = "queue";
const TICK: Duration = Duration::from_millis(50);
const CONNECT_TIMEOUT: Duration = Duration::from_secs(3);

#[derive(Debug, Clone)]
pub struct CepConfig {
    pub alerts_queue: QueueName,
    pub alerts_host: String,
    /// Port assumed for broker hosts written without one.
    pub broker_port: u16,
    pub prefetch: u32,
    /// Engine time follows each event's genTs instead of the wall clock.
    pub test_clock: bool,
}

impl Default for CepConfig {
    fn default() -> Self {
        Self {
            alerts_queue: QueueName::new(DEFAULT_ALERTS_QUEUE).expect("valid default"),
            alerts_host: "localhost".into(),
            broker_port: default_port(),
            prefetch: DEFAULT_PREFETCH,
            test_clock: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum CepError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("http server: {0}")]
    Http(#[from] std::io::Error),
}

#[derive(Debug, Default)]
pub struct CepStats {
    pub received: AtomicU64,
    pub ingested: AtomicU64,
    pub rejected: AtomicU64,
    pub emitted: AtomicU64,
    pub published: AtomicU64,
    pub dead_lettered: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CepStatsSnapshot {
    /// Records taken off dataflow queues.
    pub received: u64,
    /// Records the engine accepted.
    pub ingested: u64,
    /// Records the engine refused (dead-lettered).
    pub rejected: u64,
    /// Complex events produced, tagged or not.
    pub emitted: u64,
    /// Envelopes confirmed by the broker.
    pub published: u64,
    /// Undecodable or refused records sent to a dead-letter queue.
    pub dead_lettered: u64,
}

impl CepStats {
    pub fn snapshot(&self) -> CepStatsSnapshot {
        let get = |a: &AtomicU64| a.load(Ordering::Relaxed);
        CepStatsSnapshot {
            received: get(&self.received),
            ingested: get(&self.ingested),
            rejected: get(&self.rejected),
            emitted: get(&self.emitted),
            published: get(&self.published),
            dead_lettered: get(&self.dead_lettered),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeploymentInfo {
    pub id: DeploymentId,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub statement: String,
}

/// Where an ingested record came from, so it can be acked once its
/// envelopes are confirmed.
struct Origin {
    client: BrokerClient,
    tag: u64,
    dlq: QueueName,
}

struct Ingest {
    record: EventRecord,
    origin: Option<Origin>,
}

enum Control {
    Deploy {
        stmt: EplStatement,
        text: String,
        reply: oneshot::Sender<Result<DeploymentId, DeployError>>,
    },
    Undeploy {
        id: DeploymentId,
        reply: oneshot::Sender<Result<(), DeployError>>,
    },
    List {
        reply: oneshot::Sender<Vec<DeploymentInfo>>,
    },
    Clock {
        now: Timestamp,
        reply: oneshot::Sender<Result<usize, EngineError>>,
    },
}

struct Pending {
    confirms: Vec<Confirm>,
    origin: Option<Origin>,
}

/// A broker connection that reconnects with backoff until it can publish.
struct Publisher {
    addr: String,
    client: Option<BrokerClient>,
    backoff: Backoff,
}

impl Publisher {
    async fn publish(&mut self, queue: &QueueName, bytes: &[u8], shutdown: &CancellationToken) -> Option<Confirm> {
        loop {
            let client = match &self.client {
                Some(c) => c,
                None => match BrokerClient::connect(&self.addr).await {
                    Ok(c) => {
                        self.backoff.reset();
                        self.client.insert(c)
                    }
                    Err(e) => {
                        let delay = self.backoff.next_delay();
                        warn!(error = %e, ?delay, "alerts broker unreachable");
                        tokio::select! {
                            _ = shutdown.cancelled() => return None,
                            _ = tokio::time::sleep(delay) => continue,
                        }
                    }
                },
            };
            match client.publish_confirm(queue, bytes) {
                Ok(c) => return Some(c),
                Err(e) => {
                    warn!(error = %e, "alerts connection lost");
                    self.client = None;
                }
            }
        }
    }
}

struct Core {
    engine: Engine,
    texts: BTreeMap<DeploymentId, String>,
    cfg: Arc<CepConfig>,
    publisher: Publisher,
    stats: Arc<CepStats>,
    acks: mpsc::UnboundedSender<Pending>,
    shutdown: CancellationToken,
}

impl Core {
    fn clock(&self, event_ts: Option<Timestamp>) -> Timestamp {
        let t = match (self.cfg.test_clock, event_ts) {
            (true, Some(ts)) => ts,
            (true, None) => self.engine.now().unwrap_or_else(now_nanos),
            (false, _) => now_nanos(),
        };
        self.engine.now().map_or(t, |last| t.max(last))
    }

    async fn control(&mut self, c: Control) {
        match c {
            Control::Deploy { stmt, text, reply } => {
                if !self.cfg.test_clock {
                    // Contexts start at deploy time, not at the last tick.
                    let now = self.clock(None);
                    if let Ok(out) = self.engine.advance_time(now) {
                        self.emit(out, None).await;
                    }
                }
                let res = self.engine.deploy(stmt);
                if let Ok(id) = res {
                    self.texts.insert(id, text);
                }
                let _ = reply.send(res);
            }
            Control::Undeploy { id, reply } => {
                let res = self.engine.undeploy(id);
                if res.is_ok() {
                    self.texts.remove(&id);
                }
                let _ = reply.send(res);
            }
            Control::List { reply } => {
                let list = self
                    .engine
                    .deployments()
                    .map(|(id, stmt)| DeploymentInfo {
                        id,
                        kind: kind_name(stmt.kind()).into(),
                        name: statement_name(stmt),
                        statement: self.texts.get(&id).cloned().unwrap_or_default(),
                    })
                    .collect();
                let _ = reply.send(list);
            }
            Control::Clock { now, reply } => match self.engine.advance_time(now) {
                Ok(out) => {
                    let n = out.len();
                    self.emit(out, None).await;
                    let _ = reply.send(Ok(n));
                }
                Err(e) => {
                    let _ = reply.send(Err(e));
                }
            },
        }
    }

    async fn ingest(&mut self, ev: Ingest) {
        let now = self.clock(ev.record.gen_ts);
        match self.engine.on_event(&ev.record, now) {
            Ok(out) => {
                self.stats.ingested.fetch_add(1, Ordering::Relaxed);
                self.emit(out, ev.origin).await;
            }
            Err(e) => {
                debug!(error = %e, "record refused by the engine");
                self.stats.rejected.fetch_add(1, Ordering::Relaxed);
                let Some(origin) = ev.origin else { return };
                let letter = json!({
                    "reason": e.to_string(),
                    "record": String::from_utf8_lossy(&crate::event::encode_canonical(&ev.record)),
                });
                match origin.client.publish_confirm(&origin.dlq, letter.to_string().as_bytes()) {
                    Ok(c) => {
                        self.stats.dead_lettered.fetch_add(1, Ordering::Relaxed);
                        let _ = self.acks.send(Pending {
                            confirms: vec![c],
                            origin: Some(origin),
                        });
                    }
                    // Left unacked; the broker redelivers after the reconnect.
                    Err(_) => origin.client.close(),
                }
            }
        }
    }

    async fn tick(&mut self) {
        let now = self.clock(None);
        match self.engine.advance_time(now) {
            Ok(out) if !out.is_empty() => self.emit(out, None).await,
            Ok(_) => {}
            Err(e) => warn!(error = %e, "clock tick refused"),
        }
    }

    /// Publishes the tagged events; untagged ones only feed other statements.
    async fn emit(&mut self, out: Vec<ComplexEvent>, origin: Option<Origin>) {
        self.stats.emitted.fetch_add(out.len() as u64, Ordering::Relaxed);
        let mut confirms = Vec::new();
        for ce in out.iter().filter(|c| !c.tags.is_empty()) {
            let queue = ce
                .tag(QUEUE_TAG)
                .and_then(|q| QueueName::new(q).ok())
                .unwrap_or_else(|| self.cfg.alerts_queue.clone());
            let bytes = AlertEnvelope::from(ce).to_json();
            match self.publisher.publish(&queue, &bytes, &self.shutdown).await {
                Some(c) => confirms.push(c),
                None => return,
            }
        }
        if confirms.is_empty() && origin.is_none() {
            return;
        }
        let _ = self.acks.send(Pending { confirms, origin });
    }
}

fn kind_name(k: StatementKind) -> &'static str {
    match k {
        StatementKind::Schema => "schema",
        StatementKind::Context => "context",
        StatementKind::Select => "select",
        StatementKind::Pattern => "pattern",
        StatementKind::Dataflow => "dataflow",
    }
}

fn statement_name(stmt: &EplStatement) -> Option<String> {
    match &stmt.body {
        StatementBody::CreateSchema(s) => Some(s.name.clone()),
        StatementBody::CreateContext(c) => Some(c.name.clone()),
        StatementBody::Dataflow(d) => Some(d.name.clone()),
        _ => stmt.name().map(str::to_owned),
    }
}

/// Acks inputs in order once every envelope derived from them is confirmed.
async fn acker(mut rx: mpsc::UnboundedReceiver<Pending>, stats: Arc<CepStats>) {
    while let Some(p) = rx.recv().await {
        let n = p.confirms.len() as u64;
        let mut ok = true;
        for c in p.confirms {
            ok &= c.await.is_ok();
        }
        match (ok, p.origin) {
            (true, Some(o)) => {
                stats.published.fetch_add(n, Ordering::Relaxed);
                let _ = o.client.ack_nowait(o.tag);
            }
            (true, None) => {
                stats.published.fetch_add(n, Ordering::Relaxed);
            }
            // Closing the input connection makes the broker redeliver.
            (false, Some(o)) => o.client.close(),
            (false, None) => warn!("snapshot envelopes lost with the alerts connection"),
        }
    }
}

async fn engine_loop(
    mut core: Core,
    mut ctrl: mpsc::Receiver<Control>,
    mut events: mpsc::Receiver<Ingest>,
) {
    let mut tick = tokio::time::interval(TICK);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    let shutdown = core.shutdown.clone();
    let wall = !core.cfg.test_clock;
    loop {
        tokio::select! {
            biased;
            _ = shutdown.cancelled() => break,
            Some(c) = ctrl.recv() => core.control(c).await,
            Some(ev) = events.recv() => core.ingest(ev).await,
            _ = tick.tick(), if wall => core.tick().await,
            else => break,
        }
    }
}

struct DataflowTask {
    addr: String,
    queue: QueueName,
    schema: String,
    prefetch: u32,
    events: mpsc::Sender<Ingest>,
    cancel: CancellationToken,
    stats: Arc<CepStats>,
}

impl DataflowTask {
    async fn run(self, first: BrokerClient) {
        let mut client = Some(first);
        let mut backoff = Backoff::default();
        let dlq = self.queue.dead_letter();
        loop {
            let c = match client.take() {
                Some(c) => c,
                None => {
                    let delay = backoff.next_delay();
                    tokio::select! {
                        _ = self.cancel.cancelled() => return,
                        _ = tokio::time::sleep(delay) => {}
                    }
                    match BrokerClient::connect(&self.addr).await {
                        Ok(c) => c,
                        Err(e) => {
                            warn!(queue = %self.queue, error = %e, "dataflow reconnect failed");
                            continue;
                        }
                    }
                }
            };
            if let Err(e) = self.consume(&c, &dlq, &mut backoff).await {
                warn!(queue = %self.queue, error = %e, "dataflow connection lost");
            }
            c.close();
            if self.cancel.is_cancelled() {
                return;
            }
        }
    }

    async fn consume(&self, c: &BrokerClient, dlq: &QueueName, backoff: &mut Backoff) -> Result<(), BrokerError> {
        let mut sub = c.subscribe(&self.queue, self.prefetch).await?;
        backoff.reset();
        loop {
            let d = tokio::select! {
                biased;
                _ = self.cancel.cancelled() => return Ok(()),
                d = sub.next() => d,
            };
            let Some(d) = d else {
                return Err(BrokerError::ConnectionClosed);
            };
            self.stats.received.fetch_add(1, Ordering::Relaxed);
            let reason = match decode_canonical(&d.payload, now_nanos()) {
                Ok(record) if record.schema_name == self.schema => {
                    let ev = Ingest {
                        record,
                        origin: Some(Origin {
                            client: c.clone(),
                            tag: d.tag,
                            dlq: dlq.clone(),
                        }),
                    };
                    tokio::select! {
                        _ = self.cancel.cancelled() => return Ok(()),
                        r = self.events.send(ev) => if r.is_err() { return Ok(()) },
                    }
                    continue;
                }
                Ok(record) => format!("record of `{}` on a dataflow of `{}`", record.schema_name, self.schema),
                Err(e) => e.to_string(),
            };
            let letter = json!({
                "reason": reason,
                "payload": String::from_utf8_lossy(&d.payload),
            });
            c.publish(dlq, letter.to_string().as_bytes()).await?;
            c.ack_nowait(d.tag)?;
            self.stats.dead_lettered.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[derive(Clone)]
struct AppState {
    ctrl: mpsc::Sender<Control>,
    events: mpsc::Sender<Ingest>,
    cfg: Arc<CepConfig>,
    stats: Arc<CepStats>,
    dataflows: Arc<Mutex<HashMap<DeploymentId, CancellationToken>>>,
    shutdown: CancellationToken,
}

impl AppState {
    async fn call<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Control) -> Result<T, Response> {
        let (tx, rx) = oneshot::channel();
        let unavailable = || json_error(StatusCode::SERVICE_UNAVAILABLE, "engine stopped");
        self.ctrl.send(make(tx)).await.map_err(|_| unavailable())?;
        rx.await.map_err(|_| unavailable())
    }

    async fn deploy(&self, stmt: EplStatement, text: String) -> Result<DeploymentId, Response> {
        self.call(|reply| Control::Deploy { stmt, text, reply })
            .await?
            .map_err(deploy_error)
    }
}

#[derive(Deserialize)]
struct SchemaBody {
    schema: String,
}

#[derive(Deserialize)]
struct PatternBody {
    pattern: String,
}

#[derive(Deserialize)]
struct DataflowBody {
    dataflow: String,
    name: String,
}

fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, Response> {
    serde_json::from_slice(bytes).map_err(|e| json_error(StatusCode::BAD_REQUEST, format!("invalid body: {e}")))
}

fn parse(text: &str, allowed: &[StatementKind]) -> Result<EplStatement, Response> {
    let stmt = parse_statement(text).map_err(|e| {
        (
            StatusCode::BAD_REQUEST,
            Json(json!({
                "error": format!("parse error at {e}"),
                "line": e.line,
                "column": e.column,
            })),
        )
            .into_response()
    })?;
    if !allowed.contains(&stmt.kind()) {
        let names: Vec<_> = allowed.iter().map(|k| kind_name(*k)).collect();
        return Err(json_error(
            StatusCode::BAD_REQUEST,
            format!(
                "a {} statement is not accepted here; expected {}",
                kind_name(stmt.kind()),
                names.join(" or ")
            ),
        ));
    }
    Ok(stmt)
}

fn deploy_error(e: DeployError) -> Response {
    let status = match e {
        DeployError::UnknownDeployment(_) => StatusCode::NOT_FOUND,
        DeployError::InUse { .. } => StatusCode::CONFLICT,
        _ => StatusCode::BAD_REQUEST,
    };
    json_error(status, e)
}

fn created(id: DeploymentId) -> Response {
    (StatusCode::CREATED, Json(json!({ "id": id }))).into_response()
}

async fn post_schema(State(st): State<AppState>, bytes: Bytes) -> Response {
    let run = async {
        let b: SchemaBody = body(&bytes)?;
        let stmt = parse(&b.schema, &[StatementKind::Schema])?;
        st.deploy(stmt, b.schema).await
    };
    run.await.map_or_else(|r| r, created)
}

async fn post_pattern(State(st): State<AppState>, bytes: Bytes) -> Response {
    let run = async {
        let b: PatternBody = body(&bytes)?;
        let stmt = parse(
            &b.pattern,
            &[StatementKind::Select, StatementKind::Pattern, StatementKind::Context],
        )?;
        st.deploy(stmt, b.pattern).await
    };
    run.await.map_or_else(|r| r, created)
}

async fn post_dataflow(State(st): State<AppState>, bytes: Bytes) -> Response {
    let run = async {
        let b: DataflowBody = body(&bytes)?;
        let stmt = parse(&b.dataflow, &[StatementKind::Dataflow])?;
        let StatementBody::Dataflow(df) = &stmt.body else {
            unreachable!("kind checked above")
        };
        if df.name != b.name {
            return Err(json_error(
                StatusCode::BAD_REQUEST,
                format!("body name `{}` does not match dataflow `{}`", b.name, df.name),
            ));
        }
        let queue = QueueName::new(df.params.queue_name.clone()).map_err(|e| json_error(StatusCode::BAD_REQUEST, e))?;
        let addr = broker_addr_on(&df.params.host, st.cfg.broker_port);
        let schema = df.out_schema.clone();
        let id = st.deploy(stmt, b.dataflow).await?;
        let connected = async {
            let c = BrokerClient::connect(&addr).await?;
            c.declare(&queue).await?;
            Ok::<_, BrokerError>(c)
        };
        let client = match tokio::time::timeout(CONNECT_TIMEOUT, connected).await {
            Ok(Ok(c)) => c,
            failed => {
                let reason = match failed {
                    Ok(Err(e)) => e.to_string(),
                    _ => format!("timed out connecting to {addr}"),
                };
                let _ = st.call(|reply| Control::Undeploy { id, reply }).await;
                return Err(json_error(StatusCode::BAD_GATEWAY, format!("broker unreachable: {reason}")));
            }
        };
        let cancel = st.shutdown.child_token();
        st.dataflows.lock().unwrap().insert(id, cancel.clone());
        let task = DataflowTask {
            addr,
            queue,
            schema,
            prefetch: st.cfg.prefetch,
            events: st.events.clone(),
            cancel,
            stats: Arc::clone(&st.stats),
        };
        info!(id, queue = %task.queue, "dataflow started");
        tokio::spawn(task.run(client));
        Ok(id)
    };
    run.await.map_or_else(|r| r, created)
}

async fn delete_deployment(State(st): State<AppState>, Path(id): Path<DeploymentId>) -> Response {
    match st.call(|reply| Control::Undeploy { id, reply }).await {
        Err(r) => r,
        Ok(Err(e)) => deploy_error(e),
        Ok(Ok(())) => {
            if let Some(cancel) = st.dataflows.lock().unwrap().remove(&id) {
                cancel.cancel();
            }
            StatusCode::NO_CONTENT.into_response()
        }
    }
}

async fn list(st: &AppState) -> Result<Vec<DeploymentInfo>, Response> {
    st.call(|reply| Control::List { reply }).await
}

async fn get_deployments(State(st): State<AppState>) -> Response {
    list(&st).await.map_or_else(|r| r, |l| Json(l).into_response())
}

async fn get_deployments_count(State(st): State<AppState>) -> Response {
    list(&st).await.map_or_else(|r| r, |l| Json(l.len()).into_response())
}

async fn post_clock(State(st): State<AppState>, headers: HeaderMap) -> Response {
    if !st.cfg.test_clock {
        return json_error(StatusCode::CONFLICT, "the service runs on the wall clock");
    }
    let Some(now) = headers
        .get(TEST_CLOCK_HEADER)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<Timestamp>().ok())
    else {
        return json_error(StatusCode::BAD_REQUEST, format!("missing or invalid {TEST_CLOCK_HEADER} header"));
    };
    match st.call(|reply| Control::Clock { now, reply }).await {
        Err(r) => r,
        Ok(Ok(n)) => Json(json!({ "now": now, "emitted": n })).into_response(),
        Ok(Err(e)) => json_error(StatusCode::CONFLICT, e),
    }
}

fn router(st: AppState, base_url: &str) -> Router {
    let td = build_td(&cep_descriptor(base_url)).expect("static descriptor");
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/schema", post(post_schema))
        .route("/pattern", post(post_pattern))
        .route("/dataflow", post(post_dataflow))
        .route("/deployment/{id}", delete(delete_deployment))
        .route("/deployments", get(get_deployments))
        .route("/properties/deploymentsCount", get(get_deployments_count))
        .route("/stats", get(|State(st): State<AppState>| async move { Json(st.stats.snapshot()) }))
        .route("/clock", post(post_clock))
        .with_state(st)
        .merge(td_router(&td))
}

/// Runs the service until `shutdown`. Fails if the alerts broker is
/// unreachable at startup.
pub async fn serve(
    cfg: CepConfig,
    http: TcpListener,
    stats: Arc<CepStats>,
    shutdown: CancellationToken,
) -> Result<(), CepError> {
    let alerts_addr = broker_addr_on(&cfg.alerts_host, cfg.broker_port);
    let first = BrokerClient::connect(&alerts_addr).await?;
    first.declare(&cfg.alerts_queue).await?;
    let cfg = Arc::new(cfg);
    let (ack_tx, ack_rx) = mpsc::unbounded_channel();
    let (ctrl_tx, ctrl_rx) = mpsc::channel(64);
    let (ev_tx, ev_rx) = mpsc::channel(EVENT_CHANNEL_CAPACITY);
    let core = Core {
        engine: Engine::new(),
        texts: BTreeMap::new(),
        cfg: Arc::clone(&cfg),
        publisher: Publisher {
            addr: alerts_addr,
            client: Some(first),
            backoff: Backoff::default(),
        },
        stats: Arc::clone(&stats),
        acks: ack_tx,
        shutdown: shutdown.clone(),
    };
    let acker = tokio::spawn(acker(ack_rx, Arc::clone(&stats)));
    let engine = tokio::spawn(engine_loop(core, ctrl_rx, ev_rx));

    let base = advertised_base(http.local_addr()?);
    let st = AppState {
        ctrl: ctrl_tx,
        events: ev_tx,
        cfg,
        stats,
        dataflows: Arc::default(),
        shutdown: shutdown.clone(),
    };
    info!(%base, "cep service listening");
    let http_shutdown = shutdown.clone();
    let res = axum::serve(http, router(st, &base))
        .with_graceful_shutdown(async move { http_shutdown.cancelled().await })
        .await;
    shutdown.cancel();
    let _ = engine.await;
    let _ = tokio::time::timeout(Duration::from_secs(5), acker).await;
    res.map_err(CepError::Http)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = CepConfig::default();
        assert_eq!(c.alerts_queue.as_str(), "alerts");
        assert_eq!(c.alerts_host, "localhost");
        assert!(!c.test_clock);
    }

    #[test]
    fn endpoint_statement_kinds() {
        let schema = "create schema S (a integer)";
        assert!(parse(schema, &[StatementKind::Schema]).is_ok());
        let r = parse(schema, &[StatementKind::Select, StatementKind::Pattern]).unwrap_err();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST);
        let r = parse("create schema", &[StatementKind::Schema]).unwrap_err();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    }

    #[test]
    fn deploy_error_statuses() {
        assert_eq!(deploy_error(DeployError::UnknownDeployment(3)).status(), StatusCode::NOT_FOUND);
        assert_eq!(
            deploy_error(DeployError::InUse {
                name: "S".into(),
                by: 2
            })
            .status(),
            StatusCode::CONFLICT
        );
        assert_eq!(deploy_error(DeployError::DuplicateSchema("S".into())).status(), StatusCode::BAD_REQUEST);
    }

    #[test]
    fn names_for_listing() {
        let s = parse_statement("@Name('Q') select * from S").unwrap();
        assert_eq!(statement_name(&s).as_deref(), Some("Q"));
        let s = parse_statement("create context C start @now end after 5 sec").unwrap();
        assert_eq!(statement_name(&s).as_deref(), Some("C"));
    }
}
