//! The actions service: consumes alert envelopes and performs the action
//! named by their `action` tag.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use crate::alert::AlertEnvelope;
use crate::broker::{broker_addr, Backoff, BrokerClient, BrokerError, QueueName, DEFAULT_PREFETCH};
use crate::service::{advertised_base, json_error};
use crate::thingdesc::{actions_descriptor, build_td, td_router};

pub const DEFAULT_HTTP_PORT: u16 = 8082;
/// Retries after the first failed attempt of a retryable action.
pub const RETRIES: u32 = 3;
const RETRY_BASE: Duration = Duration::from_millis(20);

#[derive(Debug, Error)]
pub enum ActionError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("missing tag `{0}`")]
    MissingTag(String),
    #[error("file name `{0}` escapes the file root")]
    PathTraversal(String),
    #[error("invalid tag `{tag}`: {reason}")]
    InvalidTag { tag: String, reason: String },
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sink(#[from] SinkError),
}

impl ActionError {
    /// Transient failures are retried; the rest go straight to the dlq.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ActionError::Io(_) | ActionError::Sink(SinkError::Unavailable(_)))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ActionError::UnknownAction(_) => "UnknownAction",
            ActionError::MissingTag(_) => "MissingTag",
            ActionError::PathTraversal(_) => "PathTraversal",
            ActionError::InvalidTag { .. } => "InvalidTag",
            ActionError::Io(_) => "IoError",
            ActionError::Sink(SinkError::Unavailable(_)) => "SinkUnavailable",
            ActionError::Sink(SinkError::InvalidDatabase(_)) => "InvalidTag",
        }
    }
}

#[derive(Debug, Error)]
pub enum SinkError {
    #[error("document sink unavailable: {0}")]
    Unavailable(String),
    #[error("invalid database name `{0}`")]
    InvalidDatabase(String),
}

/// Document store behind the `database` action.
pub trait DocumentSink: Send + Sync {
    /// Stores one document; it is on disk (or equivalent) when this returns.
    fn insert(&self, database: &str, document: &serde_json::Value) -> Result<(), SinkError>;
    fn count(&self, database: &str) -> Result<u64, SinkError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkKind {
    Jsonl,
    /// A real document database; no adapter is compiled into this build.
    External,
}

impl FromStr for SinkKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(SinkKind::Jsonl),
            "external" => Ok(SinkKind::External),
            other => Err(format!("unknown sink `{other}` (expected jsonl or external)")),
        }
    }
}

/// Serializes writers of the same file within one process.
#[derive(Default)]
struct FileLocks(Mutex<HashMap<PathBuf, Arc<Mutex<()>>>>);

impl FileLocks {
    fn get(&self, path: &Path) -> Arc<Mutex<()>> {
        Arc::clone(self.0.lock().unwrap().entry(path.to_path_buf()).or_default())
    }
}

/// Appends `line` plus a newline with a single write on an O_APPEND
/// handle, so concurrent appenders never tear each other's lines.
fn append_line(path: &Path, line: &[u8]) -> io::Result<()> {
    let mut buf = Vec::with_capacity(line.len() + 1);
    buf.extend_from_slice(line);
    buf.push(b'\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(&buf)?;
    f.flush()
}

/// One `<database>.jsonl` file per database under `dir`.
pub struct JsonlDocumentSink {
    dir: PathBuf,
    locks: FileLocks,
}

impl JsonlDocumentSink {
    pub fn new(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            locks: FileLocks::default(),
        })
    }

    fn path(&self, database: &str) -> Result<PathBuf, SinkError> {
        let ok = !database.is_empty()
            && database != "."
            && database != ".."
            && !database.contains(['/', '\\', '\0']);
        if !ok {
            return Err(SinkError::InvalidDatabase(database.into()));
        }
        Ok(self.dir.join(format!("{database}.jsonl")))
    }
}

impl DocumentSink for JsonlDocumentSink {
    fn insert(&self, database: &str, document: &serde_json::Value) -> Result<(), SinkError> {
        let path = self.path(database)?;
        let lock = self.locks.get(&path);
        let _g = lock.lock().unwrap();
        let line = serde_json::to_vec(document).expect("JSON values serialize");
        append_line(&path, &line).map_err(|e| SinkError::Unavailable(e.to_string()))
    }

    fn count(&self, database: &str) -> Result<u64, SinkError> {
        let path = self.path(database)?;
        match fs::File::open(&path) {
            Ok(f) => {
                let mut n = 0;
                for line in BufReader::new(f).lines() {
                    line.map_err(|e| SinkError::Unavailable(e.to_string()))?;
                    n += 1;
                }
                Ok(n)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(e) => Err(SinkError::Unavailable(e.to_string())),
        }
    }
}

pub fn make_sink(kind: SinkKind, data_dir: &Path) -> Result<Arc<dyn DocumentSink>, SinkError> {
    match kind {
        SinkKind::Jsonl => JsonlDocumentSink::new(data_dir)
            .map(|s| Arc::new(s) as Arc<dyn DocumentSink>)
            .map_err(|e| SinkError::Unavailable(e.to_string())),
        SinkKind::External => Err(SinkError::Unavailable(
            "no external document database adapter is built in; use --sink jsonl".into(),
        )),
    }
}

/// One named action. Further actions (email, tweets) plug in here.
pub trait AlertAction: Send + Sync {
    fn name(&self) -> &'static str;
    fn execute(&self, env: &AlertEnvelope) -> Result<(), ActionError>;
}

fn required<'a>(env: &'a AlertEnvelope, tag: &str) -> Result<&'a str, ActionError> {
    env.tag(tag).ok_or_else(|| ActionError::MissingTag(tag.into()))
}

/// Appends the envelope as one JSON line to `file_root/<name>`.
pub struct FileAction {
    root: PathBuf,
    locks: FileLocks,
}

impl FileAction {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            locks: FileLocks::default(),
        }
    }

    /// Resolves `name` strictly below the root: relative, plain components only.
    pub fn resolve(&self, name: &str) -> Result<PathBuf, ActionError> {
        let rel = Path::new(name);
        let plain = !name.is_empty() && rel.components().all(|c| matches!(c, Component::Normal(_)));
        if !plain {
            return Err(ActionError::PathTraversal(name.into()));
        }
        Ok(self.root.join(rel))
    }
}

impl AlertAction for FileAction {
    fn name(&self) -> &'static str {
        "file"
    }

    fn execute(&self, env: &AlertEnvelope) -> Result<(), ActionError> {
        let path = self.resolve(required(env, "name")?)?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let lock = self.locks.get(&path);
        let _g = lock.lock().unwrap();
        append_line(&path, &env.to_json())?;
        Ok(())
    }
}

/// Inserts `values ∪ {stream, detectTs}` into the `databaseName` database.
pub struct DatabaseAction {
    sink: Arc<dyn DocumentSink>,
}

impl DatabaseAction {
    pub fn new(sink: Arc<dyn DocumentSink>) -> Self {
        Self { sink }
    }
}

pub fn alert_document(env: &AlertEnvelope) -> serde_json::Value {
    let mut doc = serde_json::Map::new();
    for (k, v) in &env.values {
        doc.insert(k.clone(), serde_json::to_value(v).expect("values serialize"));
    }
    doc.insert("stream".into(), env.stream.clone().into());
    doc.insert("detectTs".into(), env.detect_ts.into());
    serde_json::Value::Object(doc)
}

impl AlertAction for DatabaseAction {
    fn name(&self) -> &'static str {
        "database"
    }

    fn execute(&self, env: &AlertEnvelope) -> Result<(), ActionError> {
        // Recorded by the envelope itself; the built-in sink needs no URI.
        required(env, "mongoURI")?;
        let db = required(env, "databaseName")?;
        self.sink.insert(db, &alert_document(env))?;
        Ok(())
    }
}

#[derive(Default)]
pub struct ActionRegistry {
    actions: HashMap<&'static str, Box<dyn AlertAction>>,
}

impl ActionRegistry {
    /// The `file` and `database` actions.
    pub fn standard(file_root: impl Into<PathBuf>, sink: Arc<dyn DocumentSink>) -> Self {
        let mut r = Self::default();
        r.register(Box::new(FileAction::new(file_root)));
        r.register(Box::new(DatabaseAction::new(sink)));
        r
    }

    pub fn register(&mut self, action: Box<dyn AlertAction>) {
        self.actions.insert(action.name(), action);
    }

    pub fn dispatch(&self, env: &AlertEnvelope) -> Result<&'static str, ActionError> {
        let name = required(env, "action")?;
        let action = self
            .actions
            .get(name)
            .ok_or_else(|| ActionError::UnknownAction(name.into()))?;
        action.execute(env).map(|()| action.name())
    }

    /// Dispatches, retrying transient failures [`RETRIES`] times.
    pub async fn dispatch_with_retry(&self, env: &AlertEnvelope) -> Result<&'static str, ActionError> {
        let mut backoff = Backoff::new(RETRY_BASE, RETRY_BASE * 8);
        let mut attempt = 0;
        loop {
            match self.dispatch(env) {
                Err(e) if e.is_retryable() && attempt < RETRIES => {
                    attempt += 1;
                    debug!(attempt, error = %e, "retrying action");
                    tokio::time::sleep(backoff.next_delay()).await;
                }
                other => return other,
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ActionsConfig {
    pub input_queue: QueueName,
    pub host: String,
    pub file_root: PathBuf,
    pub data_dir: PathBuf,
    pub sink: SinkKind,
    pub prefetch: u32,
}

impl ActionsConfig {
    pub fn new(input_queue: QueueName) -> Self {
        Self {
            input_queue,
            host: "localhost".into(),
            file_root: PathBuf::from("."),
            data_dir: PathBuf::from("data"),
            sink: SinkKind::Jsonl,
            prefetch: DEFAULT_PREFETCH,
        }
    }
}

#[derive(Debug, Error)]
pub enum ActionsError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Sink(#[from] SinkError),
    #[error("http server: {0}")]
    Http(#[from] io::Error),
}

#[derive(Debug, Default)]
pub struct ActionsStats {
    pub consumed: AtomicU64,
    pub executed: AtomicU64,
    pub dead_lettered: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ActionsStatsSnapshot {
    pub consumed: u64,
    pub executed: u64,
    pub dead_lettered: u64,
}

impl ActionsStats {
    pub fn snapshot(&self) -> ActionsStatsSnapshot {
        ActionsStatsSnapshot {
            consumed: self.consumed.load(Ordering::Relaxed),
            executed: self.executed.load(Ordering::Relaxed),
            dead_lettered: self.dead_lettered.load(Ordering::Relaxed),
        }
    }
}

async fn session(
    cfg: &ActionsConfig,
    registry: &ActionRegistry,
    stats: &ActionsStats,
    client: &BrokerClient,
    shutdown: &CancellationToken,
) -> Result<(), BrokerError> {
    let dlq = cfg.input_queue.dead_letter();
    client.declare(&dlq).await?;
    let mut sub = client.subscribe(&cfg.input_queue, cfg.prefetch).await?;
    loop {
        let d = tokio::select! {
            biased;
            _ = shutdown.cancelled() => return Ok(()),
            d = sub.next() => d,
        };
        let Some(d) = d else {
            return Err(BrokerError::ConnectionClosed);
        };
        stats.consumed.fetch_add(1, Ordering::Relaxed);
        let failure = match serde_json::from_slice::<AlertEnvelope>(&d.payload) {
            Ok(env) => match registry.dispatch_with_retry(&env).await {
                Ok(_) => None,
                Err(e) => Some((e.kind(), e.to_string())),
            },
            Err(e) => Some(("MalformedEnvelope", e.to_string())),
        };
        if let Some((kind, reason)) = failure {
            warn!(kind, %reason, "dead-lettering alert");
            let letter = json!({
                "kind": kind,
                "reason": reason,
                "envelope": String::from_utf8_lossy(&d.payload),
            });
            client.publish(&dlq, letter.to_string().as_bytes()).await?;
            stats.dead_lettered.fetch_add(1, Ordering::Relaxed);
        } else {
            stats.executed.fetch_add(1, Ordering::Relaxed);
        }
        client.ack_nowait(d.tag)?;
    }
}

/// Consumes `cfg.input_queue` until shutdown. Fails only if the broker is
/// unreachable at startup.
pub async fn run(
    cfg: ActionsConfig,
    registry: Arc<ActionRegistry>,
    stats: Arc<ActionsStats>,
    shutdown: CancellationToken,
) -> Result<(), ActionsError> {
    let addr = broker_addr(&cfg.host);
    let mut client = Some(BrokerClient::connect(&addr).await?);
    let mut backoff = Backoff::default();
    info!(queue = %cfg.input_queue, "actions service consuming");
    loop {
        let c = match client.take() {
            Some(c) => c,
            None => {
                let delay = backoff.next_delay();
                tokio::select! {
                    _ = shutdown.cancelled() => return Ok(()),
                    _ = tokio::time::sleep(delay) => {}
                }
                match BrokerClient::connect(&addr).await {
                    Ok(c) => {
                        backoff.reset();
                        c
                    }
                    Err(e) => {
                        warn!(error = %e, "reconnecting to broker");
                        continue;
                    }
                }
            }
        };
        let res = session(&cfg, &registry, &stats, &c, &shutdown).await;
        c.close();
        match res {
            Ok(()) => return Ok(()),
            Err(e) => warn!(error = %e, "broker session lost"),
        }
    }
}

#[derive(Clone)]
struct HttpState {
    registry: Arc<ActionRegistry>,
    stats: Arc<ActionsStats>,
}

async fn execute(State(st): State<HttpState>, bytes: Bytes) -> Response {
    let env: AlertEnvelope = match serde_json::from_slice(&bytes) {
        Ok(e) => e,
        Err(e) => return json_error(StatusCode::BAD_REQUEST, format!("invalid envelope: {e}")),
    };
    match st.registry.dispatch_with_retry(&env).await {
        Ok(action) => {
            st.stats.executed.fetch_add(1, Ordering::Relaxed);
            Json(json!({ "action": action, "status": "done" })).into_response()
        }
        Err(e) => {
            let status = if e.is_retryable() {
                StatusCode::SERVICE_UNAVAILABLE
            } else {
                StatusCode::BAD_REQUEST
            };
            (status, Json(json!({ "error": e.to_string(), "kind": e.kind() }))).into_response()
        }
    }
}

pub fn router(registry: Arc<ActionRegistry>, stats: Arc<ActionsStats>, base_url: &str) -> Router {
    let td = build_td(&actions_descriptor(base_url)).expect("static descriptor");
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/execute", post(execute))
        .route("/stats", get(|State(st): State<HttpState>| async move { Json(st.stats.snapshot()) }))
        .with_state(HttpState { registry, stats })
        .merge(td_router(&td))
}

/// Runs the HTTP endpoints and the consumer until shutdown.
pub async fn serve(
    cfg: ActionsConfig,
    http: TcpListener,
    stats: Arc<ActionsStats>,
    shutdown: CancellationToken,
) -> Result<(), ActionsError> {
    let sink = make_sink(cfg.sink, &cfg.data_dir)?;
    let registry = Arc::new(ActionRegistry::standard(cfg.file_root.clone(), sink));
    let base = advertised_base(http.local_addr()?);
    let app = router(Arc::clone(&registry), Arc::clone(&stats), &base);
    let http_shutdown = shutdown.clone();
    let server = tokio::spawn(async move {
        axum::serve(http, app)
            .with_graceful_shutdown(async move { http_shutdown.cancelled().await })
            .await
    });
    let res = run(cfg, registry, stats, shutdown.clone()).await;
    shutdown.cancel();
    let _ = server.await;
    res
}
