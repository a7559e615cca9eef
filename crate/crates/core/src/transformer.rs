//! The transformer service: raw JSON/XML in, canonical records out.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::mpsc;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use crate::broker::{broker_addr, Backoff, BrokerClient, BrokerError, Confirm, QueueName, DEFAULT_PREFETCH};
use crate::event::{
    decode, decode_at, decode_canonical, encode_canonical, now_nanos, DecodeError, EventRecord, EventSchema,
    InputFormat, RawMessage,
};
use crate::service::{advertised_base, json_error};
use crate::thingdesc::{build_td, td_router, transformer_descriptor};

pub const DEFAULT_OUTPUT_QUEUE: &str = "map-events";
pub const DEFAULT_HOST: &str = "localhost";
pub const DEFAULT_HTTP_PORT: u16 = 8081;
/// Attempts made by [`send_event_map`] before giving up.
pub const SEND_ATTEMPTS: u32 = 5;

#[derive(Debug, Clone)]
pub struct TransformerConfig {
    pub input_type: InputFormat,
    pub input_queue: QueueName,
    pub output_queue: QueueName,
    pub input_host: String,
    pub output_host: String,
    pub schema: EventSchema,
    pub prefetch: u32,
}

impl TransformerConfig {
    /// Mandatory arguments only; everything else takes its default.
    pub fn new(input_type: InputFormat, input_queue: QueueName, schema: EventSchema) -> Self {
        Self {
            input_type,
            input_queue,
            output_queue: QueueName::new(DEFAULT_OUTPUT_QUEUE).expect("valid default"),
            input_host: DEFAULT_HOST.into(),
            output_host: DEFAULT_HOST.into(),
            schema,
            prefetch: DEFAULT_PREFETCH,
        }
    }

    pub fn dead_letter_queue(&self) -> QueueName {
        self.input_queue.dead_letter()
    }
}

#[derive(Debug, Error)]
pub enum TransformerError {
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("http server: {0}")]
    Http(#[from] std::io::Error),
}

/// Counters since start. `consumed == transformed + dead_lettered` once
/// the pipeline is drained.
#[derive(Debug, Default)]
pub struct TransformerStats {
    pub consumed: AtomicU64,
    pub transformed: AtomicU64,
    pub dead_lettered: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub consumed: u64,
    pub transformed: u64,
    #[serde(rename = "deadLettered")]
    pub dead_lettered: u64,
}

impl TransformerStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        StatsSnapshot {
            consumed: self.consumed.load(Ordering::Relaxed),
            transformed: self.transformed.load(Ordering::Relaxed),
            dead_lettered: self.dead_lettered.load(Ordering::Relaxed),
        }
    }
}

/// Decodes and re-encodes one message. Pure: the same input always gives
/// the same bytes.
pub fn transform_message(event: &[u8], format: InputFormat, schema: &EventSchema) -> Result<Vec<u8>, DecodeError> {
    let raw = RawMessage {
        payload: event.to_vec(),
        format,
    };
    decode(&raw, schema).map(|r| encode_canonical(&r))
}

/// Publishes one record, reconnecting with backoff; gives up after
/// [`SEND_ATTEMPTS`] failures.
pub async fn send_event_map(
    output_host: &str,
    output_queue: &QueueName,
    record: &EventRecord,
    mut backoff: Backoff,
) -> Result<(), BrokerError> {
    let bytes = encode_canonical(record);
    let addr = broker_addr(output_host);
    let mut last = None;
    for attempt in 1..=SEND_ATTEMPTS {
        let res = async {
            let client = BrokerClient::connect(&addr).await?;
            let r = client.publish(output_queue, &bytes).await;
            client.close();
            r
        }
        .await;
        match res {
            Ok(()) => return Ok(()),
            Err(e) => {
                debug!(attempt, error = %e, "send_event_map failed");
                last = Some(e);
                if attempt < SEND_ATTEMPTS {
                    tokio::time::sleep(backoff.next_delay()).await;
                }
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Serialize)]
struct DeadLetter<'a> {
    reason: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'a str>,
    payload: String,
}

enum Outcome {
    Transformed,
    DeadLettered,
}

enum Exit {
    Shutdown,
    Lost(String),
}

struct Session {
    input: BrokerClient,
    output: BrokerClient,
}

async fn connect_session(cfg: &TransformerConfig) -> Result<Session, BrokerError> {
    let input = BrokerClient::connect(&broker_addr(&cfg.input_host)).await?;
    let output = BrokerClient::connect(&broker_addr(&cfg.output_host)).await?;
    input.declare(&cfg.input_queue).await?;
    input.declare(&cfg.dead_letter_queue()).await?;
    output.declare(&cfg.output_queue).await?;
    Ok(Session { input, output })
}

/// Consume-transform-publish loop. Fails only if the broker is unreachable
/// at startup; later disconnects are retried with backoff.
pub async fn run(
    cfg: TransformerConfig,
    stats: Arc<TransformerStats>,
    shutdown: CancellationToken,
) -> Result<(), TransformerError> {
    let mut backoff = Backoff::default();
    let mut session = Some(connect_session(&cfg).await?);
    info!(input = %cfg.input_queue, output = %cfg.output_queue, "transformer running");
    loop {
        let s = match session.take() {
            Some(s) => s,
            None => match connect_session(&cfg).await {
                Ok(s) => {
                    backoff.reset();
                    s
                }
                Err(e) => {
                    let delay = backoff.next_delay();
                    warn!(error = %e, ?delay, "reconnecting to broker");
                    tokio::select! {
                        _ = shutdown.cancelled() => return Ok(()),
                        _ = tokio::time::sleep(delay) => continue,
                    }
                }
            },
        };
        match pump(&cfg, &s, &stats, &shutdown).await {
            Exit::Shutdown => {
                s.input.close();
                s.output.close();
                return Ok(());
            }
            Exit::Lost(why) => {
                warn!(reason = %why, "broker session lost");
                s.input.close();
                s.output.close();
            }
        }
    }
}

async fn pump(cfg: &TransformerConfig, s: &Session, stats: &Arc<TransformerStats>, shutdown: &CancellationToken) -> Exit {
    let mut sub = match s.input.subscribe(&cfg.input_queue, cfg.prefetch).await {
        Ok(sub) => sub,
        Err(e) => return Exit::Lost(e.to_string()),
    };
    let dlq = cfg.dead_letter_queue();
    let lost = CancellationToken::new();
    // Acks are sent strictly after the broker confirmed the corresponding
    // output publish, in delivery order.
    let (ack_tx, mut ack_rx) = mpsc::unbounded_channel::<(Confirm, u64, Outcome)>();
    let acker = {
        let input = s.input.clone();
        let stats = Arc::clone(stats);
        let lost = lost.clone();
        tokio::spawn(async move {
            while let Some((confirm, tag, outcome)) = ack_rx.recv().await {
                if confirm.await.is_err() || input.ack_nowait(tag).is_err() {
                    lost.cancel();
                    return;
                }
                match outcome {
                    Outcome::Transformed => stats.transformed.fetch_add(1, Ordering::Relaxed),
                    Outcome::DeadLettered => stats.dead_lettered.fetch_add(1, Ordering::Relaxed),
                };
            }
        })
    };
    let exit = loop {
        let delivery = tokio::select! {
            biased;
            _ = shutdown.cancelled() => break Exit::Shutdown,
            _ = lost.cancelled() => break Exit::Lost("publish not confirmed".into()),
            d = sub.next() => d,
        };
        let Some(d) = delivery else {
            break Exit::Lost("input subscription closed".into());
        };
        stats.consumed.fetch_add(1, Ordering::Relaxed);
        let raw = RawMessage {
            payload: d.payload,
            format: cfg.input_type,
        };
        let sent = match decode_at(&raw, &cfg.schema, now_nanos()) {
            Ok(mut record) => {
                record.transf_ts = Some(now_nanos());
                let bytes = encode_canonical(&record);
                s.output
                    .publish_confirm(&cfg.output_queue, &bytes)
                    .map(|c| (c, Outcome::Transformed))
            }
            Err(e) => {
                debug!(error = %e, "dead-lettering message");
                let letter = DeadLetter {
                    reason: e.to_string(),
                    field: e.field(),
                    payload: String::from_utf8_lossy(&raw.payload).into_owned(),
                };
                let bytes = serde_json::to_vec(&letter).expect("dead letters serialize");
                s.input.publish_confirm(&dlq, &bytes).map(|c| (c, Outcome::DeadLettered))
            }
        };
        match sent {
            Ok((confirm, outcome)) => {
                let _ = ack_tx.send((confirm, d.tag, outcome));
            }
            Err(e) => break Exit::Lost(e.to_string()),
        }
    };
    drop(ack_tx);
    if matches!(exit, Exit::Shutdown) {
        // Let in-flight publishes settle so their inputs are acked.
        let _ = tokio::time::timeout(Duration::from_secs(5), acker).await;
    } else {
        acker.abort();
    }
    exit
}

#[derive(Clone)]
struct HttpState {
    cfg: Arc<TransformerConfig>,
    stats: Arc<TransformerStats>,
}

#[derive(Deserialize)]
struct TransformBody {
    event: String,
    #[serde(default)]
    json: Option<bool>,
    #[serde(default)]
    xml: Option<bool>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct SendBody {
    output_host: Option<String>,
    output_queue: Option<String>,
    event_map: serde_json::Value,
}

async fn transform_handler(State(st): State<HttpState>, Json(body): Json<TransformBody>) -> Response {
    let format = match (body.json, body.xml) {
        (Some(true), Some(true)) => return json_error(StatusCode::BAD_REQUEST, "json and xml are exclusive"),
        (_, Some(true)) => InputFormat::Xml,
        (Some(true), _) => InputFormat::Json,
        _ => st.cfg.input_type,
    };
    match transform_message(body.event.as_bytes(), format, &st.cfg.schema) {
        Ok(bytes) => {
            let v: serde_json::Value = serde_json::from_slice(&bytes).expect("canonical bytes are JSON");
            Json(v).into_response()
        }
        Err(e) => (
            StatusCode::BAD_REQUEST,
            Json(json!({ "error": e.to_string(), "field": e.field() })),
        )
            .into_response(),
    }
}

async fn send_handler(State(st): State<HttpState>, Json(body): Json<SendBody>) -> Response {
    let queue = match body.output_queue.as_deref().map(QueueName::new).transpose() {
        Ok(q) => q.unwrap_or_else(|| st.cfg.output_queue.clone()),
        Err(e) => return json_error(StatusCode::BAD_REQUEST, e),
    };
    let bytes = serde_json::to_vec(&body.event_map).expect("JSON value serializes");
    // Either a canonical record or a bare field map of the configured schema.
    let record = match body.event_map.get("values") {
        Some(_) => decode_canonical(&bytes, now_nanos()).map_err(|e| e.to_string()),
        None => decode(&RawMessage::json(bytes), &st.cfg.schema).map_err(|e| e.to_string()),
    };
    let record = match record {
        Ok(r) => r,
        Err(e) => return json_error(StatusCode::BAD_REQUEST, e),
    };
    let host = body.output_host.unwrap_or_else(|| st.cfg.output_host.clone());
    match send_event_map(&host, &queue, &record, Backoff::default()).await {
        Ok(()) => Json(json!({ "published": true, "queue": queue.as_str() })).into_response(),
        Err(e) => json_error(StatusCode::BAD_GATEWAY, e),
    }
}

pub fn router(cfg: Arc<TransformerConfig>, stats: Arc<TransformerStats>, base_url: &str) -> Router {
    let td = build_td(&transformer_descriptor(base_url)).expect("static descriptor");
    Router::new()
        .route("/healthz", get(|| async { "ok" }))
        .route("/stats", get(|State(st): State<HttpState>| async move { Json(st.stats.snapshot()) }))
        .route("/transformmessage", post(transform_handler))
        .route("/sendeventmap", post(send_handler))
        .with_state(HttpState { cfg, stats })
        .merge(td_router(&td))
}

/// Runs the HTTP endpoints and the broker loop until shutdown.
pub async fn serve(
    cfg: TransformerConfig,
    http: TcpListener,
    stats: Arc<TransformerStats>,
    shutdown: CancellationToken,
) -> Result<(), TransformerError> {
    let base = advertised_base(http.local_addr()?);
    let cfg_arc = Arc::new(cfg.clone());
    let app = router(cfg_arc, Arc::clone(&stats), &base);
    let http_shutdown = shutdown.clone();
    let server = tokio::spawn(async move {
        axum::serve(http, app)
            .with_graceful_shutdown(async move { http_shutdown.cancelled().await })
            .await
    });
    let res = run(cfg, stats, shutdown.clone()).await;
    shutdown.cancel();
    let _ = server.await;
    res
}
