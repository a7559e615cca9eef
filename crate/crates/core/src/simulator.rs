//! Synthetic air-quality stations publishing raw JSON at a target rate.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio_util::sync::CancellationToken;

use crate::broker::{broker_addr, BrokerClient, BrokerError, Confirm, QueueName};
use crate::event::{now_nanos, Timestamp};

pub const DEFAULT_QUEUE: &str = "input-spring";
/// Achieved rates below this fraction of the target are flagged.
pub const RATE_TOLERANCE: f64 = 0.95;
const TICK: Duration = Duration::from_millis(1);
/// Unconfirmed publishes allowed in flight.
const WINDOW: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Station {
    pub id: i64,
    pub label: String,
}

/// Parses `cadiz:1,puertoreal:2`.
pub fn parse_stations(s: &str) -> Result<Vec<Station>, String> {
    s.split(',')
        .map(|part| {
            let (label, id) = part
                .trim()
                .split_once(':')
                .ok_or_else(|| format!("station `{part}` is not label:id"))?;
            let id = id.parse().map_err(|_| format!("station id `{id}` is not an integer"))?;
            if label.is_empty() {
                return Err(format!("station `{part}` has an empty label"));
            }
            Ok(Station {
                id,
                label: label.to_owned(),
            })
        })
        .collect()
}

/// Where `genTs` comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimClock {
    /// Wall clock at generation, forced strictly increasing.
    Wall,
    /// `start + i * step` for the i-th event.
    Synthetic { start: Timestamp, step: Timestamp },
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub stations: Vec<Station>,
    /// Events per second across all stations.
    pub rate: f64,
    pub duration: Duration,
    pub queue: QueueName,
    pub host: String,
    pub seed: u64,
    pub pm10: (i64, i64),
    pub pm25: (f64, f64),
    pub clock: SimClock,
}

impl SimConfig {
    pub fn new(stations: Vec<Station>, rate: f64, duration: Duration) -> Self {
        Self {
            stations,
            rate,
            duration,
            queue: QueueName::new(DEFAULT_QUEUE).expect("valid default"),
            host: "localhost".into(),
            seed: 0,
            pm10: (0, 100),
            pm25: (0.0, 50.0),
            clock: SimClock::Wall,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.into()));
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return bad("rate must be positive");
        }
        if self.stations.is_empty() {
            return bad("at least one station is required");
        }
        if self.pm10.0 > self.pm10.1 {
            return bad("pm10 range has lo > hi");
        }
        if !(self.pm25.0 <= self.pm25.1) {
            return bad("pm25 range has lo > hi");
        }
        if let SimClock::Synthetic { step, .. } = self.clock {
            if step <= 0 {
                return bad("synthetic clock step must be positive");
            }
        }
        Ok(())
    }

    /// Events in a full run.
    pub fn total_events(&self) -> u64 {
        (self.rate * self.duration.as_secs_f64()).round() as u64
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Serialize)]
struct RawEvent {
    #[serde(rename = "PM10")]
    pm10: i64,
    #[serde(rename = "PM25")]
    pm25: f64,
    #[serde(rename = "stationId")]
    station_id: i64,
    #[serde(rename = "genTs")]
    gen_ts: Timestamp,
}

/// `{"PM10": i, "PM25": d, "stationId": s, "genTs": t}`.
pub fn generate_event(station: &Station, rng: &mut impl Rng, cfg: &SimConfig, now: Timestamp) -> Vec<u8> {
    let ev = RawEvent {
        pm10: rng.random_range(cfg.pm10.0..=cfg.pm10.1),
        pm25: if cfg.pm25.0 == cfg.pm25.1 {
            cfg.pm25.0
        } else {
            rng.random_range(cfg.pm25.0..=cfg.pm25.1)
        },
        station_id: station.id,
        gen_ts: now,
    };
    serde_json::to_vec(&ev).expect("events serialize")
}

/// Deterministic event stream: round-robin stations, one seeded RNG.
pub struct EventSource {
    cfg: SimConfig,
    rng: ChaCha8Rng,
    index: u64,
    last_ts: Timestamp,
}

impl EventSource {
    pub fn new(cfg: SimConfig) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Self {
            cfg,
            rng,
            index: 0,
            last_ts: Timestamp::MIN,
        }
    }

    pub fn next_event(&mut self) -> Vec<u8> {
        let ts = match self.cfg.clock {
            SimClock::Synthetic { start, step } => start + self.index as Timestamp * step,
            SimClock::Wall => now_nanos().max(self.last_ts.saturating_add(1)),
        };
        self.last_ts = ts;
        let station = &self.cfg.stations[(self.index % self.cfg.stations.len() as u64) as usize];
        self.index += 1;
        generate_event(station, &mut self.rng, &self.cfg, ts)
    }
}

/// Tokens accrue at `rate` per second up to `capacity`.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Instant,
}

impl TokenBucket {
    pub fn new(rate: f64, capacity: f64, now: Instant) -> Self {
        Self {
            rate,
            capacity: capacity.max(1.0),
            tokens: 0.0,
            last: now,
        }
    }

    /// Whole tokens available at `now`, removed from the bucket.
    pub fn take(&mut self, now: Instant) -> u64 {
        let dt = now.saturating_duration_since(self.last).as_secs_f64();
        self.last = now;
        self.tokens = (self.tokens + dt * self.rate).min(self.capacity);
        let n = self.tokens.floor();
        self.tokens -= n;
        n as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SimReport {
    pub sent: u64,
    pub target_rate: f64,
    pub actual_rate: f64,
    pub duration_s: f64,
    /// False when the achieved rate fell below 95% of the target.
    pub rate_achieved: bool,
}

/// Publishes `cfg.total_events()` events paced by a token bucket with
/// 1 ms ticks and up to 100 ms of burst.
pub async fn run(cfg: SimConfig, shutdown: CancellationToken) -> Result<SimReport, SimError> {
    cfg.validate()?;
    let total = cfg.total_events();
    let client = BrokerClient::connect(&broker_addr(&cfg.host)).await?;
    client.declare(&cfg.queue).await?;
    let queue = cfg.queue.clone();
    let rate = cfg.rate;
    let mut source = EventSource::new(cfg);
    let mut inflight: VecDeque<Confirm> = VecDeque::new();
    let start = Instant::now();
    let mut bucket = TokenBucket::new(rate, rate * 0.1, start);
    let mut tick = tokio::time::interval(TICK);
    tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
    let mut sent = 0u64;
    while sent < total {
        tokio::select! {
            _ = shutdown.cancelled() => break,
            _ = tick.tick() => {}
        }
        let n = bucket.take(Instant::now()).min(total - sent);
        for _ in 0..n {
            inflight.push_back(client.publish_confirm(&queue, &source.next_event())?);
            if inflight.len() >= WINDOW {
                inflight.pop_front().expect("nonempty").await?;
            }
        }
        sent += n;
    }
    for c in inflight {
        c.await?;
    }
    let elapsed = start.elapsed().as_secs_f64();
    client.close();
    let actual_rate = if elapsed > 0.0 { sent as f64 / elapsed } else { 0.0 };
    Ok(SimReport {
        sent,
        target_rate: rate,
        actual_rate,
        duration_s: elapsed,
        rate_achieved: total == 0 || actual_rate >= RATE_TOLERANCE * rate,
    })
}
