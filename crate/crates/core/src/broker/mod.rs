//! A small standalone message broker: named queues, competing consumers,
//! per-consumer prefetch windows and explicit acknowledgements over a
//! length-prefixed JSON protocol on TCP.
//!
//! Delivery is at-least-once. Messages live in memory only; anything a
//! consumer has not acknowledged when its connection drops is returned to
//! the head of its queue.

mod client;
pub mod frame;
mod server;
mod state;

pub use client::{BrokerClient, Confirm, Delivery, Subscription};
pub use frame::{BrokerStats, ErrorCode, Frame, QueueStats, MAX_FRAME_LEN};
pub use server::{BrokerConfig, BrokerHandle, BrokerServer};

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 5680;
pub const PORT_ENV: &str = "PORTPIPE_BROKER_PORT";
pub const DEFAULT_PREFETCH: u32 = 64;

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("invalid queue name `{0}`: expected 1-255 characters from [A-Za-z0-9._-]")]
    InvalidName(String),
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("broker connection closed")]
    ConnectionClosed,
    #[error("unknown delivery tag {0}")]
    UnknownTag(u64),
    #[error("broker at {addr} is unreachable: {source}")]
    Unreachable {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("broker returned {code:?}: {reason}")]
    Remote { code: ErrorCode, reason: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error(transparent)]
    Io(io::Error),
}

/// A validated queue name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct QueueName(String);

impl QueueName {
    pub fn new(name: impl Into<String>) -> Result<Self, BrokerError> {
        let name = name.into();
        let valid = (1..=255).contains(&name.len())
            && name
                .bytes()
                .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
        if valid {
            Ok(Self(name))
        } else {
            Err(BrokerError::InvalidName(name))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn into_string(self) -> String {
        self.0
    }

    /// The dead-letter queue paired with this queue.
    pub fn dead_letter(&self) -> QueueName {
        let mut name = format!("{}.dlq", self.0);
        name.truncate(255);
        QueueName(name)
    }
}

impl fmt::Display for QueueName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for QueueName {
    type Err = BrokerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        QueueName::new(s)
    }
}

impl TryFrom<String> for QueueName {
    type Error = BrokerError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        QueueName::new(s)
    }
}

impl From<QueueName> for String {
    fn from(q: QueueName) -> Self {
        q.0
    }
}

/// Port used when a host is given without one: `$PORTPIPE_BROKER_PORT`, else 5680.
pub fn default_port() -> u16 {
    std::env::var(PORT_ENV)
        .ok()
        .and_then(|p| p.parse().ok())
        .unwrap_or(DEFAULT_PORT)
}

/// Expands `host` to `host:port` with [`default_port`] when no port is given.
pub fn broker_addr(host: &str) -> String {
    broker_addr_on(host, default_port())
}

/// Expands `host` to `host:port` when no port is given.
pub fn broker_addr_on(host: &str, port: u16) -> String {
    let has_port = match host.rsplit_once(':') {
        Some((h, p)) => !h.is_empty() && p.parse::<u16>().is_ok() && (!h.contains(':') || h.ends_with(']')),
        None => false,
    };
    if has_port {
        host.to_owned()
    } else {
        format!("{host}:{port}")
    }
}

/// Exponential reconnect delays: 100 ms doubling up to 5 s.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    cap: Duration,
    attempt: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self::new(Duration::from_millis(100), Duration::from_secs(5))
    }
}

impl Backoff {
    pub fn new(base: Duration, cap: Duration) -> Self {
        Self {
            base,
            cap,
            attempt: 0,
        }
    }

    pub fn attempts(&self) -> u32 {
        self.attempt
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self
            .base
            .checked_mul(1u32 << self.attempt.min(16))
            .unwrap_or(self.cap)
            .min(self.cap);
        self.attempt += 1;
        d
    }

    pub fn reset(&mut self) {
        self.attempt = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queue_names() {
        assert!(QueueName::new("map-events").is_ok());
        assert!(QueueName::new("input_spring.dlq").is_ok());
        assert!(QueueName::new("").is_err());
        assert!(QueueName::new("a b").is_err());
        assert!(QueueName::new("x".repeat(256)).is_err());
        assert!(QueueName::new("x".repeat(255)).is_ok());
        assert_eq!(QueueName::new("q").unwrap().dead_letter().as_str(), "q.dlq");
    }

    #[test]
    fn addr_expansion() {
        assert_eq!(broker_addr("10.0.0.1:7000"), "10.0.0.1:7000");
        assert_eq!(broker_addr("[::1]:7000"), "[::1]:7000");
        assert!(broker_addr("localhost").starts_with("localhost:"));
    }

    #[test]
    fn backoff_doubles_then_caps() {
        let mut b = Backoff::default();
        let delays: Vec<_> = (0..8).map(|_| b.next_delay().as_millis()).collect();
        assert_eq!(delays, vec![100, 200, 400, 800, 1600, 3200, 5000, 5000]);
    }
}
