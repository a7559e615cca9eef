//! Length-prefixed JSON frames.
//!
//! Every frame is a 4-byte big-endian body length followed by a UTF-8 JSON
//! object whose `type` field selects the variant. Payload bytes travel as
//! standard base64.

use std::collections::BTreeMap;
use std::io;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

/// Upper bound on a frame body, in bytes.
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("frame body of {0} bytes exceeds the 16 MiB limit")]
    TooLarge(usize),
    #[error("malformed frame: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw message bytes, base64 on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Payload(pub Vec<u8>);

impl Serialize for Payload {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Payload {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD
            .decode(s.as_bytes())
            .map(Payload)
            .map_err(serde::de::Error::custom)
    }
}

/// Machine-readable error class carried by `ERR` frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    InvalidName,
    UnknownQueue,
    UnknownTag,
    FrameTooLarge,
    Protocol,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct QueueStats {
    /// Messages waiting for a consumer.
    pub depth: usize,
    /// Highest `depth` observed since the queue was declared.
    pub max_depth: usize,
    pub unacked: usize,
    pub consumers: usize,
    pub published: u64,
    pub delivered: u64,
    pub redelivered: u64,
    pub acked: u64,
}

pub type BrokerStats = BTreeMap<String, QueueStats>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "UPPERCASE")]
pub enum Frame {
    Declare {
        queue: String,
    },
    Publish {
        queue: String,
        payload: Payload,
    },
    Subscribe {
        queue: String,
        prefetch: u32,
    },
    Deliver {
        queue: String,
        tag: u64,
        payload: Payload,
    },
    Ack {
        tag: u64,
    },
    /// Admin request; answered by an `OK` frame carrying per-queue stats.
    Stats,
    Ok {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        stats: Option<BrokerStats>,
    },
    Err {
        code: ErrorCode,
        reason: String,
    },
}

impl Frame {
    pub fn ok() -> Self {
        Frame::Ok { stats: None }
    }

    pub fn err(code: ErrorCode, reason: impl Into<String>) -> Self {
        Frame::Err {
            code,
            reason: reason.into(),
        }
    }

    /// Length prefix followed by the JSON body.
    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let mut buf = vec![0u8; 4];
        serde_json::to_writer(&mut buf, self)?;
        let body_len = buf.len() - 4;
        if body_len > MAX_FRAME_LEN {
            return Err(FrameError::TooLarge(body_len));
        }
        buf[..4].copy_from_slice(&(body_len as u32).to_be_bytes());
        Ok(buf)
    }
}

/// Reads one frame; `Ok(None)` on a clean end of stream at a frame boundary.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Frame>, FrameError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len).await {
        Ok(_) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(FrameError::TooLarge(len));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body).await?;
    Ok(Some(serde_json::from_slice(&body)?))
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, frame: &Frame) -> Result<(), FrameError> {
    w.write_all(&frame.encode()?).await?;
    Ok(())
}
