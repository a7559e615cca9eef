use std::collections::{HashMap, VecDeque};
use std::future::Future;
use std::pin::Pin;
use std::sync::{Arc, Mutex};
use std::task::{Context, Poll};

use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::TcpStream;
use tokio::sync::{mpsc, oneshot};
use tracing::debug;

use super::frame::{read_frame, BrokerStats, ErrorCode, Frame, FrameError, Payload};
use super::{BrokerError, QueueName};

type Reply = Result<Frame, BrokerError>;
type PendingReplies = Arc<Mutex<Pending>>;

/// Reply slots in request order; `dead` is set once the read side is gone.
#[derive(Default)]
struct Pending {
    dead: bool,
    slots: VecDeque<Option<oneshot::Sender<Reply>>>,
}
type Subscriptions = Arc<Mutex<HashMap<String, mpsc::UnboundedSender<Delivery>>>>;

/// A message handed to a subscriber; acknowledge it with [`BrokerClient::ack`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub queue: String,
    pub tag: u64,
    pub payload: Vec<u8>,
}

enum Outgoing {
    Frame(Vec<u8>, Option<oneshot::Sender<Reply>>),
    Close,
}

/// One multiplexed broker connection.
///
/// The handle is cheap to clone; requests from clones are serialized onto
/// the same socket and replies are matched in request order.
#[derive(Clone)]
pub struct BrokerClient {
    tx: mpsc::UnboundedSender<Outgoing>,
    subs: Subscriptions,
    addr: String,
}

/// Resolves once the broker has accepted a published message.
pub struct Confirm(oneshot::Receiver<Reply>);

impl Future for Confirm {
    type Output = Result<(), BrokerError>;

    fn poll(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<Self::Output> {
        Pin::new(&mut self.0).poll(cx).map(|r| match r {
            Ok(reply) => reply.and_then(expect_ok),
            Err(_) => Err(BrokerError::ConnectionClosed),
        })
    }
}

/// Stream of deliveries for one queue.
pub struct Subscription {
    queue: String,
    rx: mpsc::UnboundedReceiver<Delivery>,
}

impl Subscription {
    pub fn queue(&self) -> &str {
        &self.queue
    }

    /// Next delivery, or `None` once the connection is gone.
    pub async fn next(&mut self) -> Option<Delivery> {
        self.rx.recv().await
    }
}

fn expect_ok(frame: Frame) -> Result<(), BrokerError> {
    match frame {
        Frame::Ok { .. } => Ok(()),
        other => Err(unexpected(other)),
    }
}

fn unexpected(frame: Frame) -> BrokerError {
    match frame {
        Frame::Err { code, reason } => BrokerError::Remote { code, reason },
        other => BrokerError::Protocol(format!("unexpected reply {other:?}")),
    }
}

impl BrokerClient {
    pub async fn connect(addr: &str) -> Result<Self, BrokerError> {
        let stream = TcpStream::connect(addr)
            .await
            .map_err(|source| BrokerError::Unreachable {
                addr: addr.to_owned(),
                source,
            })?;
        stream.set_nodelay(true).map_err(BrokerError::Io)?;
        let (rd, wr) = stream.into_split();
        let (tx, rx) = mpsc::unbounded_channel();
        let pending: PendingReplies = Arc::default();
        let subs: Subscriptions = Arc::default();
        tokio::spawn(write_loop(wr, rx, Arc::clone(&pending)));
        tokio::spawn(read_loop(rd, pending, Arc::clone(&subs)));
        Ok(Self {
            tx,
            subs,
            addr: addr.to_owned(),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn send(&self, frame: &Frame, want_reply: bool) -> Result<Option<oneshot::Receiver<Reply>>, BrokerError> {
        let bytes = frame.encode().map_err(|e| match e {
            FrameError::TooLarge(n) => BrokerError::FrameTooLarge(n),
            other => BrokerError::Protocol(other.to_string()),
        })?;
        let (reply_tx, reply_rx) = if want_reply {
            let (t, r) = oneshot::channel();
            (Some(t), Some(r))
        } else {
            (None, None)
        };
        self.tx
            .send(Outgoing::Frame(bytes, reply_tx))
            .map_err(|_| BrokerError::ConnectionClosed)?;
        Ok(reply_rx)
    }

    async fn request(&self, frame: Frame) -> Result<Frame, BrokerError> {
        let rx = self.send(&frame, true)?.expect("reply requested");
        let reply = rx.await.map_err(|_| BrokerError::ConnectionClosed)??;
        match reply {
            Frame::Err { code, reason } => Err(BrokerError::Remote { code, reason }),
            ok => Ok(ok),
        }
    }

    pub async fn declare(&self, queue: &QueueName) -> Result<(), BrokerError> {
        self.request(Frame::Declare {
            queue: queue.to_string(),
        })
        .await
        .map(drop)
    }

    /// Sends a message without waiting; the returned [`Confirm`] resolves
    /// when the broker has queued it.
    pub fn publish_confirm(&self, queue: &QueueName, payload: &[u8]) -> Result<Confirm, BrokerError> {
        let frame = Frame::Publish {
            queue: queue.to_string(),
            payload: Payload(payload.to_vec()),
        };
        let rx = self.send(&frame, true)?.expect("reply requested");
        Ok(Confirm(rx))
    }

    pub async fn publish(&self, queue: &QueueName, payload: &[u8]) -> Result<(), BrokerError> {
        self.publish_confirm(queue, payload)?.await
    }

    pub async fn subscribe(&self, queue: &QueueName, prefetch: u32) -> Result<Subscription, BrokerError> {
        let (tx, rx) = mpsc::unbounded_channel();
        self.subs.lock().unwrap().insert(queue.to_string(), tx);
        let res = self
            .request(Frame::Subscribe {
                queue: queue.to_string(),
                prefetch,
            })
            .await;
        if let Err(e) = res {
            self.subs.lock().unwrap().remove(queue.as_str());
            return Err(e);
        }
        Ok(Subscription {
            queue: queue.to_string(),
            rx,
        })
    }

    pub async fn ack(&self, tag: u64) -> Result<(), BrokerError> {
        match self.request(Frame::Ack { tag }).await {
            Err(BrokerError::Remote {
                code: ErrorCode::UnknownTag,
                ..
            }) => Err(BrokerError::UnknownTag(tag)),
            other => other.map(drop),
        }
    }

    /// Acknowledges without waiting for the broker's reply.
    pub fn ack_nowait(&self, tag: u64) -> Result<(), BrokerError> {
        self.send(&Frame::Ack { tag }, false).map(drop)
    }

    pub async fn stats(&self) -> Result<BrokerStats, BrokerError> {
        match self.request(Frame::Stats).await? {
            Frame::Ok { stats: Some(s) } => Ok(s),
            other => Err(unexpected(other)),
        }
    }

    /// Closes the write side; the broker requeues anything left unacked.
    pub fn close(&self) {
        let _ = self.tx.send(Outgoing::Close);
    }

    pub fn is_closed(&self) -> bool {
        self.tx.is_closed()
    }
}

async fn write_loop(
    wr: tokio::net::tcp::OwnedWriteHalf,
    mut rx: mpsc::UnboundedReceiver<Outgoing>,
    pending: PendingReplies,
) {
    let mut wr = BufWriter::new(wr);
    'outer: while let Some(first) = rx.recv().await {
        if pending.lock().unwrap().dead {
            break;
        }
        let mut next = Some(first);
        while let Some(out) = next.take() {
            match out {
                Outgoing::Frame(bytes, reply) => {
                    // Registered before the bytes hit the socket so the reply
                    // can never overtake its slot.
                    {
                        let mut p = pending.lock().unwrap();
                        if p.dead {
                            if let Some(tx) = reply {
                                let _ = tx.send(Err(BrokerError::ConnectionClosed));
                            }
                            break 'outer;
                        }
                        p.slots.push_back(reply);
                    }
                    if wr.write_all(&bytes).await.is_err() {
                        break 'outer;
                    }
                }
                Outgoing::Close => break 'outer,
            }
            next = rx.try_recv().ok();
        }
        if wr.flush().await.is_err() {
            break;
        }
    }
    let _ = wr.flush().await;
    let _ = wr.shutdown().await;
    rx.close();
    while let Ok(out) = rx.try_recv() {
        if let Outgoing::Frame(_, Some(tx)) = out {
            let _ = tx.send(Err(BrokerError::ConnectionClosed));
        }
    }
}

async fn read_loop(rd: tokio::net::tcp::OwnedReadHalf, pending: PendingReplies, subs: Subscriptions) {
    let mut rd = BufReader::new(rd);
    loop {
        match read_frame(&mut rd).await {
            Ok(Some(Frame::Deliver { queue, tag, payload })) => {
                let sub = subs.lock().unwrap().get(&queue).cloned();
                match sub {
                    Some(tx) => {
                        let _ = tx.send(Delivery {
                            queue,
                            tag,
                            payload: payload.0,
                        });
                    }
                    None => debug!(%queue, tag, "delivery for unknown subscription"),
                }
            }
            Ok(Some(reply)) => {
                let slot = pending.lock().unwrap().slots.pop_front();
                if let Some(Some(tx)) = slot {
                    let _ = tx.send(Ok(reply));
                }
            }
            Ok(None) => break,
            Err(e) => {
                debug!(error = %e, "broker connection read failed");
                break;
            }
        }
    }
    let slots: Vec<_> = {
        let mut p = pending.lock().unwrap();
        p.dead = true;
        p.slots.drain(..).collect()
    };
    for slot in slots.into_iter().flatten() {
        let _ = slot.send(Err(BrokerError::ConnectionClosed));
    }
    subs.lock().unwrap().clear();
}
