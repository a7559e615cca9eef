//! Queue bookkeeping shared by all broker connections.
//!
//! The state machine is synchronous; the server wraps it in a mutex so all
//! mutations to a queue are totally ordered. Outbound frames go through
//! unbounded per-connection channels and never block while the lock is held.

use std::collections::{BTreeMap, HashMap, VecDeque};

use tokio::sync::mpsc::UnboundedSender;

use super::frame::{BrokerStats, ErrorCode, Frame, Payload, QueueStats};
use super::QueueName;

pub(crate) type ConnId = u64;

#[derive(Debug, Clone)]
struct Message {
    payload: Vec<u8>,
    redelivered: bool,
}

#[derive(Debug)]
struct Consumer {
    conn: ConnId,
    prefetch: u32,
    outstanding: u32,
}

#[derive(Debug, Default)]
struct QueueState {
    pending: VecDeque<Message>,
    consumers: Vec<Consumer>,
    cursor: usize,
    stats: QueueStats,
}

struct ConnState {
    next_tag: u64,
    unacked: HashMap<u64, (String, Message)>,
    tx: UnboundedSender<Frame>,
}

pub(crate) struct BrokerState {
    queues: BTreeMap<String, QueueState>,
    conns: HashMap<ConnId, ConnState>,
    auto_declare: bool,
}

impl BrokerState {
    pub(crate) fn new(auto_declare: bool) -> Self {
        Self {
            queues: BTreeMap::new(),
            conns: HashMap::new(),
            auto_declare,
        }
    }

    pub(crate) fn connect(&mut self, conn: ConnId, tx: UnboundedSender<Frame>) {
        self.conns.insert(
            conn,
            ConnState {
                next_tag: 1,
                unacked: HashMap::new(),
                tx,
            },
        );
    }

    /// Applies one client request and returns the reply frame.
    pub(crate) fn handle(&mut self, conn: ConnId, frame: Frame) -> Frame {
        match frame {
            Frame::Declare { queue } => match QueueName::new(queue) {
                Ok(q) => {
                    self.queues.entry(q.into_string()).or_default();
                    Frame::ok()
                }
                Err(e) => Frame::err(ErrorCode::InvalidName, e.to_string()),
            },
            Frame::Publish { queue, payload } => match self.resolve(queue) {
                Ok(q) => {
                    self.publish(&q, payload.0);
                    Frame::ok()
                }
                Err(f) => f,
            },
            Frame::Subscribe { queue, prefetch } => {
                if prefetch == 0 {
                    return Frame::err(ErrorCode::Protocol, "prefetch must be positive");
                }
                match self.resolve(queue) {
                    Ok(q) => {
                        self.subscribe(conn, &q, prefetch);
                        Frame::ok()
                    }
                    Err(f) => f,
                }
            }
            Frame::Ack { tag } => match self.ack(conn, tag) {
                true => Frame::ok(),
                false => Frame::err(ErrorCode::UnknownTag, format!("unknown delivery tag {tag}")),
            },
            Frame::Stats => Frame::Ok {
                stats: Some(self.stats()),
            },
            other => Frame::err(
                ErrorCode::Protocol,
                format!("unexpected client frame {}", frame_type(&other)),
            ),
        }
    }

    fn resolve(&mut self, queue: String) -> Result<String, Frame> {
        let q = QueueName::new(queue)
            .map_err(|e| Frame::err(ErrorCode::InvalidName, e.to_string()))?
            .into_string();
        if !self.queues.contains_key(&q) {
            if !self.auto_declare {
                return Err(Frame::err(ErrorCode::UnknownQueue, format!("unknown queue `{q}`")));
            }
            self.queues.insert(q.clone(), QueueState::default());
        }
        Ok(q)
    }

    fn publish(&mut self, queue: &str, payload: Vec<u8>) {
        let q = self.queues.get_mut(queue).expect("resolved queue");
        q.pending.push_back(Message {
            payload,
            redelivered: false,
        });
        q.stats.published += 1;
        self.dispatch(queue);
    }

    fn subscribe(&mut self, conn: ConnId, queue: &str, prefetch: u32) {
        let q = self.queues.get_mut(queue).expect("resolved queue");
        match q.consumers.iter_mut().find(|c| c.conn == conn) {
            Some(c) => c.prefetch = prefetch,
            None => q.consumers.push(Consumer {
                conn,
                prefetch,
                outstanding: 0,
            }),
        }
        self.dispatch(queue);
    }

    fn ack(&mut self, conn: ConnId, tag: u64) -> bool {
        let Some(state) = self.conns.get_mut(&conn) else {
            return false;
        };
        let Some((queue, _)) = state.unacked.remove(&tag) else {
            return false;
        };
        if let Some(q) = self.queues.get_mut(&queue) {
            q.stats.acked += 1;
            if let Some(c) = q.consumers.iter_mut().find(|c| c.conn == conn) {
                c.outstanding = c.outstanding.saturating_sub(1);
            }
        }
        self.dispatch(&queue);
        true
    }

    /// Drops a connection, returning its unacknowledged messages to the head
    /// of their queues in original delivery order.
    pub(crate) fn disconnect(&mut self, conn: ConnId) {
        let Some(state) = self.conns.remove(&conn) else {
            return;
        };
        let mut touched: Vec<String> = Vec::new();
        for (name, q) in self.queues.iter_mut() {
            let before = q.consumers.len();
            q.consumers.retain(|c| c.conn != conn);
            if q.consumers.len() != before {
                q.cursor = 0;
                touched.push(name.clone());
            }
        }
        let mut unacked: Vec<_> = state.unacked.into_iter().collect();
        unacked.sort_by(|a, b| b.0.cmp(&a.0));
        for (_, (queue, mut msg)) in unacked {
            if let Some(q) = self.queues.get_mut(&queue) {
                msg.redelivered = true;
                q.pending.push_front(msg);
                q.stats.depth = q.pending.len();
                q.stats.max_depth = q.stats.max_depth.max(q.pending.len());
                if !touched.contains(&queue) {
                    touched.push(queue);
                }
            }
        }
        for queue in touched {
            self.dispatch(&queue);
        }
    }

    /// Round-robin delivery among consumers with an open prefetch window.
    fn dispatch(&mut self, queue: &str) {
        let Some(q) = self.queues.get_mut(queue) else {
            return;
        };
        while !q.pending.is_empty() {
            let n = q.consumers.len();
            let Some(i) = (0..n)
                .map(|k| (q.cursor + k) % n)
                .find(|&i| q.consumers[i].outstanding < q.consumers[i].prefetch)
            else {
                break;
            };
            q.cursor = (i + 1) % n;
            let msg = q.pending.pop_front().expect("non-empty");
            let consumer = &mut q.consumers[i];
            let conn = self
                .conns
                .get_mut(&consumer.conn)
                .expect("consumers always have a live connection");
            let tag = conn.next_tag;
            conn.next_tag += 1;
            consumer.outstanding += 1;
            q.stats.delivered += 1;
            if msg.redelivered {
                q.stats.redelivered += 1;
            }
            // A failed send means the connection is closing; the message stays
            // unacked and is requeued by `disconnect`.
            let _ = conn.tx.send(Frame::Deliver {
                queue: queue.to_owned(),
                tag,
                payload: Payload(msg.payload.clone()),
            });
            conn.unacked.insert(tag, (queue.to_owned(), msg));
        }
        q.stats.depth = q.pending.len();
        q.stats.max_depth = q.stats.max_depth.max(q.pending.len());
    }

    pub(crate) fn stats(&self) -> BrokerStats {
        let mut unacked: HashMap<&str, usize> = HashMap::new();
        for c in self.conns.values() {
            for (q, _) in c.unacked.values() {
                *unacked.entry(q.as_str()).or_default() += 1;
            }
        }
        self.queues
            .iter()
            .map(|(name, q)| {
                let mut s = q.stats.clone();
                s.depth = q.pending.len();
                s.consumers = q.consumers.len();
                s.unacked = unacked.get(name.as_str()).copied().unwrap_or(0);
                (name.clone(), s)
            })
            .collect()
    }
}

fn frame_type(f: &Frame) -> &'static str {
    match f {
        Frame::Declare { .. } => "DECLARE",
        Frame::Publish { .. } => "PUBLISH",
        Frame::Subscribe { .. } => "SUBSCRIBE",
        Frame::Deliver { .. } => "DELIVER",
        Frame::Ack { .. } => "ACK",
        Frame::Stats => "STATS",
        Frame::Ok { .. } => "OK",
        Frame::Err { .. } => "ERR",
    }
}
