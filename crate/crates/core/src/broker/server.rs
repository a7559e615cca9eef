use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use tokio::io::{AsyncWriteExt, BufReader, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;
use tracing::{debug, info, warn};

use super::frame::{read_frame, ErrorCode, Frame, FrameError};
use super::state::{BrokerState, ConnId};

#[derive(Debug, Clone)]
pub struct BrokerConfig {
    /// Create queues implicitly on first publish or subscribe.
    pub auto_declare: bool,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self { auto_declare: true }
    }
}

/// A bound, not yet running, broker.
pub struct BrokerServer {
    listener: TcpListener,
    state: Arc<Mutex<BrokerState>>,
}

/// Handle to a broker running on a background task.
pub struct BrokerHandle {
    pub addr: SocketAddr,
    shutdown: CancellationToken,
    task: JoinHandle<()>,
}

impl BrokerHandle {
    pub async fn shutdown(self) {
        self.shutdown.cancel();
        let _ = self.task.await;
    }
}

impl BrokerServer {
    pub async fn bind(addr: &str, config: BrokerConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        Ok(Self {
            listener,
            state: Arc::new(Mutex::new(BrokerState::new(config.auto_declare))),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn spawn(self) -> io::Result<BrokerHandle> {
        let addr = self.local_addr()?;
        let shutdown = CancellationToken::new();
        let task = tokio::spawn(self.run(shutdown.clone()));
        Ok(BrokerHandle {
            addr,
            shutdown,
            task,
        })
    }

    pub async fn run(self, shutdown: CancellationToken) {
        let next_id = AtomicU64::new(1);
        if let Ok(addr) = self.listener.local_addr() {
            info!(%addr, "broker listening");
        }
        loop {
            let accepted = tokio::select! {
                _ = shutdown.cancelled() => break,
                a = self.listener.accept() => a,
            };
            match accepted {
                Ok((stream, peer)) => {
                    let id = next_id.fetch_add(1, Ordering::Relaxed);
                    debug!(%peer, conn = id, "connection accepted");
                    let state = Arc::clone(&self.state);
                    let stop = shutdown.child_token();
                    tokio::spawn(async move {
                        if let Err(e) = serve_connection(id, stream, state, stop).await {
                            debug!(conn = id, error = %e, "connection ended with error");
                        }
                    });
                }
                Err(e) => warn!(error = %e, "accept failed"),
            }
        }
    }
}

async fn serve_connection(
    id: ConnId,
    stream: TcpStream,
    state: Arc<Mutex<BrokerState>>,
    stop: CancellationToken,
) -> Result<(), FrameError> {
    stream.set_nodelay(true)?;
    let (rd, wr) = stream.into_split();
    let (tx, rx) = mpsc::unbounded_channel();
    state.lock().unwrap().connect(id, tx.clone());
    let writer = tokio::spawn(write_loop(wr, rx));

    let mut rd = BufReader::new(rd);
    let result = loop {
        let frame = tokio::select! {
            _ = stop.cancelled() => break Ok(()),
            f = read_frame(&mut rd) => f,
        };
        match frame {
            Ok(Some(frame)) => {
                let reply = state.lock().unwrap().handle(id, frame);
                if tx.send(reply).is_err() {
                    break Ok(());
                }
            }
            Ok(None) => break Ok(()),
            Err(FrameError::TooLarge(n)) => {
                let _ = tx.send(Frame::err(
                    ErrorCode::FrameTooLarge,
                    format!("frame of {n} bytes exceeds limit"),
                ));
                break Err(FrameError::TooLarge(n));
            }
            Err(e) => {
                let _ = tx.send(Frame::err(ErrorCode::Protocol, e.to_string()));
                break Err(e);
            }
        }
    };
    state.lock().unwrap().disconnect(id);
    drop(tx);
    let _ = writer.await;
    result
}

async fn write_loop(wr: tokio::net::tcp::OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Frame>) {
    let mut wr = BufWriter::new(wr);
    while let Some(frame) = rx.recv().await {
        if write_one(&mut wr, &frame).await.is_err() {
            return;
        }
        // Drain whatever is already queued before paying for a flush.
        while let Ok(frame) = rx.try_recv() {
            if write_one(&mut wr, &frame).await.is_err() {
                return;
            }
        }
        if wr.flush().await.is_err() {
            return;
        }
    }
    let _ = wr.shutdown().await;
}

async fn write_one<W: tokio::io::AsyncWrite + Unpin>(w: &mut W, frame: &Frame) -> Result<(), FrameError> {
    let bytes = frame.encode()?;
    w.write_all(&bytes).await?;
    Ok(())
}
