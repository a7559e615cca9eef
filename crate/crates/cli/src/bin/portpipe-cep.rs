use std::sync::Arc;

use clap::Parser;
use portpipe_core::broker::{default_port, QueueName};
use portpipe_core::cep::{self, CepConfig, CepStats, DEFAULT_ALERTS_QUEUE, DEFAULT_HTTP_PORT};

/// Complex event processing service with a REST deployment API.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long, default_value_t = DEFAULT_HTTP_PORT)]
    http_port: u16,
    #[arg(long, default_value = DEFAULT_ALERTS_QUEUE)]
    alerts_queue: QueueName,
    #[arg(long, default_value = "localhost")]
    alerts_host: String,
    /// Drive engine time from event genTs and POST /clock (tests only).
    #[arg(long)]
    test_clock: bool,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let cfg = CepConfig {
        alerts_queue: args.alerts_queue,
        alerts_host: args.alerts_host,
        broker_port: default_port(),
        test_clock: args.test_clock,
        ..CepConfig::default()
    };
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.http_port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "cep listening");
    let shutdown = portpipe_cli::shutdown_token();
    cep::serve(cfg, listener, Arc::new(CepStats::default()), shutdown).await?;
    Ok(())
}
