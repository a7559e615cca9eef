use clap::Parser;
use portpipe_core::broker::{default_port, BrokerConfig, BrokerServer};

/// Message broker for the pipeline services.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Listening port [default: $PORTPIPE_BROKER_PORT or 5680]
    #[arg(long)]
    port: Option<u16>,
    #[arg(long, default_value = "0.0.0.0")]
    bind: String,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let shutdown = portpipe_cli::shutdown_token();
    let port = args.port.unwrap_or_else(default_port);
    let broker = BrokerServer::bind(&format!("{}:{port}", args.bind), BrokerConfig::default())
        .await?
        .spawn()?;
    tracing::info!(addr = %broker.addr, "broker listening");
    shutdown.cancelled().await;
    broker.shutdown().await;
    Ok(())
}
