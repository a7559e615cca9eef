use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use portpipe_core::broker::QueueName;
use portpipe_core::event::InputFormat;
use portpipe_core::transformer::{self, TransformerConfig, TransformerStats, DEFAULT_HTTP_PORT};
use portpipe_core::EventSchema;

/// Turns raw JSON or XML messages into canonical event maps.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// json or xml
    #[arg(long)]
    input_type: InputFormat,
    #[arg(long)]
    input_queue: QueueName,
    #[arg(long, default_value = transformer::DEFAULT_OUTPUT_QUEUE)]
    output_queue: QueueName,
    #[arg(long, default_value = transformer::DEFAULT_HOST)]
    input_host: String,
    #[arg(long, default_value = transformer::DEFAULT_HOST)]
    output_host: String,
    /// JSON `{"name": .., "fields": [{"name": .., "type": ..}]}`
    #[arg(long)]
    schema_file: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HTTP_PORT)]
    http_port: u16,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let text = std::fs::read_to_string(&args.schema_file)
        .map_err(|e| format!("{}: {e}", args.schema_file.display()))?;
    let schema: EventSchema =
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", args.schema_file.display()))?;
    let mut cfg = TransformerConfig::new(args.input_type, args.input_queue, schema);
    cfg.output_queue = args.output_queue;
    cfg.input_host = args.input_host;
    cfg.output_host = args.output_host;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.http_port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "transformer listening");
    let shutdown = portpipe_cli::shutdown_token();
    transformer::serve(cfg, listener, Arc::new(TransformerStats::default()), shutdown).await?;
    Ok(())
}
