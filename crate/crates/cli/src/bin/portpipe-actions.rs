use std::path::PathBuf;
use std::sync::Arc;

use clap::Parser;
use portpipe_core::actions::{self, ActionsConfig, ActionsStats, SinkKind, DEFAULT_HTTP_PORT};
use portpipe_core::broker::QueueName;

/// Executes the action named by each alert's tags.
#[derive(Parser)]
#[command(version)]
struct Args {
    #[arg(long)]
    input_queue: QueueName,
    #[arg(long, default_value = "localhost")]
    host: String,
    /// Files written by the file action stay under this directory.
    #[arg(long, default_value = ".")]
    file_root: PathBuf,
    /// jsonl or external
    #[arg(long, default_value = "jsonl")]
    sink: SinkKind,
    /// Where the jsonl sink keeps its documents.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_HTTP_PORT)]
    http_port: u16,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let mut cfg = ActionsConfig::new(args.input_queue);
    cfg.host = args.host;
    cfg.file_root = args.file_root;
    cfg.sink = args.sink;
    cfg.data_dir = args.data_dir;
    let listener = tokio::net::TcpListener::bind(("0.0.0.0", args.http_port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "actions listening");
    let shutdown = portpipe_cli::shutdown_token();
    actions::serve(cfg, listener, Arc::new(ActionsStats::default()), shutdown).await?;
    Ok(())
}
