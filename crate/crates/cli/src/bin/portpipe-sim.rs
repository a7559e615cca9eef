use std::time::Duration;

use clap::Parser;
use portpipe_core::broker::QueueName;
use portpipe_core::simulator::{self, parse_stations, SimConfig, DEFAULT_QUEUE};

/// Publishes synthetic air-quality readings at a fixed rate and prints a
/// JSON report.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Events per second across all stations.
    #[arg(long)]
    rate: f64,
    /// Seconds.
    #[arg(long, value_parser = portpipe_cli::parse_seconds)]
    duration: Duration,
    /// label:id pairs, comma separated.
    #[arg(long)]
    stations: String,
    #[arg(long, default_value = DEFAULT_QUEUE)]
    queue: QueueName,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "localhost")]
    host: String,
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let stations = parse_stations(&args.stations)?;
    let mut cfg = SimConfig::new(stations, args.rate, args.duration);
    cfg.queue = args.queue;
    cfg.seed = args.seed;
    cfg.host = args.host;
    let report = simulator::run(cfg, portpipe_cli::shutdown_token()).await?;
    if !report.rate_achieved {
        tracing::warn!(actual = report.actual_rate, target = report.target_rate, "RateUnachievable");
    }
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}
