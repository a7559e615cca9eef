use std::path::PathBuf;
use std::time::Duration;

use clap::Parser;
use portpipe_core::harness::{run_benchmark, BenchConfig, LaunchMode, Thresholds};

/// Runs the whole pipeline under load and reports end-to-end latency.
#[derive(Parser)]
#[command(version)]
struct Args {
    /// Events per second.
    #[arg(long)]
    rate: f64,
    /// Seconds.
    #[arg(long, value_parser = portpipe_cli::parse_seconds)]
    duration: Duration,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON thresholds file; see the README for its keys.
    #[arg(long)]
    thresholds: Option<PathBuf>,
    /// Run every service inside this process instead of spawning binaries.
    #[arg(long)]
    in_process: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn sibling_bin_dir() -> std::io::Result<PathBuf> {
    let exe = std::env::current_exe()?;
    Ok(exe.parent().map(PathBuf::from).unwrap_or_default())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    portpipe_cli::init_tracing();
    let args = Args::parse();
    let work = tempfile::tempdir()?;
    let mut cfg = BenchConfig::new(args.rate, args.duration, work.path().to_path_buf());
    cfg.out_dir = Some(args.out.clone());
    cfg.seed = args.seed;
    if let Some(p) = &args.thresholds {
        cfg.thresholds = Thresholds::load(p)?;
    }
    if !args.in_process {
        cfg.mode = LaunchMode::Processes {
            bin_dir: sibling_bin_dir()?,
        };
    }
    let outcome = run_benchmark(&cfg).await?;
    let r = &outcome.report;
    println!("{}", serde_json::to_string_pretty(&r.verdicts)?);
    if let Some(s) = &r.summary.t_transf_cep {
        eprintln!(
            "sent {} measured {} p99 {:.3} ms mean {:.3} ms, report in {}",
            r.counts.sent,
            r.counts.measured,
            s.p99_ms,
            s.mean_ms,
            args.out.display()
        );
    }
    if !r.verdicts.pass {
        std::process::exit(2);
    }
    Ok(())
}
