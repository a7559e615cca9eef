//! One benchmark run: topology up, case study deployed, simulator at the
//! target rate, measured records collected, report written.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use tokio::sync::watch;
use tokio_util::sync::CancellationToken;

use super::procstat::Sampler;
use super::topology::{LaunchMode, Topology, TopologyConfig, MAP_QUEUE, MEASURE_QUEUE, RAW_QUEUE};
use super::{summarize, write_report, Counts, DepthSample, HarnessError, LatencySample, ResourceSample, RunReport, Thresholds};
use crate::alert::AlertEnvelope;
use crate::broker::QueueName;
use crate::simulator::{self, parse_stations, SimConfig, SimReport};

pub const STATIONS: &str = "cadiz:1,puertoreal:2";
const DEPTH_EVERY: Duration = Duration::from_millis(250);

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub rate: f64,
    pub duration: Duration,
    pub mode: LaunchMode,
    pub thresholds: Thresholds,
    /// Report directory; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    pub seed: u64,
    pub work_dir: PathBuf,
}

impl BenchConfig {
    pub fn new(rate: f64, duration: Duration, work_dir: PathBuf) -> Self {
        Self {
            rate,
            duration,
            mode: LaunchMode::InProcess,
            thresholds: Thresholds::default(),
            out_dir: None,
            seed: 0,
            work_dir,
        }
    }
}

/// The report plus the raw series it was computed from.
#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: RunReport,
    pub samples: Vec<LatencySample>,
    pub depth: Vec<DepthSample>,
}

fn count(v: &serde_json::Value, key: &str) -> u64 {
    v[key].as_u64().unwrap_or(0)
}

async fn run_simulator(topo: &Topology, cfg: &BenchConfig) -> Result<SimReport, HarnessError> {
    match &cfg.mode {
        LaunchMode::InProcess => {
            let stations = parse_stations(STATIONS).expect("valid stations");
            let mut sim = SimConfig::new(stations, cfg.rate, cfg.duration);
            sim.host = topo.broker_host();
            sim.seed = cfg.seed;
            simulator::run(sim, CancellationToken::new())
                .await
                .map_err(|e| HarnessError::Run(e.to_string()))
        }
        LaunchMode::Processes { bin_dir } => {
            let out = tokio::process::Command::new(bin_dir.join("portpipe-sim"))
                .args([
                    "--rate".to_string(),
                    cfg.rate.to_string(),
                    "--duration".into(),
                    cfg.duration.as_secs_f64().to_string(),
                    "--stations".into(),
                    STATIONS.into(),
                    "--host".into(),
                    topo.broker_host(),
                    "--seed".into(),
                    cfg.seed.to_string(),
                ])
                .kill_on_drop(true)
                .output()
                .await?;
            if !out.status.success() {
                return Err(HarnessError::Run(format!(
                    "portpipe-sim failed: {}",
                    String::from_utf8_lossy(&out.stderr)
                )));
            }
            serde_json::from_slice(&out.stdout).map_err(|e| HarnessError::Run(format!("portpipe-sim output: {e}")))
        }
    }
}

pub async fn run_benchmark(cfg: &BenchConfig) -> Result<BenchOutcome, HarnessError> {
    if !(cfg.rate.is_finite() && cfg.rate > 0.0) {
        return Err(HarnessError::InvalidRate);
    }
    let topo = Topology::start(&TopologyConfig {
        mode: cfg.mode.clone(),
        test_clock: false,
        work_dir: cfg.work_dir.clone(),
    })
    .await?;
    let result = measure(&topo, cfg).await;
    topo.shutdown().await;
    let outcome = result?;
    if let Some(dir) = &cfg.out_dir {
        write_report(dir, &outcome.report, &outcome.samples, &outcome.depth)?;
    }
    Ok(outcome)
}

async fn measure(topo: &Topology, cfg: &BenchConfig) -> Result<BenchOutcome, HarnessError> {
    let client = topo.broker_client().await?;
    let measure_q = QueueName::new(MEASURE_QUEUE).expect("valid");
    client.declare(&measure_q).await?;
    // Subscribe before any event can flow.
    let mut sub = client.subscribe(&measure_q, 4096).await?;
    topo.deploy_case_study(true).await?;

    let stop = CancellationToken::new();
    let (measured_tx, measured_rx) = watch::channel(0u64);
    let collector = {
        let client = client.clone();
        let stop = stop.clone();
        tokio::spawn(async move {
            let mut samples = Vec::new();
            loop {
                let d = tokio::select! {
                    _ = stop.cancelled() => break,
                    d = sub.next() => match d { Some(d) => d, None => break },
                };
                let _ = client.ack_nowait(d.tag);
                match serde_json::from_slice::<AlertEnvelope>(&d.payload) {
                    Ok(env) => {
                        if let Some(gen_ts) = env.gen_ts {
                            samples.push(LatencySample {
                                gen_ts,
                                transf_ts: env.transf_ts,
                                detect_ts: Some(env.detect_ts),
                            });
                            measured_tx.send_replace(samples.len() as u64);
                        }
                    }
                    Err(e) => tracing::warn!(error = %e, "unreadable measurement"),
                }
            }
            samples
        })
    };

    let max_depth = Arc::new(Mutex::new(BTreeMap::<String, usize>::new()));
    let depth_task = {
        let client = client.clone();
        let stop = stop.clone();
        let max_depth = Arc::clone(&max_depth);
        tokio::spawn(async move {
            let start = Instant::now();
            let mut series = Vec::new();
            let mut tick = tokio::time::interval(DEPTH_EVERY);
            loop {
                tokio::select! {
                    _ = stop.cancelled() => break,
                    _ = tick.tick() => {}
                }
                let Ok(stats) = client.stats().await else { continue };
                let mut backlog = 0;
                let mut m = max_depth.lock().expect("not poisoned");
                for q in [RAW_QUEUE, MAP_QUEUE, MEASURE_QUEUE] {
                    if let Some(s) = stats.get(q) {
                        let d = s.depth + s.unacked;
                        let e = m.entry(q.to_owned()).or_default();
                        *e = (*e).max(s.max_depth).max(d);
                        if q != MEASURE_QUEUE {
                            backlog += d;
                        }
                    }
                }
                series.push(DepthSample {
                    t_ms: start.elapsed().as_millis() as u64,
                    depth: backlog,
                });
            }
            series
        })
    };

    let resources_task = {
        let stop = stop.clone();
        let mut sampler = Sampler::new(topo.pids());
        tokio::spawn(async move {
            let mut out: Vec<ResourceSample> = Vec::new();
            let mut tick = tokio::time::interval(Duration::from_secs(1));
            loop {
                tokio::select! {
                    _ = stop.cancelled() => break,
                    _ = tick.tick() => out.extend(sampler.sample()),
                }
            }
            out
        })
    };

    let sim = run_simulator(topo, cfg).await;
    let sim = match sim {
        Ok(s) => s,
        Err(e) => {
            stop.cancel();
            return Err(e);
        }
    };

    // Drain: wait for every sent event to be measured, giving up once the
    // timeout passes or the count stops moving for two seconds.
    let deadline = Instant::now() + Duration::from_secs_f64(cfg.thresholds.drain_timeout_s);
    let mut rx = measured_rx;
    let mut last_change = Instant::now();
    while *rx.borrow() < sim.sent && Instant::now() < deadline {
        match tokio::time::timeout(Duration::from_millis(200), rx.changed()).await {
            Ok(Ok(())) => last_change = Instant::now(),
            Ok(Err(_)) => break,
            Err(_) if last_change.elapsed() > Duration::from_secs(2) => break,
            Err(_) => {}
        }
    }
    let tr = topo.transformer_stats().await?;
    let cep = topo.cep_stats().await?;
    stop.cancel();
    let samples = collector.await.map_err(|e| HarnessError::Run(e.to_string()))?;
    let depth = depth_task.await.map_err(|e| HarnessError::Run(e.to_string()))?;
    let resources = resources_task.await.map_err(|e| HarnessError::Run(e.to_string()))?;
    client.close();

    let counts = Counts {
        sent: sim.sent,
        transformed: count(&tr, "transformed"),
        transformer_dead_lettered: count(&tr, "deadLettered"),
        ingested: count(&cep, "ingested"),
        measured: samples.len() as u64,
    };
    let summary = summarize(&samples, &cfg.thresholds.buckets_ms)?;
    let (verdicts, flags, measured_fraction) =
        RunReport::judge(&sim, &counts, &summary, &depth, &cfg.thresholds);
    let max_queue_depth = max_depth.lock().expect("not poisoned").clone();
    let report = RunReport {
        rate: cfg.rate,
        duration_s: cfg.duration.as_secs_f64(),
        mode: match cfg.mode {
            LaunchMode::InProcess => "in-process".into(),
            LaunchMode::Processes { .. } => "processes".into(),
        },
        simulator: sim,
        counts,
        measured_fraction,
        max_queue_depth,
        summary,
        thresholds: cfg.thresholds.clone(),
        verdicts,
        flags,
        resources,
    };
    Ok(BenchOutcome { report, samples, depth })
}
