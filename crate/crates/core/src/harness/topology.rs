//! Starts broker, transformer, CEP and actions services, either as tasks in
//! this process or as separate binaries, and wires the case-study pipeline.

use std::net::{SocketAddr, TcpListener as StdListener};
use std::path::PathBuf;
use std::process::Stdio;
use std::sync::Arc;
use std::time::Duration;

use serde_json::json;
use tokio::net::TcpListener;
use tokio::process::{Child, Command};
use tokio::task::JoinHandle;
use tokio_util::sync::CancellationToken;

use super::HarnessError;
use crate::actions::{self, ActionsConfig, ActionsStats};
use crate::broker::{BrokerClient, BrokerConfig, BrokerHandle, BrokerServer, QueueName, PORT_ENV};
use crate::cep::{self, CepConfig, CepStats};
use crate::event::{EventSchema, InputFormat};
use crate::transformer::{self, TransformerConfig, TransformerStats};

pub const RAW_QUEUE: &str = "input-spring";
pub const MAP_QUEUE: &str = "input-map";
pub const ALERTS_QUEUE: &str = "alerts";
pub const MEASURE_QUEUE: &str = "measure";

pub const SCHEMA: &str =
    "@public @buseventtype create schema AirQualityMeasurement as (PM10 integer, PM25 Double, stationId integer)";
pub const DATAFLOW: &str = "create dataflow AMQPIncomingDataFlow AMQPSource -> outstream<AirQualityMeasurement> \
     {host: 'localhost', queueName: 'input-map', collector: {class: 'AMQPSerializer'}, logMessages: true, \
     declareAutoDelete: false, declareDurable: true} EventBusSink(outstream) {}";
/// Hourly batch, 24 h slide and the Good level alert.
pub const CASE_STUDY: [&str; 4] = [
    "@public create context IntervalSpanningSeconds start @now end after3600 s;",
    "@Name('PM10_Avg1h_batch') @public context IntervalSpanningSeconds insert into PM10_Avg1h_batch \
     select a1.stationId as stationId, avg(a1.PM10) as Value, count(*) as Total from AirQualityMeasurement a1 \
     group by a1.stationId output snapshot when terminated;",
    "@Name('PM10_Avg24h_slide') @public @buseventtype insert into PM10_Avg24h_slide select a1.stationId as \
     stationId, avg(a1.Value) as Value, a1.Total as Total from PM10_Avg1h_batch#time(24 hour) a1 group by a1.stationId;",
    "@Tag(name='action', value='file') @Tag(name='name', value='alert.txt') @Name('PM10_Good') @public \
     @buseventtype insert into PollutantLevel select 'PM10' as kindAlertDscr, 1 as AlertLevel, a1.stationId as \
     stationId, a1.Value as Value from pattern [every a1 = PM10_Avg24h_slide (a1.Value >= 0 and a1.Value < 25)];",
];
/// Publishes every ingested record to the measurement queue.
pub const MEASUREMENT: &str =
    "@Tag(name='queue', value='measure') @Name('Measure') select * from AirQualityMeasurement";

const READY_TIMEOUT: Duration = Duration::from_secs(20);

#[derive(Debug, Clone)]
pub enum LaunchMode {
    InProcess,
    /// Binaries are looked up in this directory.
    Processes { bin_dir: PathBuf },
}

#[derive(Debug, Clone)]
pub struct TopologyConfig {
    pub mode: LaunchMode,
    /// CEP engine time follows genTs.
    pub test_clock: bool,
    /// Holds the actions service's files and documents, and process logs.
    pub work_dir: PathBuf,
}

enum Running {
    InProcess {
        stop: CancellationToken,
        tasks: Vec<JoinHandle<()>>,
        broker: BrokerHandle,
    },
    Processes {
        children: Vec<(String, Child)>,
    },
}

pub struct Topology {
    pub broker: SocketAddr,
    pub cep_url: String,
    pub transformer_url: String,
    pub actions_url: String,
    http: reqwest::Client,
    running: Running,
}

fn free_port() -> Result<u16, HarnessError> {
    Ok(StdListener::bind("127.0.0.1:0")?.local_addr()?.port())
}

fn startup(msg: impl ToString) -> HarnessError {
    HarnessError::TopologyStartupFailure(msg.to_string())
}

async fn wait_tcp(addr: SocketAddr) -> Result<(), HarnessError> {
    let deadline = tokio::time::Instant::now() + READY_TIMEOUT;
    while tokio::net::TcpStream::connect(addr).await.is_err() {
        if tokio::time::Instant::now() > deadline {
            return Err(startup(format!("nothing listening on {addr}")));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    Ok(())
}

async fn wait_healthy(http: &reqwest::Client, base: &str) -> Result<(), HarnessError> {
    let deadline = tokio::time::Instant::now() + READY_TIMEOUT;
    loop {
        if let Ok(r) = http.get(format!("{base}/healthz")).send().await {
            if r.status().is_success() {
                return Ok(());
            }
        }
        if tokio::time::Instant::now() > deadline {
            return Err(startup(format!("{base} never became healthy")));
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
}

fn task<E: std::fmt::Display>(name: &'static str, f: impl std::future::Future<Output = Result<(), E>> + Send + 'static) -> JoinHandle<()>
where
    E: Send + 'static,
{
    tokio::spawn(async move {
        if let Err(e) = f.await {
            tracing::error!(service = name, error = %e, "service stopped");
        }
    })
}

impl Topology {
    pub async fn start(cfg: &TopologyConfig) -> Result<Self, HarnessError> {
        std::fs::create_dir_all(&cfg.work_dir)?;
        match &cfg.mode {
            LaunchMode::InProcess => Self::in_process(cfg).await,
            LaunchMode::Processes { bin_dir } => Self::processes(cfg, bin_dir).await,
        }
    }

    async fn in_process(cfg: &TopologyConfig) -> Result<Self, HarnessError> {
        let broker = BrokerServer::bind("127.0.0.1:0", BrokerConfig::default())
            .await?
            .spawn()?;
        let host = broker.addr.to_string();
        let stop = CancellationToken::new();
        let mut tasks = Vec::new();

        let l = TcpListener::bind("127.0.0.1:0").await?;
        let cep_url = format!("http://{}", l.local_addr()?);
        let c = CepConfig {
            alerts_host: "127.0.0.1".into(),
            broker_port: broker.addr.port(),
            test_clock: cfg.test_clock,
            ..CepConfig::default()
        };
        tasks.push(task("cep", cep::serve(c, l, Arc::new(CepStats::default()), stop.clone())));

        let l = TcpListener::bind("127.0.0.1:0").await?;
        let transformer_url = format!("http://{}", l.local_addr()?);
        let mut t = TransformerConfig::new(
            InputFormat::Json,
            QueueName::new(RAW_QUEUE).expect("valid"),
            EventSchema::air_quality(),
        );
        t.output_queue = QueueName::new(MAP_QUEUE).expect("valid");
        t.input_host = host.clone();
        t.output_host = host.clone();
        tasks.push(task(
            "transformer",
            transformer::serve(t, l, Arc::new(TransformerStats::default()), stop.clone()),
        ));

        let l = TcpListener::bind("127.0.0.1:0").await?;
        let actions_url = format!("http://{}", l.local_addr()?);
        let mut a = ActionsConfig::new(QueueName::new(ALERTS_QUEUE).expect("valid"));
        a.host = host;
        a.file_root = cfg.work_dir.join("files");
        a.data_dir = cfg.work_dir.join("db");
        tasks.push(task("actions", actions::serve(a, l, Arc::new(ActionsStats::default()), stop.clone())));

        let t = Topology {
            broker: broker.addr,
            cep_url,
            transformer_url,
            actions_url,
            http: reqwest::Client::new(),
            running: Running::InProcess { stop, tasks, broker },
        };
        t.wait_ready().await?;
        Ok(t)
    }

    async fn processes(cfg: &TopologyConfig, bin_dir: &std::path::Path) -> Result<Self, HarnessError> {
        let broker_port = free_port()?;
        let broker: SocketAddr = ([127, 0, 0, 1], broker_port).into();
        let [cep_port, tr_port, ac_port] = [free_port()?, free_port()?, free_port()?];
        let schema_file = cfg.work_dir.join("schema.json");
        std::fs::write(&schema_file, serde_json::to_vec(&EventSchema::air_quality()).expect("schema"))?;
        let mut children = Vec::new();
        let spawn = |name: &str, args: Vec<String>| -> Result<(String, Child), HarnessError> {
            let log = std::fs::File::create(cfg.work_dir.join(format!("{name}.log")))?;
            let child = Command::new(bin_dir.join(name))
                .args(args)
                .env(PORT_ENV, broker_port.to_string())
                .stdin(Stdio::null())
                .stdout(Stdio::null())
                .stderr(log)
                .kill_on_drop(true)
                .spawn()
                .map_err(|e| startup(format!("{name}: {e}")))?;
            Ok((name.to_owned(), child))
        };
        let s = |x: &str| x.to_string();
        children.push(spawn("portpipe-broker", vec![s("--port"), broker_port.to_string()])?);
        wait_tcp(broker).await?;
        let mut cep_args = vec![s("--http-port"), cep_port.to_string(), s("--alerts-host"), s("127.0.0.1")];
        if cfg.test_clock {
            cep_args.push(s("--test-clock"));
        }
        children.push(spawn("portpipe-cep", cep_args)?);
        children.push(spawn(
            "portpipe-transform",
            vec![
                s("--input-type"),
                s("json"),
                s("--input-queue"),
                s(RAW_QUEUE),
                s("--output-queue"),
                s(MAP_QUEUE),
                s("--input-host"),
                s("127.0.0.1"),
                s("--output-host"),
                s("127.0.0.1"),
                s("--schema-file"),
                schema_file.display().to_string(),
                s("--http-port"),
                tr_port.to_string(),
            ],
        )?);
        children.push(spawn(
            "portpipe-actions",
            vec![
                s("--input-queue"),
                s(ALERTS_QUEUE),
                s("--host"),
                s("127.0.0.1"),
                s("--file-root"),
                cfg.work_dir.join("files").display().to_string(),
                s("--data-dir"),
                cfg.work_dir.join("db").display().to_string(),
                s("--http-port"),
                ac_port.to_string(),
            ],
        )?);
        let t = Topology {
            broker,
            cep_url: format!("http://127.0.0.1:{cep_port}"),
            transformer_url: format!("http://127.0.0.1:{tr_port}"),
            actions_url: format!("http://127.0.0.1:{ac_port}"),
            http: reqwest::Client::new(),
            running: Running::Processes { children },
        };
        t.wait_ready().await?;
        Ok(t)
    }

    async fn wait_ready(&self) -> Result<(), HarnessError> {
        for base in [&self.cep_url, &self.transformer_url, &self.actions_url] {
            wait_healthy(&self.http, base).await?;
        }
        Ok(())
    }

    /// `(name, pid)` of every service process.
    pub fn pids(&self) -> Vec<(String, u32)> {
        match &self.running {
            Running::InProcess { .. } => vec![("portpipe (in-process)".into(), std::process::id())],
            Running::Processes { children } => children
                .iter()
                .filter_map(|(n, c)| c.id().map(|p| (n.clone(), p)))
                .collect(),
        }
    }

    pub fn broker_host(&self) -> String {
        self.broker.to_string()
    }

    pub async fn broker_client(&self) -> Result<BrokerClient, HarnessError> {
        Ok(BrokerClient::connect(&self.broker_host()).await?)
    }

    /// POSTs `{key: text}` to the CEP service; returns the deployment id.
    pub async fn deploy(&self, path: &str, key: &str, text: &str) -> Result<u64, HarnessError> {
        self.deploy_json(path, json!({ key: text })).await
    }

    async fn deploy_json(&self, path: &str, body: serde_json::Value) -> Result<u64, HarnessError> {
        let r = self
            .http
            .post(format!("{}{path}", self.cep_url))
            .json(&body)
            .send()
            .await
            .map_err(|e| HarnessError::Run(e.to_string()))?;
        let status = r.status();
        let v: serde_json::Value = r.json().await.unwrap_or_default();
        if status.as_u16() != 201 {
            return Err(HarnessError::Run(format!("{path} -> {status}: {v}")));
        }
        v["id"].as_u64().ok_or_else(|| HarnessError::Run(format!("{path}: no id in {v}")))
    }

    /// Schema, the case-study statements, optionally the measurement
    /// select, and the dataflow last so no event arrives half-configured.
    pub async fn deploy_case_study(&self, measure: bool) -> Result<(), HarnessError> {
        self.deploy("/schema", "schema", SCHEMA).await?;
        for stmt in CASE_STUDY {
            self.deploy("/pattern", "pattern", stmt).await?;
        }
        if measure {
            self.deploy("/pattern", "pattern", MEASUREMENT).await?;
        }
        self.deploy_json("/dataflow", json!({ "dataflow": DATAFLOW, "name": "AMQPIncomingDataFlow" }))
            .await?;
        Ok(())
    }

    pub async fn get_json(&self, url: &str) -> Result<serde_json::Value, HarnessError> {
        self.http
            .get(url)
            .send()
            .await
            .map_err(|e| HarnessError::Run(e.to_string()))?
            .json()
            .await
            .map_err(|e| HarnessError::Run(e.to_string()))
    }

    pub async fn transformer_stats(&self) -> Result<serde_json::Value, HarnessError> {
        self.get_json(&format!("{}/stats", self.transformer_url)).await
    }

    pub async fn cep_stats(&self) -> Result<serde_json::Value, HarnessError> {
        self.get_json(&format!("{}/stats", self.cep_url)).await
    }

    pub async fn actions_stats(&self) -> Result<serde_json::Value, HarnessError> {
        self.get_json(&format!("{}/stats", self.actions_url)).await
    }

    /// Advances a test-clock CEP service to `now`.
    pub async fn advance_clock(&self, now: i64) -> Result<(), HarnessError> {
        let r = self
            .http
            .post(format!("{}/clock", self.cep_url))
            .header(cep::TEST_CLOCK_HEADER, now.to_string())
            .send()
            .await
            .map_err(|e| HarnessError::Run(e.to_string()))?;
        if !r.status().is_success() {
            return Err(HarnessError::Run(format!("clock -> {}", r.status())));
        }
        Ok(())
    }

    pub async fn shutdown(self) {
        match self.running {
            Running::InProcess { stop, tasks, broker } => {
                stop.cancel();
                for t in tasks {
                    let _ = tokio::time::timeout(Duration::from_secs(10), t).await;
                }
                broker.shutdown().await;
            }
            Running::Processes { mut children } => {
                // Services first so the broker outlives their final acks.
                for (_, c) in children.iter_mut().rev() {
                    let _ = c.kill().await;
                }
            }
        }
    }
}
