//! End-to-end latency measurement: sample summaries, verdicts and the
//! report files.

pub mod bench;
pub mod procstat;
pub mod topology;

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::event::Timestamp;
use crate::simulator::SimReport;

pub use bench::{run_benchmark, BenchConfig, BenchOutcome};
pub use procstat::ResourceSample;
pub use topology::{LaunchMode, Topology, TopologyConfig};

const NANOS_PER_MS: f64 = 1e6;
const NANOS_PER_SEC: i64 = 1_000_000_000;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no samples to summarize")]
    EmptyInput,
    #[error("rate must be positive")]
    InvalidRate,
    #[error("topology failed to start: {0}")]
    TopologyStartupFailure(String),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Broker(#[from] crate::broker::BrokerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Run(String),
}

/// One event traced through the pipeline. Times are wall-clock nanoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LatencySample {
    pub gen_ts: Timestamp,
    pub transf_ts: Option<Timestamp>,
    pub detect_ts: Option<Timestamp>,
}

impl LatencySample {
    pub fn t_transf(&self) -> Option<i64> {
        self.transf_ts.map(|t| t - self.gen_ts)
    }

    pub fn t_transf_cep(&self) -> Option<i64> {
        self.detect_ts.map(|t| t - self.gen_ts)
    }
}

/// Upper bounds, in ms, of all buckets but the last.
pub const DEFAULT_BUCKETS_MS: [f64; 4] = [2.0, 10.0, 40.0, 160.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Stats {
    pub count: u64,
    pub min_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
    /// Population standard deviation.
    pub sd_ms: f64,
    /// Nearest-rank 99th percentile.
    pub p99_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SecondMean {
    /// Whole seconds since the first generation time.
    pub second: u64,
    pub count: u64,
    pub t_transf_ms: Option<f64>,
    pub t_transf_cep_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Bucket {
    pub label: String,
    pub lo_ms: f64,
    pub hi_ms: Option<f64>,
    pub t_transf: f64,
    pub t_transf_cep: f64,
    pub t_transf_cumulative: f64,
    pub t_transf_cep_cumulative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Summary {
    pub per_second: Vec<SecondMean>,
    pub t_transf: Option<Stats>,
    pub t_transf_cep: Option<Stats>,
    pub buckets: Vec<Bucket>,
}

/// Exact running sums in integer nanoseconds.
#[derive(Debug, Default, Clone, Copy)]
struct Acc {
    n: u64,
    sum: i128,
}

impl Acc {
    fn add(&mut self, x: i64) {
        self.n += 1;
        self.sum += x as i128;
    }

    fn mean_ms(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum as f64 / self.n as f64 / NANOS_PER_MS)
    }
}

fn stats(mut xs: Vec<i64>) -> Option<Stats> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_unstable();
    let n = xs.len() as i128;
    let sum: i128 = xs.iter().map(|&x| x as i128).sum();
    let sum_sq: i128 = xs.iter().map(|&x| (x as i128) * (x as i128)).sum();
    // n² · variance, exact.
    let scaled_var = n * sum_sq - sum * sum;
    let sd_ns = (scaled_var as f64).sqrt() / n as f64;
    let rank = (xs.len() * 99).div_ceil(100).max(1);
    Some(Stats {
        count: xs.len() as u64,
        min_ms: xs[0] as f64 / NANOS_PER_MS,
        max_ms: xs[xs.len() - 1] as f64 / NANOS_PER_MS,
        mean_ms: sum as f64 / n as f64 / NANOS_PER_MS,
        sd_ms: sd_ns / NANOS_PER_MS,
        p99_ms: xs[rank - 1] as f64 / NANOS_PER_MS,
    })
}

fn bucket_of(x_ns: i64, bounds_ms: &[f64]) -> usize {
    bounds_ms
        .iter()
        .take_while(|b| x_ns as f64 >= **b * NANOS_PER_MS)
        .count()
}

fn bucket_label(lo: f64, hi: Option<f64>) -> String {
    match hi {
        None => format!(">={lo}ms"),
        Some(hi) if lo == 0.0 => format!("<{hi}ms"),
        Some(hi) => format!("{lo}-{hi}ms"),
    }
}

/// Per-second means, global stats and bucket fractions.
pub fn summarize(samples: &[LatencySample], bounds_ms: &[f64]) -> Result<Summary, HarnessError> {
    let first = samples.iter().map(|s| s.gen_ts).min().ok_or(HarnessError::EmptyInput)?;
    let mut seconds: BTreeMap<u64, (u64, Acc, Acc)> = BTreeMap::new();
    let mut transf = Vec::with_capacity(samples.len());
    let mut cep = Vec::with_capacity(samples.len());
    let mut counts = vec![(0u64, 0u64); bounds_ms.len() + 1];
    for s in samples {
        let slot = seconds.entry(((s.gen_ts - first) / NANOS_PER_SEC) as u64).or_default();
        slot.0 += 1;
        if let Some(t) = s.t_transf() {
            slot.1.add(t);
            transf.push(t);
            counts[bucket_of(t, bounds_ms)].0 += 1;
        }
        if let Some(t) = s.t_transf_cep() {
            slot.2.add(t);
            cep.push(t);
            counts[bucket_of(t, bounds_ms)].1 += 1;
        }
    }
    let per_second = seconds
        .into_iter()
        .map(|(second, (count, a, b))| SecondMean {
            second,
            count,
            t_transf_ms: a.mean_ms(),
            t_transf_cep_ms: b.mean_ms(),
        })
        .collect();
    let frac = |k: u64, n: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let (mut ca, mut cb) = (0u64, 0u64);
    let buckets = counts
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| {
            ca += a;
            cb += b;
            let lo = if i == 0 { 0.0 } else { bounds_ms[i - 1] };
            let hi = bounds_ms.get(i).copied();
            Bucket {
                label: bucket_label(lo, hi),
                lo_ms: lo,
                hi_ms: hi,
                t_transf: frac(a, transf.len()),
                t_transf_cep: frac(b, cep.len()),
                t_transf_cumulative: frac(ca, transf.len()),
                t_transf_cep_cumulative: frac(cb, cep.len()),
            }
        })
        .collect();
    Ok(Summary {
        per_second,
        t_transf: stats(transf),
        t_transf_cep: stats(cep),
        buckets,
    })
}

/// Broker queue depths at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DepthSample {
    pub t_ms: u64,
    pub depth: usize,
}

/// Growth is bounded when the deepest backlog in the final third of the
/// run is at most twice the deepest in the first third, or under 100 ms
/// of input.
pub fn queue_bounded(series: &[DepthSample], rate: f64) -> bool {
    if series.len() < 3 {
        return true;
    }
    let third = series.len() / 3;
    let early = series[..third].iter().map(|d| d.depth).max().unwrap_or(0);
    let late = series[series.len() - third..].iter().map(|d| d.depth).max().unwrap_or(0);
    late as f64 <= (2.0 * early as f64).max(rate * 0.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct Thresholds {
    pub p99_ms: f64,
    pub min_measured_fraction: f64,
    pub buckets_ms: Vec<f64>,
    /// How long to wait for stragglers after the simulator stops.
    pub drain_timeout_s: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            p99_ms: 50.0,
            min_measured_fraction: 0.99,
            buckets_ms: DEFAULT_BUCKETS_MS.to_vec(),
            drain_timeout_s: 15.0,
        }
    }
}

impl Thresholds {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| HarnessError::Run(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Counts {
    pub sent: u64,
    pub transformed: u64,
    pub transformer_dead_lettered: u64,
    pub ingested: u64,
    pub measured: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdicts {
    pub rate_sustained: bool,
    pub queue_bounded: bool,
    pub measured: bool,
    pub p99_within_threshold: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunReport {
    pub rate: f64,
    pub duration_s: f64,
    pub mode: String,
    pub simulator: SimReport,
    pub counts: Counts,
    pub measured_fraction: f64,
    pub max_queue_depth: BTreeMap<String, usize>,
    pub summary: Summary,
    pub thresholds: Thresholds,
    pub verdicts: Verdicts,
    /// `RateUnachievable`, `MeasurementUnderflow`.
    pub flags: Vec<String>,
    pub resources: Vec<ResourceSample>,
}

impl RunReport {
    pub fn judge(
        simulator: &SimReport,
        counts: &Counts,
        summary: &Summary,
        depth: &[DepthSample],
        thresholds: &Thresholds,
    ) -> (Verdicts, Vec<String>, f64) {
        let measured_fraction = if counts.sent == 0 {
            1.0
        } else {
            counts.measured as f64 / counts.sent as f64
        };
        let measured = measured_fraction >= thresholds.min_measured_fraction;
        let queue_bounded = queue_bounded(depth, simulator.target_rate);
        let p99 = summary.t_transf_cep.is_some_and(|s| s.p99_ms < thresholds.p99_ms);
        let mut flags = Vec::new();
        if !simulator.rate_achieved {
            flags.push("RateUnachievable".to_string());
        }
        if measured_fraction < 0.9 {
            flags.push("MeasurementUnderflow".to_string());
        }
        let v = Verdicts {
            rate_sustained: simulator.rate_achieved,
            queue_bounded,
            measured,
            p99_within_threshold: p99,
            pass: simulator.rate_achieved && queue_bounded && measured && p99,
        };
        (v, flags, measured_fraction)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes `summary.json`, `per_second.csv`, `buckets.csv`,
/// `samples.csv` and `queue_depth.csv` into `dir`.
pub fn write_report(
    dir: &Path,
    report: &RunReport,
    samples: &[LatencySample],
    depth: &[DepthSample],
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut json = serde_json::to_vec_pretty(report).expect("reports serialize");
    json.push(b'\n');
    fs::write(dir.join("summary.json"), json)?;

    let mut w = csv::Writer::from_path(dir.join("per_second.csv"))?;
    w.write_record(["second", "count", "mean_t_transf_ms", "mean_t_transf_cep_ms"])?;
    for s in &report.summary.per_second {
        w.write_record([
            s.second.to_string(),
            s.count.to_string(),
            opt(s.t_transf_ms),
            opt(s.t_transf_cep_ms),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("buckets.csv"))?;
    w.write_record([
        "bucket",
        "lo_ms",
        "hi_ms",
        "t_transf",
        "t_transf_cep",
        "t_transf_cumulative",
        "t_transf_cep_cumulative",
    ])?;
    for b in &report.summary.buckets {
        w.write_record([
            b.label.clone(),
            b.lo_ms.to_string(),
            opt(b.hi_ms),
            b.t_transf.to_string(),
            b.t_transf_cep.to_string(),
            b.t_transf_cumulative.to_string(),
            b.t_transf_cep_cumulative.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("samples.csv"))?;
    w.write_record(["gen_ts", "transf_ts", "detect_ts"])?;
    for s in samples {
        let o = |x: Option<i64>| x.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([s.gen_ts.to_string(), o(s.transf_ts), o(s.detect_ts)])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("queue_depth.csv"))?;
    w.write_record(["t_ms", "depth"])?;
    for d in depth {
        w.write_record([d.t_ms.to_string(), d.depth.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads back `samples.csv`.
pub fn read_samples(path: &Path) -> Result<Vec<LatencySample>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<Option<i64>, HarnessError> {
            match rec.get(i).unwrap_or("") {
                "" => Ok(None),
                s => s
                    .parse()
                    .map(Some)
                    .map_err(|_| HarnessError::Run(format!("bad sample field `{s}`"))),
            }
        };
        out.push(LatencySample {
            gen_ts: num(0)?.ok_or_else(|| HarnessError::Run("sample without gen_ts".into()))?,
            transf_ts: num(1)?,
            detect_ts: num(2)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const MS: i64 = 1_000_000;

    fn s(gen: i64, transf: i64, detect: i64) -> LatencySample {
        LatencySample {
            gen_ts: gen,
            transf_ts: Some(gen + transf),
            detect_ts: Some(gen + detect),
        }
    }

    #[test]
    fn two_point_mean() {
        let sum = summarize(&[s(0, MS, 3 * MS), s(10, 3 * MS, 5 * MS)], &DEFAULT_BUCKETS_MS).unwrap();
        assert_eq!(sum.per_second.len(), 1);
        assert_eq!(sum.per_second[0].t_transf_ms, Some(2.0));
        assert_eq!(sum.per_second[0].t_transf_cep_ms, Some(4.0));
        assert_eq!(sum.t_transf.unwrap().sd_ms, 1.0);
    }

    #[test]
    fn equal_samples_have_zero_sd() {
        let xs: Vec<_> = (0..50).map(|i| s(i * MS, 7 * MS, 9 * MS)).collect();
        let st = summarize(&xs, &DEFAULT_BUCKETS_MS).unwrap().t_transf_cep.unwrap();
        assert_eq!((st.sd_ms, st.mean_ms, st.min_ms, st.max_ms, st.p99_ms), (0.0, 9.0, 9.0, 9.0, 9.0));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(summarize(&[], &DEFAULT_BUCKETS_MS), Err(HarnessError::EmptyInput)));
    }

    #[test]
    fn bucket_edges() {
        let b = &DEFAULT_BUCKETS_MS;
        assert_eq!(bucket_of(2 * MS - 1, b), 0);
        assert_eq!(bucket_of(2 * MS, b), 1);
        assert_eq!(bucket_of(40 * MS, b), 3);
        assert_eq!(bucket_of(160 * MS, b), 4);
        assert_eq!(bucket_of(-5, b), 0);
        assert_eq!(bucket_label(0.0, Some(2.0)), "<2ms");
        assert_eq!(bucket_label(10.0, Some(40.0)), "10-40ms");
        assert_eq!(bucket_label(160.0, None), ">=160ms");
    }

    fn brute(xs: &[f64]) -> (f64, f64, f64, f64) {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (min, max, mean, var.sqrt())
    }

    fn close(a: f64, b: f64) -> bool {
        a == b || (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
    }

    #[test]
    fn matches_brute_force_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<_> = (0..10_000)
            .map(|i| s(i * 700_000, rng.random_range(0..20 * MS), rng.random_range(0..200 * MS)))
            .collect();
        let sum = summarize(&xs, &DEFAULT_BUCKETS_MS).unwrap();
        let cep: Vec<f64> = xs.iter().map(|x| x.t_transf_cep().unwrap() as f64 / 1e6).collect();
        let (min, max, mean, sd) = brute(&cep);
        let st = sum.t_transf_cep.unwrap();
        assert!(close(st.min_ms, min) && close(st.max_ms, max));
        assert!(close(st.mean_ms, mean), "{} {}", st.mean_ms, mean);
        assert!(close(st.sd_ms, sd), "{} {}", st.sd_ms, sd);
        for p in &sum.per_second {
            let in_sec: Vec<f64> = xs
                .iter()
                .filter(|x| x.gen_ts / 1_000_000_000 == p.second as i64)
                .map(|x| x.t_transf().unwrap() as f64 / 1e6)
                .collect();
            assert_eq!(in_sec.len() as u64, p.count);
            assert!(close(p.t_transf_ms.unwrap(), brute(&in_sec).2));
        }
        let total: f64 = sum.buckets.iter().map(|b| b.t_transf_cep).sum();
        assert!((total - 1.0).abs() <= 1e-9);
        assert_eq!(sum.buckets.last().unwrap().t_transf_cep_cumulative, 1.0);
    }

    #[test]
    fn queue_growth_verdict() {
        let series = |d: &[usize]| -> Vec<DepthSample> {
            d.iter()
                .enumerate()
                .map(|(i, &depth)| DepthSample { t_ms: i as u64, depth })
                .collect()
        };
        assert!(queue_bounded(&series(&[10, 50, 20, 40, 30, 45]), 100.0));
        assert!(!queue_bounded(&series(&[0, 1_000, 2_000, 3_000, 4_000, 5_000]), 1_000.0));
        // Small absolute backlogs never fail.
        assert!(queue_bounded(&series(&[0, 0, 0, 0, 0, 90]), 1_000.0));
    }
}
