//! CPU and resident memory of pipeline processes, read from `/proc`.
//! Informational only; platforms without `/proc` yield no samples.

use std::fs;
use std::time::Instant;

use serde::{Deserialize, Serialize};

/// Kernel clock ticks per second for `/proc/<pid>/stat` times.
const CLK_TCK: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResourceSample {
    pub t_s: f64,
    pub process: String,
    pub cpu_percent: f64,
    pub rss_kb: u64,
}

/// utime + stime in ticks. The command name may contain spaces, so fields
/// are counted from the closing parenthesis.
pub fn cpu_ticks(stat: &str) -> Option<u64> {
    let rest = &stat[stat.rfind(')')? + 1..];
    let fields: Vec<&str> = rest.split_whitespace().collect();
    // After the name: state is field 3, utime 14 and stime 15.
    let utime: u64 = fields.get(11)?.parse().ok()?;
    let stime: u64 = fields.get(12)?.parse().ok()?;
    Some(utime + stime)
}

pub fn rss_kb(status: &str) -> Option<u64> {
    status
        .lines()
        .find_map(|l| l.strip_prefix("VmRSS:"))
        .and_then(|v| v.split_whitespace().next())
        .and_then(|v| v.parse().ok())
}

/// Turns successive reads into CPU percentages.
pub struct Sampler {
    start: Instant,
    procs: Vec<(String, u32, Option<(Instant, u64)>)>,
}

impl Sampler {
    pub fn new(procs: Vec<(String, u32)>) -> Self {
        Self {
            start: Instant::now(),
            procs: procs.into_iter().map(|(n, p)| (n, p, None)).collect(),
        }
    }

    pub fn sample(&mut self) -> Vec<ResourceSample> {
        let now = Instant::now();
        let mut out = Vec::new();
        for (name, pid, last) in &mut self.procs {
            let Ok(stat) = fs::read_to_string(format!("/proc/{pid}/stat")) else {
                continue;
            };
            let Some(ticks) = cpu_ticks(&stat) else { continue };
            let rss = fs::read_to_string(format!("/proc/{pid}/status"))
                .ok()
                .and_then(|s| rss_kb(&s))
                .unwrap_or(0);
            if let Some((t0, ticks0)) = *last {
                let wall = now.duration_since(t0).as_secs_f64();
                if wall > 0.0 {
                    out.push(ResourceSample {
                        t_s: now.duration_since(self.start).as_secs_f64(),
                        process: name.clone(),
                        cpu_percent: (ticks.saturating_sub(ticks0)) as f64 / CLK_TCK / wall * 100.0,
                        rss_kb: rss,
                    });
                }
            }
            *last = Some((now, ticks));
        }
        out
    }
}
